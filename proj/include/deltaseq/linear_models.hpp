#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "deltaseq/common.hpp"
#include "deltaseq/logistic.hpp"
#include "deltaseq/stats.hpp"

namespace deltaseq::models {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Fitted linear predictor with coefficient covariance (intercept first in cov).
struct LinearModel {
  VectorXd coef;
  double intercept = 0.0;
  MatrixXd cov;  // (d+1) x (d+1)
  bool logistic = false;

  double linear(const VectorXd& x) const { return intercept + coef.dot(x); }
  double predict(const VectorXd& x) const {
    double z = linear(x);
    return logistic ? sigmoid(z) : z;
  }
  double se(int j) const { return std::sqrt(std::max(0.0, cov(j + 1, j + 1))); }
};

/// Ridge-penalized logistic regression (intercept unpenalized), with
/// covariance for Wald inference.
inline LinearModel fit_glm(const MatrixXd& x, const VectorXd& y, double ridge = 1e-6) {
  LogisticOptions opts;
  opts.ridge = ridge;
  LogisticFit f = fit_logistic(x, y, opts);
  LinearModel m;
  m.coef = f.coef;
  m.intercept = f.intercept;
  m.cov = f.cov;
  m.logistic = true;
  return m;
}

/// Ordinary least squares via normal equations; falls back to a small ridge
/// when the crossproduct is rank deficient.
inline LinearModel fit_lm(const MatrixXd& x, const VectorXd& y) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  if (n < 1) throw DataError("fit_lm: empty data");
  if (!x.allFinite() || !y.allFinite()) throw DataError("fit_lm: non-finite input");

  MatrixXd xi(n, d + 1);
  xi.col(0).setOnes();
  xi.rightCols(d) = x;
  MatrixXd xtx = xi.transpose() * xi;
  VectorXd xty = xi.transpose() * y;
  VectorXd beta = xtx.ldlt().solve(xty);
  double resid = (xtx * beta - xty).norm();
  if (!beta.allFinite() || resid > 1e-6 * std::max(1.0, xty.norm())) {
    MatrixXd reg = xtx;
    reg.diagonal().array() += 1e-8 * std::max(1.0, xtx.diagonal().mean());
    beta = reg.ldlt().solve(xty);
    xtx = reg;
  }

  LinearModel m;
  m.intercept = beta[0];
  m.coef = beta.tail(d);
  double dof = std::max(1.0, static_cast<double>(n - d - 1));
  double sigma2 = (y - xi * beta).squaredNorm() / dof;
  m.cov = sigma2 * xtx.ldlt().solve(MatrixXd::Identity(d + 1, d + 1));
  m.logistic = false;
  return m;
}

/// Two-sided Wald p-values for the requested coefficient indices.
inline std::vector<double> wald_pvalues(const LinearModel& m, const std::vector<int>& indices) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (int j : indices) {
    if (j < 0 || j >= m.coef.size()) throw ConfigError("wald_pvalues: index out of range");
    double se = m.se(j);
    double z = se > 0.0 ? m.coef[j] / se : 0.0;
    out.push_back(wald_pvalue(z));
  }
  return out;
}

/// Random-intercept mixed model fitted by penalized alternating updates:
/// fixed effects by offset IRLS (or OLS), per-group intercepts by Newton
/// steps under a Gaussian penalty, and the variance component by method of
/// moments on the intercept estimates with their posterior-variance
/// correction.
struct MixedModel {
  LinearModel fixed;
  std::map<std::string, double> intercepts;  // per patient
  double intercept_var = 0.0;

  double predict(const VectorXd& x, const std::string& group) const {
    double u = 0.0;
    auto it = intercepts.find(group);
    if (it != intercepts.end()) u = it->second;
    double z = fixed.intercept + fixed.coef.dot(x) + u;
    return fixed.logistic ? sigmoid(z) : z;
  }
};

inline MixedModel fit_random_intercept(const MatrixXd& x, const VectorXd& y,
                                       const std::vector<std::string>& group_ids,
                                       bool logistic = true, double ridge = 1e-6,
                                       double fixed_intercept_var = 0.0) {
  const int n = static_cast<int>(x.rows());
  if (static_cast<int>(group_ids.size()) != n)
    throw DataError("fit_random_intercept: group id count mismatch");
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) groups[group_ids[static_cast<std::size_t>(i)]].push_back(i);
  if (groups.size() < 2) throw DataError("fit_random_intercept: need at least 2 groups");

  std::map<std::string, double> u;
  for (const auto& [g, _] : groups) u[g] = 0.0;
  double var = fixed_intercept_var > 0.0 ? fixed_intercept_var : 1.0;

  MixedModel mm;
  VectorXd offset = VectorXd::Zero(n);
  double resid_var = 1.0;
  for (int outer = 0; outer < 25; ++outer) {
    for (const auto& [g, rows] : groups)
      for (int i : rows) offset[i] = u[g];

    if (logistic) {
      LogisticOptions opts;
      opts.ridge = ridge;
      opts.offset = offset;
      LogisticFit f = fit_logistic(x, y, opts);
      mm.fixed.coef = f.coef;
      mm.fixed.intercept = f.intercept;
      mm.fixed.cov = f.cov;
      mm.fixed.logistic = true;
    } else {
      LinearModel f = fit_lm(x, y - offset);
      mm.fixed = f;
      resid_var = 0.0;
      for (int i = 0; i < n; ++i) {
        double r = y[i] - offset[i] - mm.fixed.linear(x.row(i).transpose());
        resid_var += r * r;
      }
      resid_var = std::max(resid_var / n, 1e-10);
    }

    // Intercept updates with Gaussian prior N(0, var), plus posterior variance.
    double sum_u2 = 0.0, sum_v = 0.0;
    for (auto& [g, rows] : groups) {
      double ui = u[g];
      double info = 0.0;
      if (logistic) {
        for (int newton = 0; newton < 3; ++newton) {
          double grad = -ui / var;
          info = 1.0 / var;
          for (int i : rows) {
            double z = mm.fixed.intercept + mm.fixed.coef.dot(x.row(i).transpose()) + ui;
            double p = sigmoid(z);
            grad += y[i] - p;
            info += std::max(p * (1.0 - p), 1e-10);
          }
          ui += grad / info;
        }
      } else {
        double sr = 0.0;
        for (int i : rows) sr += y[i] - mm.fixed.linear(x.row(i).transpose());
        info = static_cast<double>(rows.size()) / resid_var + 1.0 / var;
        ui = (sr / resid_var) / info;
      }
      u[g] = ui;
      sum_u2 += ui * ui;
      sum_v += 1.0 / info;
    }
    if (fixed_intercept_var > 0.0) {
      if (outer >= 2) break;
      continue;
    }
    double new_var =
        std::clamp((sum_u2 + sum_v) / static_cast<double>(groups.size()), 1e-8, 1e3);
    bool converged = std::abs(new_var - var) < 1e-6 * std::max(1.0, var);
    var = new_var;
    if (converged && outer >= 2) break;
  }

  mm.intercepts = std::move(u);
  mm.intercept_var = var;
  return mm;
}

}  // namespace deltaseq::models
