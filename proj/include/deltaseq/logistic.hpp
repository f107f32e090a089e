#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "deltaseq/common.hpp"

namespace deltaseq {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// Probability clamp used inside cross-entropy losses.
inline double clamp_prob(double p) { return std::min(1.0 - 1e-12, std::max(1e-12, p)); }

struct LogisticOptions {
  double ridge = 1e-6;   // L2 on slopes; intercept unpenalized
  int max_iter = 100;
  double tol = 1e-9;
  VectorXd offset;       // optional per-row offset added to the linear predictor
};

struct LogisticFit {
  VectorXd coef;      // slopes
  double intercept = 0.0;
  MatrixXd cov;       // (d+1) x (d+1), intercept first
  double loglik = 0.0;
  int iters = 0;

  double linear(const VectorXd& x) const { return intercept + coef.dot(x); }
  double prob(const VectorXd& x) const { return sigmoid(linear(x)); }
};

/// Penalized logistic log-likelihood (the IRLS objective).
inline double logistic_objective(const MatrixXd& x, const VectorXd& y, const VectorXd& beta,
                                 double intercept, double ridge, const VectorXd& offset) {
  double ll = 0.0;
  for (int i = 0; i < x.rows(); ++i) {
    double z = intercept + x.row(i).dot(beta) + (offset.size() ? offset[i] : 0.0);
    // log sigma(z) if y=1 else log(1 - sigma(z)), in stable form
    double a = std::max(z, 0.0);
    ll += y[i] * z - (a + std::log(std::exp(-a) + std::exp(z - a)));
  }
  return ll - 0.5 * ridge * beta.squaredNorm();
}

/// Maximum-likelihood logistic regression by damped IRLS (Newton with step
/// halving). Throws DataError on single-class labels or non-finite inputs.
inline LogisticFit fit_logistic(const MatrixXd& x, const VectorXd& y,
                                const LogisticOptions& opts = {}) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  if (n < 2) throw DataError("fit_logistic: need at least 2 rows");
  if (!x.allFinite() || !y.allFinite()) throw DataError("fit_logistic: non-finite input");
  double ysum = y.sum();
  if (ysum <= 0.0 || ysum >= static_cast<double>(n))
    throw DataError("fit_logistic: single-class labels (degenerate fit)");
  if (opts.offset.size() && opts.offset.size() != n)
    throw DataError("fit_logistic: offset length mismatch");

  VectorXd beta = VectorXd::Zero(d);
  double intercept = std::log(ysum / (n - ysum));  // null-model start
  double obj = logistic_objective(x, y, beta, intercept, opts.ridge, opts.offset);

  MatrixXd h(d + 1, d + 1);
  VectorXd g(d + 1);
  VectorXd p(n), w(n);
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    for (int i = 0; i < n; ++i) {
      double z = intercept + x.row(i).dot(beta) + (opts.offset.size() ? opts.offset[i] : 0.0);
      p[i] = sigmoid(z);
      w[i] = std::max(p[i] * (1.0 - p[i]), 1e-10);
    }
    VectorXd r = y - p;
    g[0] = r.sum();
    g.tail(d) = x.transpose() * r - opts.ridge * beta;

    h(0, 0) = w.sum();
    VectorXd xw = x.transpose() * w;
    h.block(0, 1, 1, d) = xw.transpose();
    h.block(1, 0, d, 1) = xw;
    h.block(1, 1, d, d) = x.transpose() * w.asDiagonal() * x;
    h.block(1, 1, d, d).diagonal().array() += opts.ridge;

    if (g.lpNorm<Eigen::Infinity>() < opts.tol * std::max(1.0, static_cast<double>(n))) break;

    VectorXd step = h.ldlt().solve(g);
    if (!step.allFinite()) throw DataError("fit_logistic: singular Hessian");

    double scale = 1.0;
    double new_obj = obj;
    VectorXd nb;
    double ni = intercept;
    for (int half = 0; half < 40; ++half) {
      nb = beta + scale * step.tail(d);
      ni = intercept + scale * step[0];
      new_obj = logistic_objective(x, y, nb, ni, opts.ridge, opts.offset);
      if (new_obj >= obj - 1e-12) break;
      scale *= 0.5;
    }
    double improved = new_obj - obj;
    beta = nb;
    intercept = ni;
    obj = new_obj;
    if (std::abs(improved) < opts.tol) { ++it; break; }
  }

  LogisticFit fit;
  fit.coef = beta;
  fit.intercept = intercept;
  fit.loglik = obj + 0.5 * opts.ridge * beta.squaredNorm();
  fit.iters = it;
  // Covariance from the final curvature.
  for (int i = 0; i < n; ++i) {
    double z = intercept + x.row(i).dot(beta) + (opts.offset.size() ? opts.offset[i] : 0.0);
    p[i] = sigmoid(z);
    w[i] = std::max(p[i] * (1.0 - p[i]), 1e-10);
  }
  h(0, 0) = w.sum();
  VectorXd xw = x.transpose() * w;
  h.block(0, 1, 1, d) = xw.transpose();
  h.block(1, 0, d, 1) = xw;
  h.block(1, 1, d, d) = x.transpose() * w.asDiagonal() * x;
  h.block(1, 1, d, d).diagonal().array() += opts.ridge;
  fit.cov = h.ldlt().solve(MatrixXd::Identity(d + 1, d + 1));
  return fit;
}

}  // namespace deltaseq
