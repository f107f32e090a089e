#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "deltaseq/common.hpp"
#include "deltaseq/logistic.hpp"
#include "deltaseq/rng.hpp"

namespace deltaseq::models {

using Eigen::ArrayXXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class CellType { lstm, gru };

inline std::string cell_name(CellType c) { return c == CellType::lstm ? "lstm" : "gru"; }
inline CellType cell_from_name(const std::string& s) {
  if (s == "lstm") return CellType::lstm;
  if (s == "gru") return CellType::gru;
  throw ConfigError("unknown cell type: " + s);
}

inline int gate_blocks(CellType c) { return c == CellType::lstm ? 4 : 3; }

/// Recurrent cell weights plus the two heads. Gate block order in w_x / w_h /
/// b: LSTM [input, forget, candidate, output]; GRU [update, reset, candidate].
/// The GRU update convention is h_t = (1-z) * h_{t-1} + z * n, so a strongly
/// negative update bias carries the state.
struct RecurrentParams {
  CellType cell = CellType::lstm;
  int input_dim = 0;
  int hidden_dim = 0;
  int pre_dim = 0;  // pretrain head output width |L|

  MatrixXd w_x;  // (G*h) x d
  MatrixXd w_h;  // (G*h) x h
  VectorXd b;    // G*h
  VectorXd task_w;  // h
  double task_b = 0.0;
  MatrixXd pre_w;  // pre_dim x h
  VectorXd pre_b;  // pre_dim

  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(w_x);
    fn(w_h);
    fn(b);
    fn(task_w);
    fn(task_b);
    fn(pre_w);
    fn(pre_b);
  }
};

/// Gradient container with the same shapes as RecurrentParams.
struct Gradients {
  MatrixXd w_x, w_h;
  VectorXd b;
  VectorXd task_w;
  double task_b = 0.0;
  MatrixXd pre_w;
  VectorXd pre_b;

  static Gradients zeros_like(const RecurrentParams& p) {
    Gradients g;
    g.w_x = MatrixXd::Zero(p.w_x.rows(), p.w_x.cols());
    g.w_h = MatrixXd::Zero(p.w_h.rows(), p.w_h.cols());
    g.b = VectorXd::Zero(p.b.size());
    g.task_w = VectorXd::Zero(p.task_w.size());
    g.task_b = 0.0;
    g.pre_w = MatrixXd::Zero(p.pre_w.rows(), p.pre_w.cols());
    g.pre_b = VectorXd::Zero(p.pre_b.size());
    return g;
  }

  double squared_norm() const {
    return w_x.squaredNorm() + w_h.squaredNorm() + b.squaredNorm() + task_w.squaredNorm() +
           task_b * task_b + pre_w.squaredNorm() + pre_b.squaredNorm();
  }

  void scale(double s) {
    w_x *= s;
    w_h *= s;
    b *= s;
    task_w *= s;
    task_b *= s;
    pre_w *= s;
    pre_b *= s;
  }

  /// Global-norm clipping, applied after batch accumulation.
  void clip_norm(double max_norm) {
    double n = std::sqrt(squared_norm());
    if (n > max_norm && n > 0.0) scale(max_norm / n);
  }
};

/// Uniform(+-1/sqrt(fan_in)) init; LSTM forget-gate bias starts at +1.
inline RecurrentParams init_params(CellType cell, int input_dim, int hidden_dim, int pre_dim,
                                   Rng& rng) {
  RecurrentParams p;
  p.cell = cell;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.pre_dim = pre_dim;
  const int g = gate_blocks(cell) * hidden_dim;
  auto u = [&](double bound) { return rng.uniform(-bound, bound); };
  double bx = 1.0 / std::sqrt(static_cast<double>(input_dim));
  double bh = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  p.w_x = MatrixXd::Zero(g, input_dim);
  for (int i = 0; i < p.w_x.rows(); ++i)
    for (int j = 0; j < p.w_x.cols(); ++j) p.w_x(i, j) = u(bx);
  p.w_h = MatrixXd::Zero(g, hidden_dim);
  for (int i = 0; i < p.w_h.rows(); ++i)
    for (int j = 0; j < p.w_h.cols(); ++j) p.w_h(i, j) = u(bh);
  p.b = VectorXd::Zero(g);
  if (cell == CellType::lstm) p.b.segment(hidden_dim, hidden_dim).setConstant(1.0);
  p.task_w = VectorXd::Zero(hidden_dim);
  for (int i = 0; i < hidden_dim; ++i) p.task_w[i] = u(bh);
  p.task_b = 0.0;
  p.pre_w = MatrixXd::Zero(pre_dim, hidden_dim);
  for (int i = 0; i < p.pre_w.rows(); ++i)
    for (int j = 0; j < p.pre_w.cols(); ++j) p.pre_w(i, j) = u(bh);
  p.pre_b = VectorXd::Zero(pre_dim);
  return p;
}

/// One mini-batch: per-window input matrices (B x d); task labels; optional
/// per-window pretraining targets (B x pre_dim).
struct Batch {
  std::vector<MatrixXd> x;
  VectorXd y;
  std::vector<MatrixXd> delta;

  int windows() const { return static_cast<int>(x.size()); }
  int rows() const { return x.empty() ? 0 : static_cast<int>(x[0].rows()); }
};

struct ForwardCache {
  std::vector<MatrixXd> h;      // K+1 entries, h[0] = 0
  std::vector<MatrixXd> c;      // LSTM only, K+1 entries
  std::vector<MatrixXd> gates;  // K entries, B x (G*h)
};

/// Run the recurrence over all windows of the batch, caching what BPTT needs.
inline ForwardCache rnn_forward(const RecurrentParams& p, const std::vector<MatrixXd>& xs) {
  const int K = static_cast<int>(xs.size());
  if (K == 0) throw DataError("rnn_forward: empty sequence");
  const int B = static_cast<int>(xs[0].rows());
  const int h = p.hidden_dim;
  for (const auto& x : xs)
    if (x.cols() != p.input_dim || static_cast<int>(x.rows()) != B)
      throw DataError("rnn_forward: input dimension mismatch");

  ForwardCache cc;
  cc.h.assign(static_cast<std::size_t>(K + 1), MatrixXd::Zero(B, h));
  if (p.cell == CellType::lstm) cc.c.assign(static_cast<std::size_t>(K + 1), MatrixXd::Zero(B, h));
  cc.gates.assign(static_cast<std::size_t>(K), MatrixXd());

  for (int t = 0; t < K; ++t) {
    const MatrixXd& hp = cc.h[static_cast<std::size_t>(t)];
    if (p.cell == CellType::lstm) {
      MatrixXd a = xs[static_cast<std::size_t>(t)] * p.w_x.transpose() + hp * p.w_h.transpose();
      a.rowwise() += p.b.transpose();
      ArrayXXd i = a.leftCols(h).array().unaryExpr([](double v) { return sigmoid(v); });
      ArrayXXd f = a.middleCols(h, h).array().unaryExpr([](double v) { return sigmoid(v); });
      ArrayXXd g = a.middleCols(2 * h, h).array().tanh();
      ArrayXXd o = a.rightCols(h).array().unaryExpr([](double v) { return sigmoid(v); });
      ArrayXXd cn = f * cc.c[static_cast<std::size_t>(t)].array() + i * g;
      cc.c[static_cast<std::size_t>(t + 1)] = cn.matrix();
      cc.h[static_cast<std::size_t>(t + 1)] = (o * cn.tanh()).matrix();
      MatrixXd gates(B, 4 * h);
      gates.leftCols(h) = i.matrix();
      gates.middleCols(h, h) = f.matrix();
      gates.middleCols(2 * h, h) = g.matrix();
      gates.rightCols(h) = o.matrix();
      cc.gates[static_cast<std::size_t>(t)] = std::move(gates);
    } else {
      MatrixXd a = xs[static_cast<std::size_t>(t)] * p.w_x.transpose();
      a.rowwise() += p.b.transpose();
      // update and reset see h_{t-1} directly; candidate sees r * h_{t-1}
      a.leftCols(2 * h) += hp * p.w_h.topRows(2 * h).transpose();
      ArrayXXd z = a.leftCols(h).array().unaryExpr([](double v) { return sigmoid(v); });
      ArrayXXd r = a.middleCols(h, h).array().unaryExpr([](double v) { return sigmoid(v); });
      MatrixXd rh = (r * hp.array()).matrix();
      ArrayXXd n =
          (a.rightCols(h) + rh * p.w_h.bottomRows(h).transpose()).array().tanh();
      cc.h[static_cast<std::size_t>(t + 1)] =
          ((1.0 - z) * hp.array() + z * n).matrix();
      MatrixXd gates(B, 3 * h);
      gates.leftCols(h) = z.matrix();
      gates.middleCols(h, h) = r.matrix();
      gates.rightCols(h) = n.matrix();
      cc.gates[static_cast<std::size_t>(t)] = std::move(gates);
    }
  }
  return cc;
}

/// Task-head logits (or regression outputs) from the final hidden state.
inline VectorXd task_outputs(const RecurrentParams& p, const ForwardCache& cc) {
  return (cc.h.back() * p.task_w).array() + p.task_b;
}

/// Pretrain-head outputs at one window.
inline MatrixXd pre_outputs_at(const RecurrentParams& p, const ForwardCache& cc, int t) {
  MatrixXd out = cc.h[static_cast<std::size_t>(t + 1)] * p.pre_w.transpose();
  out.rowwise() += p.pre_b.transpose();
  return out;
}

namespace detail {

/// Core BPTT pass: dh_inject[t] is dLoss/dh_{t+1} coming from the heads.
inline void backprop_through_time(const RecurrentParams& p, const std::vector<MatrixXd>& xs,
                                  const ForwardCache& cc,
                                  const std::vector<MatrixXd>& dh_inject, Gradients& g) {
  const int K = static_cast<int>(xs.size());
  const int h = p.hidden_dim;
  const int B = static_cast<int>(xs[0].rows());
  MatrixXd dh = MatrixXd::Zero(B, h);
  MatrixXd dc = MatrixXd::Zero(B, h);

  for (int t = K - 1; t >= 0; --t) {
    if (dh_inject[static_cast<std::size_t>(t)].size())
      dh += dh_inject[static_cast<std::size_t>(t)];
    const MatrixXd& hp = cc.h[static_cast<std::size_t>(t)];
    const MatrixXd& gates = cc.gates[static_cast<std::size_t>(t)];

    if (p.cell == CellType::lstm) {
      ArrayXXd i = gates.leftCols(h).array();
      ArrayXXd f = gates.middleCols(h, h).array();
      ArrayXXd gg = gates.middleCols(2 * h, h).array();
      ArrayXXd o = gates.rightCols(h).array();
      ArrayXXd cn = cc.c[static_cast<std::size_t>(t + 1)].array();
      ArrayXXd tc = cn.tanh();

      ArrayXXd d_o = dh.array() * tc;
      dc.array() += dh.array() * o * (1.0 - tc.square());
      ArrayXXd d_i = dc.array() * gg;
      ArrayXXd d_f = dc.array() * cc.c[static_cast<std::size_t>(t)].array();
      ArrayXXd d_g = dc.array() * i;
      MatrixXd dc_prev = (dc.array() * f).matrix();

      MatrixXd da(B, 4 * h);
      da.leftCols(h) = (d_i * i * (1.0 - i)).matrix();
      da.middleCols(h, h) = (d_f * f * (1.0 - f)).matrix();
      da.middleCols(2 * h, h) = (d_g * (1.0 - gg.square())).matrix();
      da.rightCols(h) = (d_o * o * (1.0 - o)).matrix();

      g.w_x += da.transpose() * xs[static_cast<std::size_t>(t)];
      g.w_h += da.transpose() * hp;
      g.b += da.colwise().sum().transpose();
      dh = da * p.w_h;
      dc = dc_prev;
    } else {
      ArrayXXd z = gates.leftCols(h).array();
      ArrayXXd r = gates.middleCols(h, h).array();
      ArrayXXd n = gates.rightCols(h).array();

      ArrayXXd d_z = dh.array() * (n - hp.array());
      ArrayXXd d_n = dh.array() * z;
      MatrixXd dh_prev = (dh.array() * (1.0 - z)).matrix();

      MatrixXd dan = (d_n * (1.0 - n.square())).matrix();
      MatrixXd drh = dan * p.w_h.bottomRows(h);
      ArrayXXd d_r = drh.array() * hp.array();
      dh_prev.array() += drh.array() * r;

      MatrixXd daz = (d_z * z * (1.0 - z)).matrix();
      MatrixXd dar = (d_r * r * (1.0 - r)).matrix();

      MatrixXd da(B, 3 * h);
      da.leftCols(h) = daz;
      da.middleCols(h, h) = dar;
      da.rightCols(h) = dan;
      g.w_x += da.transpose() * xs[static_cast<std::size_t>(t)];
      g.b += da.colwise().sum().transpose();
      g.w_h.topRows(h) += daz.transpose() * hp;
      g.w_h.middleRows(h, h) += dar.transpose() * hp;
      g.w_h.bottomRows(h) += dan.transpose() * (r * hp.array()).matrix();
      dh_prev += daz * p.w_h.topRows(h) + dar * p.w_h.middleRows(h, h);
      dh = dh_prev;
    }
  }
}

}  // namespace detail

enum class TaskLoss { cross_entropy, mse };

/// Mean task loss of a batch plus exact gradients for every parameter.
/// Gradients of the unused pretrain head are zero.
inline std::pair<double, Gradients> task_loss_and_gradients(const RecurrentParams& p,
                                                            const Batch& batch, TaskLoss loss) {
  const int B = batch.rows();
  const int K = batch.windows();
  ForwardCache cc = rnn_forward(p, batch.x);
  VectorXd zout = task_outputs(p, cc);

  double total = 0.0;
  VectorXd dz(B);
  for (int i = 0; i < B; ++i) {
    if (loss == TaskLoss::cross_entropy) {
      double pr = clamp_prob(sigmoid(zout[i]));
      total += -(batch.y[i] * std::log(pr) + (1.0 - batch.y[i]) * std::log(1.0 - pr));
      dz[i] = (sigmoid(zout[i]) - batch.y[i]) / B;
    } else {
      double r = zout[i] - batch.y[i];
      total += r * r;
      dz[i] = 2.0 * r / B;
    }
  }
  total /= B;
  if (!std::isfinite(total)) throw DataError("task loss is not finite");

  Gradients g = Gradients::zeros_like(p);
  g.task_w = cc.h.back().transpose() * dz;
  g.task_b = dz.sum();
  std::vector<MatrixXd> inject(static_cast<std::size_t>(K));
  inject[static_cast<std::size_t>(K - 1)] = dz * p.task_w.transpose();
  detail::backprop_through_time(p, batch.x, cc, inject, g);
  return {total, g};
}

/// Mean squared pretraining loss over every (sample, window, lab) cell, plus
/// exact gradients. Task-head gradients are zero; labels are never read.
inline std::pair<double, Gradients> pretrain_loss_and_gradients(const RecurrentParams& p,
                                                                const Batch& batch) {
  const int B = batch.rows();
  const int K = batch.windows();
  if (static_cast<int>(batch.delta.size()) != K)
    throw DataError("pretrain: delta targets missing");
  ForwardCache cc = rnn_forward(p, batch.x);

  double denom = static_cast<double>(B) * K * p.pre_dim;
  double total = 0.0;
  Gradients g = Gradients::zeros_like(p);
  std::vector<MatrixXd> inject(static_cast<std::size_t>(K));
  for (int t = 0; t < K; ++t) {
    MatrixXd out = pre_outputs_at(p, cc, t);
    MatrixXd resid = out - batch.delta[static_cast<std::size_t>(t)];
    total += resid.squaredNorm();
    MatrixXd dout = (2.0 / denom) * resid;
    g.pre_w += dout.transpose() * cc.h[static_cast<std::size_t>(t + 1)];
    g.pre_b += dout.colwise().sum().transpose();
    inject[static_cast<std::size_t>(t)] = dout * p.pre_w;
  }
  total /= denom;
  if (!std::isfinite(total)) throw DataError("pretrain loss is not finite");
  detail::backprop_through_time(p, batch.x, cc, inject, g);
  return {total, g};
}

/// Forward-only scoring of one sample (K x d input matrix): task-head output
/// (logit for classification, value for regression).
inline double score_sample(const RecurrentParams& p, const MatrixXd& input) {
  std::vector<MatrixXd> xs;
  xs.reserve(static_cast<std::size_t>(input.rows()));
  for (int t = 0; t < input.rows(); ++t) xs.push_back(input.row(t));
  ForwardCache cc = rnn_forward(p, xs);
  return task_outputs(p, cc)[0];
}

}  // namespace deltaseq::models
