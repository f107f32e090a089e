#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltaseq/common.hpp"
#include "deltaseq/rnn.hpp"
#include "deltaseq/rng.hpp"

namespace deltaseq::models {

using nlohmann::json;

struct TrainConfig {
  int hidden_dim = 32;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int max_epochs = 100;
  int batch_size = 64;
  double weight_decay = 0.0;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  int patience = 10;
  double val_fraction = 0.1;
  bool freeze_recurrent = false;  // finetune option; off by default

  void validate() const {
    if (hidden_dim < 1 || batch_size < 1 || max_epochs < 0 || patience < 1)
      throw ConfigError("invalid training configuration");
    if (!(learning_rate > 0.0) || !(clip_norm > 0.0) || weight_decay < 0.0)
      throw ConfigError("invalid training configuration");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
      throw ConfigError("val_fraction must be in [0, 1)");
  }
};

/// Sequence dataset for training: one K x d input matrix per sample, task
/// labels, and (for pretraining) one K x pre_dim target matrix per sample.
struct SequenceData {
  std::vector<MatrixXd> inputs;
  VectorXd labels;                      // empty for pretraining
  std::vector<MatrixXd> delta_targets;  // empty for task training

  int size() const { return static_cast<int>(inputs.size()); }
  int windows() const { return inputs.empty() ? 0 : static_cast<int>(inputs[0].rows()); }
  int feature_dim() const { return inputs.empty() ? 0 : static_cast<int>(inputs[0].cols()); }
};

namespace detail {

inline Batch gather_batch(const SequenceData& data, const std::vector<int>& idx, bool with_y,
                          bool with_delta) {
  Batch b;
  const int K = data.windows();
  const int B = static_cast<int>(idx.size());
  b.x.assign(static_cast<std::size_t>(K), MatrixXd(B, data.feature_dim()));
  for (int t = 0; t < K; ++t)
    for (int i = 0; i < B; ++i)
      b.x[static_cast<std::size_t>(t)].row(i) =
          data.inputs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])].row(t);
  if (with_y) {
    b.y.resize(B);
    for (int i = 0; i < B; ++i) b.y[i] = data.labels[idx[static_cast<std::size_t>(i)]];
  }
  if (with_delta) {
    int pd = static_cast<int>(data.delta_targets[0].cols());
    b.delta.assign(static_cast<std::size_t>(K), MatrixXd(B, pd));
    for (int t = 0; t < K; ++t)
      for (int i = 0; i < B; ++i)
        b.delta[static_cast<std::size_t>(t)].row(i) =
            data.delta_targets[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])].row(t);
  }
  return b;
}

inline void shuffle(std::vector<int>& idx, Rng& rng) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
    int j = rng.uniform_int(i + 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
}

struct Momentum {
  Gradients v;
  bool init = false;

  void step(RecurrentParams& p, const Gradients& g, const TrainConfig& cfg,
            bool skip_recurrent) {
    if (!init) {
      v = Gradients::zeros_like(p);
      init = true;
    }
    auto upd = [&](auto& vel, const auto& grad, auto& param) {
      vel = cfg.momentum * vel - cfg.learning_rate * (grad + cfg.weight_decay * param);
      param += vel;
    };
    if (!skip_recurrent) {
      upd(v.w_x, g.w_x, p.w_x);
      upd(v.w_h, g.w_h, p.w_h);
      upd(v.b, g.b, p.b);
    }
    upd(v.task_w, g.task_w, p.task_w);
    v.task_b =
        cfg.momentum * v.task_b - cfg.learning_rate * (g.task_b + cfg.weight_decay * p.task_b);
    p.task_b += v.task_b;
    upd(v.pre_w, g.pre_w, p.pre_w);
    upd(v.pre_b, g.pre_b, p.pre_b);
  }
};

inline double eval_loss(const RecurrentParams& p, const SequenceData& data,
                        const std::vector<int>& idx, TaskLoss loss, bool pretrain_mode) {
  if (idx.empty()) return 0.0;
  Batch b = gather_batch(data, idx, !pretrain_mode, pretrain_mode);
  if (pretrain_mode) {
    ForwardCache cc = rnn_forward(p, b.x);
    double total = 0.0;
    double denom = static_cast<double>(b.rows()) * b.windows() * p.pre_dim;
    for (int t = 0; t < b.windows(); ++t)
      total += (pre_outputs_at(p, cc, t) - b.delta[static_cast<std::size_t>(t)]).squaredNorm();
    return total / denom;
  }
  ForwardCache cc = rnn_forward(p, b.x);
  VectorXd z = task_outputs(p, cc);
  double total = 0.0;
  for (int i = 0; i < z.size(); ++i) {
    if (loss == TaskLoss::cross_entropy) {
      double pr = clamp_prob(sigmoid(z[i]));
      total += -(b.y[i] * std::log(pr) + (1.0 - b.y[i]) * std::log(1.0 - pr));
    } else {
      double r = z[i] - b.y[i];
      total += r * r;
    }
  }
  return total / static_cast<double>(z.size());
}

}  // namespace detail

struct TrainSummary {
  double best_val_loss = 0.0;
  int epochs_run = 0;
  std::vector<double> val_history;
};

/// Mini-batch SGD with momentum, gradient clipping, a seeded validation split
/// and early stopping on validation loss; the best-epoch weights are kept.
/// pretrain_mode switches the objective to the window-wise delta MSE and
/// never touches labels.
inline TrainSummary train_loop(RecurrentParams& params, const SequenceData& data,
                               const TrainConfig& cfg, TaskLoss loss, bool pretrain_mode,
                               bool skip_recurrent_updates = false) {
  cfg.validate();
  if (data.size() == 0) throw DataError("train: empty dataset");
  if (pretrain_mode && data.delta_targets.empty())
    throw DataError("pretrain: delta targets required");
  if (!pretrain_mode && data.labels.size() != data.size())
    throw DataError("train: label count mismatch");

  Rng rng(cfg.seed ^ 0x7261696eULL);
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  detail::shuffle(order, rng);
  int n_val = static_cast<int>(cfg.val_fraction * data.size());
  if (cfg.val_fraction > 0.0 && n_val == 0 && data.size() >= 10) n_val = 1;
  std::vector<int> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int> train_idx(order.begin() + n_val, order.end());
  if (train_idx.empty()) throw DataError("train: empty training split");
  // Fall back to the training loss for early stopping when no validation rows.
  const std::vector<int>& monitor = val_idx.empty() ? train_idx : val_idx;

  detail::Momentum mom;
  TrainSummary summary;
  RecurrentParams best = params;
  double best_val = detail::eval_loss(params, data, monitor, loss, pretrain_mode);
  summary.best_val_loss = best_val;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    detail::shuffle(train_idx, rng);
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end =
          std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<int> idx(train_idx.begin() + static_cast<long>(start),
                           train_idx.begin() + static_cast<long>(end));
      Batch b = detail::gather_batch(data, idx, !pretrain_mode, pretrain_mode);
      auto [l, g] = pretrain_mode ? pretrain_loss_and_gradients(params, b)
                                  : task_loss_and_gradients(params, b, loss);
      g.clip_norm(cfg.clip_norm);
      mom.step(params, g, cfg, skip_recurrent_updates);
    }
    double val = detail::eval_loss(params, data, monitor, loss, pretrain_mode);
    summary.val_history.push_back(val);
    ++summary.epochs_run;
    if (val < best_val - 1e-12) {
      best_val = val;
      best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (summary.epochs_run > 0) params = best;
  summary.best_val_loss = best_val;
  return summary;
}

/// Unsupervised pretraining: the model predicts the delta vector at every
/// window from the inputs; disease labels are never read.
inline TrainSummary pretrain(RecurrentParams& params, const SequenceData& data,
                             const TrainConfig& cfg) {
  return train_loop(params, data, cfg, TaskLoss::mse, /*pretrain_mode=*/true);
}

/// Fine-tuning: keep the pretrained recurrent weights, attach a fresh task
/// head, train end-to-end on the task loss (recurrent weights frozen only on
/// request). The pretrained input object is not modified.
inline std::pair<RecurrentParams, TrainSummary> finetune(const RecurrentParams& pretrained,
                                                         const SequenceData& data,
                                                         const TrainConfig& cfg, TaskLoss loss) {
  if (cfg.hidden_dim != pretrained.hidden_dim)
    throw ConfigError("finetune: hidden_dim mismatch with pretrained weights");
  if (data.feature_dim() != pretrained.input_dim)
    throw ConfigError("finetune: input dimension mismatch with pretrained weights");
  RecurrentParams p = pretrained;
  Rng rng(cfg.seed ^ 0x68656164ULL);
  double bh = 1.0 / std::sqrt(static_cast<double>(p.hidden_dim));
  for (int i = 0; i < p.task_w.size(); ++i) p.task_w[i] = rng.uniform(-bh, bh);
  p.task_b = 0.0;
  TrainSummary s = train_loop(p, data, cfg, loss, /*pretrain_mode=*/false,
                              /*skip_recurrent_updates=*/cfg.freeze_recurrent);
  return {std::move(p), s};
}

/// From-scratch task training with the standard init.
inline std::pair<RecurrentParams, TrainSummary> train_from_scratch(CellType cell,
                                                                   const SequenceData& data,
                                                                   const TrainConfig& cfg,
                                                                   TaskLoss loss, int pre_dim) {
  Rng rng(cfg.seed ^ 0x696e6974ULL);
  RecurrentParams p = init_params(cell, data.feature_dim(), cfg.hidden_dim, pre_dim, rng);
  TrainSummary s = train_loop(p, data, cfg, loss, /*pretrain_mode=*/false);
  return {std::move(p), s};
}

// ---------------------------------------------------------------------------
// Checkpoint format: versioned JSON container with row-major tensors.
// ---------------------------------------------------------------------------

namespace detail {

inline json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (int j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline MatrixXd matrix_from_json(const json& j) {
  if (j.empty()) return {};
  MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j2 = 0; j2 < m.cols(); ++j2)
      m(i, j2) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(j2)].get<double>();
  return m;
}

inline json vector_to_json(const VectorXd& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline VectorXd vector_from_json(const json& j) {
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

}  // namespace detail

inline void save_checkpoint(const RecurrentParams& p, const std::string& path,
                            const json& train_meta = json::object()) {
  json j;
  j["schema_version"] = 1;
  j["cell"] = cell_name(p.cell);
  j["input_dim"] = p.input_dim;
  j["hidden_dim"] = p.hidden_dim;
  j["pre_dim"] = p.pre_dim;
  j["params"] = {{"w_x", detail::matrix_to_json(p.w_x)},
                 {"w_h", detail::matrix_to_json(p.w_h)},
                 {"b", detail::vector_to_json(p.b)},
                 {"task_w", detail::vector_to_json(p.task_w)},
                 {"task_b", p.task_b},
                 {"pre_w", detail::matrix_to_json(p.pre_w)},
                 {"pre_b", detail::vector_to_json(p.pre_b)}};
  j["train_meta"] = train_meta;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out << j.dump(2) << "\n";
}

inline RecurrentParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (j.value("schema_version", 0) != 1) throw DataError("unsupported checkpoint schema version");
  RecurrentParams p;
  p.cell = cell_from_name(j.at("cell").get<std::string>());
  p.input_dim = j.at("input_dim").get<int>();
  p.hidden_dim = j.at("hidden_dim").get<int>();
  p.pre_dim = j.at("pre_dim").get<int>();
  const auto& jp = j.at("params");
  p.w_x = detail::matrix_from_json(jp.at("w_x"));
  p.w_h = detail::matrix_from_json(jp.at("w_h"));
  p.b = detail::vector_from_json(jp.at("b"));
  p.task_w = detail::vector_from_json(jp.at("task_w"));
  p.task_b = jp.at("task_b").get<double>();
  p.pre_w = detail::matrix_from_json(jp.at("pre_w"));
  p.pre_b = detail::vector_from_json(jp.at("pre_b"));
  return p;
}

}  // namespace deltaseq::models
