#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "deltaseq/cohort.hpp"
#include "deltaseq/common.hpp"
#include "deltaseq/ite.hpp"
#include "deltaseq/training.hpp"

namespace deltaseq::harness {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using synth::Cohort;

// ---------------------------------------------------------------------------
// Imputation: last observation carried forward within a patient, then the
// training-cohort lab mean for cells with no prior observation. Statistics
// come from the given patient subset only and are reused everywhere else.
// ---------------------------------------------------------------------------

struct ImputeStats {
  VectorXd lab_means;
};

inline ImputeStats compute_impute_stats(const Cohort& cohort,
                                        const std::vector<std::uint8_t>& patient_mask = {}) {
  if (!patient_mask.empty() && static_cast<int>(patient_mask.size()) != cohort.n_patients())
    throw ConfigError("compute_impute_stats: mask size mismatch");
  const int L = cohort.meta.n_labs;
  VectorXd sum = VectorXd::Zero(L);
  VectorXd count = VectorXd::Zero(L);
  for (int p = 0; p < cohort.n_patients(); ++p) {
    if (!patient_mask.empty() && !patient_mask[static_cast<std::size_t>(p)]) continue;
    const auto& pat = cohort.patients[static_cast<std::size_t>(p)];
    for (int l = 0; l < L; ++l)
      for (int t = 0; t < cohort.meta.n_windows; ++t)
        if (pat.observed(l, t)) {
          sum[l] += pat.labs_observed(l, t);
          count[l] += 1.0;
        }
  }
  for (int l = 0; l < L; ++l)
    if (count[l] == 0.0)
      throw DataError("impute: lab " + cohort.meta.lab_ids[static_cast<std::size_t>(l)] +
                      " never observed in the fitting cohort");
  return {sum.cwiseQuotient(count)};
}

/// Fully observed lab matrices (lab x window) for every patient.
inline std::vector<MatrixXd> impute_labs(const Cohort& cohort, const ImputeStats& stats) {
  const int L = cohort.meta.n_labs;
  const int T = cohort.meta.n_windows;
  std::vector<MatrixXd> out(static_cast<std::size_t>(cohort.n_patients()));
  for (int p = 0; p < cohort.n_patients(); ++p) {
    const auto& pat = cohort.patients[static_cast<std::size_t>(p)];
    MatrixXd m(L, T);
    for (int l = 0; l < L; ++l) {
      double last = stats.lab_means[l];
      bool seen = false;
      for (int t = 0; t < T; ++t) {
        if (pat.observed(l, t)) {
          last = pat.labs_observed(l, t);
          seen = true;
          m(l, t) = last;
        } else {
          m(l, t) = seen ? last : stats.lab_means[l];
        }
      }
    }
    out[static_cast<std::size_t>(p)] = std::move(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature scaling (training-split statistics, pooled over windows).
// ---------------------------------------------------------------------------

struct FeatureScaler {
  VectorXd mean, scale;

  VectorXd apply(const VectorXd& x) const { return (x - mean).cwiseQuotient(scale); }
};

inline FeatureScaler fit_lab_scaler(const std::vector<MatrixXd>& imputed,
                                    const std::vector<std::uint8_t>& patient_mask) {
  if (imputed.empty()) throw DataError("fit_lab_scaler: empty cohort");
  const int L = static_cast<int>(imputed[0].rows());
  VectorXd sum = VectorXd::Zero(L), sq = VectorXd::Zero(L);
  double n = 0.0;
  for (std::size_t p = 0; p < imputed.size(); ++p) {
    if (!patient_mask.empty() && !patient_mask[p]) continue;
    sum += imputed[p].rowwise().sum();
    sq += imputed[p].array().square().matrix().rowwise().sum();
    n += static_cast<double>(imputed[p].cols());
  }
  if (n == 0.0) throw DataError("fit_lab_scaler: empty training subset");
  FeatureScaler s;
  s.mean = sum / n;
  VectorXd var = sq / n - s.mean.cwiseProduct(s.mean);
  s.scale = var.cwiseMax(0.0).cwiseSqrt();
  for (int l = 0; l < L; ++l)
    if (s.scale[l] < 1e-12) s.scale[l] = 1.0;
  return s;
}

inline FeatureScaler fit_delta_scaler(const ite::DeltaSequences& seqs,
                                      const std::vector<std::uint8_t>& patient_mask) {
  if (seqs.delta.empty()) throw DataError("fit_delta_scaler: empty sequences");
  const int P = static_cast<int>(seqs.delta[0].rows());
  VectorXd sum = VectorXd::Zero(P), sq = VectorXd::Zero(P);
  double n = 0.0;
  for (std::size_t p = 0; p < seqs.delta.size(); ++p) {
    if (!patient_mask.empty() && !patient_mask[p]) continue;
    sum += seqs.delta[p].rowwise().sum();
    sq += seqs.delta[p].array().square().matrix().rowwise().sum();
    n += static_cast<double>(seqs.delta[p].cols());
  }
  if (n == 0.0) throw DataError("fit_delta_scaler: empty training subset");
  FeatureScaler s;
  s.mean = sum / n;
  VectorXd var = sq / n - s.mean.cwiseProduct(s.mean);
  s.scale = var.cwiseMax(0.0).cwiseSqrt();
  for (int k = 0; k < P; ++k)
    if (s.scale[k] < 1e-12) s.scale[k] = 1.0;
  return s;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

enum class Task { diagnosis, lab_forecast };
enum class Method { none, augment, pretrain };

inline Method method_from_name(const std::string& s) {
  if (s == "none") return Method::none;
  if (s == "augment") return Method::augment;
  if (s == "pretrain") return Method::pretrain;
  throw ConfigError("unknown method: " + s);
}

inline std::string method_name(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::augment: return "augment";
    default: return "pretrain";
  }
}

struct AssembleOptions {
  Task task = Task::diagnosis;
  std::string target_id;  // outcome dx id, or lab id for forecasting
  int time_step = 10;     // K consecutive input windows
  int horizon = 5;        // label window = anchor + horizon
  bool augment = false;   // concatenate delta features per window
};

/// Assembled, standardized samples: inputs are the K windows up to and
/// including the anchor; the label lives `horizon` windows past the anchor.
/// Delta targets are attached window-aligned for pretraining use.
struct AssembledData {
  models::SequenceData data;
  std::vector<int> patient_index;
  int anchor = 0;
  int label_window = 0;
};

/// Latest feasible anchor: inputs [anchor-K+1, anchor], label at
/// anchor+horizon, one sample per eligible patient.
inline int anchor_window(int n_windows, int time_step, int horizon) {
  int anchor = n_windows - 1 - horizon;
  if (anchor - time_step + 1 < 0 || anchor < 0)
    throw ConfigError("time_step + horizon exceed the simulated span");
  return anchor;
}

inline AssembledData assemble_dataset(const Cohort& cohort, const std::vector<MatrixXd>& imputed,
                                      const ite::DeltaSequences& deltas,
                                      const FeatureScaler& lab_scaler,
                                      const FeatureScaler& delta_scaler,
                                      const AssembleOptions& opts,
                                      const std::vector<std::uint8_t>& patient_mask = {}) {
  const int T = cohort.meta.n_windows;
  const int K = opts.time_step;
  if (K < 1) throw ConfigError("time_step must be >= 1");
  if (opts.horizon < 1) throw ConfigError("horizon must be >= 1");
  const int anchor = anchor_window(T, K, opts.horizon);
  const int label_w = anchor + opts.horizon;
  const int L = cohort.meta.n_labs;
  const int P = static_cast<int>(deltas.relevant_labs.size());

  int dx_code = -1, lab_code = -1;
  if (opts.task == Task::diagnosis)
    dx_code = cohort.meta.dx_code(opts.target_id);
  else
    lab_code = cohort.meta.lab_code(opts.target_id);

  AssembledData out;
  out.anchor = anchor;
  out.label_window = label_w;
  std::vector<double> labels;

  for (int p = 0; p < cohort.n_patients(); ++p) {
    if (!patient_mask.empty() && !patient_mask[static_cast<std::size_t>(p)]) continue;
    const auto& pat = cohort.patients[static_cast<std::size_t>(p)];

    if (opts.task == Task::diagnosis) {
      // Patients already diagnosed by the anchor are excluded: their label is
      // identically 1.
      bool prior = false;
      for (int t = 0; t <= anchor && !prior; ++t) prior = pat.dx(dx_code, t) != 0;
      if (prior) continue;
    }

    int width = L + (opts.augment ? P + 1 : 0);
    MatrixXd input(K, width);
    MatrixXd dtarget(K, P);
    for (int k = 0; k < K; ++k) {
      int w = anchor - K + 1 + k;
      VectorXd labs = lab_scaler.apply(imputed[static_cast<std::size_t>(p)].col(w));
      input.block(k, 0, 1, L) = labs.transpose();
      VectorXd dv = delta_scaler.apply(deltas.delta[static_cast<std::size_t>(p)].col(w));
      dtarget.row(k) = dv.transpose();
      if (opts.augment) {
        input.block(k, L, 1, P) = dv.transpose();
        input(k, L + P) =
            deltas.unmatched[static_cast<std::size_t>(p)][static_cast<std::size_t>(w)] ? 1.0 : 0.0;
      }
    }
    out.data.inputs.push_back(std::move(input));
    out.data.delta_targets.push_back(std::move(dtarget));
    out.patient_index.push_back(p);
    if (opts.task == Task::diagnosis)
      labels.push_back(pat.dx(dx_code, label_w) ? 1.0 : 0.0);
    else
      labels.push_back(imputed[static_cast<std::size_t>(p)](lab_code, label_w));
  }
  out.data.labels = Eigen::Map<VectorXd>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  return out;
}

/// Unsupervised pretraining set: inputs and window-aligned delta targets for
/// every patient in the mask, no outcome filter, no labels.
inline models::SequenceData assemble_pretrain(const Cohort& cohort,
                                              const std::vector<MatrixXd>& imputed,
                                              const ite::DeltaSequences& deltas,
                                              const FeatureScaler& lab_scaler,
                                              const FeatureScaler& delta_scaler, int time_step,
                                              int horizon,
                                              const std::vector<std::uint8_t>& patient_mask = {}) {
  const int T = cohort.meta.n_windows;
  const int K = time_step;
  const int anchor = anchor_window(T, K, horizon);
  const int L = cohort.meta.n_labs;
  const int P = static_cast<int>(deltas.relevant_labs.size());

  models::SequenceData out;
  for (int p = 0; p < cohort.n_patients(); ++p) {
    if (!patient_mask.empty() && !patient_mask[static_cast<std::size_t>(p)]) continue;
    MatrixXd input(K, L);
    MatrixXd dtarget(K, P);
    for (int k = 0; k < K; ++k) {
      int w = anchor - K + 1 + k;
      input.row(k) = lab_scaler.apply(imputed[static_cast<std::size_t>(p)].col(w)).transpose();
      dtarget.row(k) =
          delta_scaler.apply(deltas.delta[static_cast<std::size_t>(p)].col(w)).transpose();
    }
    out.inputs.push_back(std::move(input));
    out.delta_targets.push_back(std::move(dtarget));
  }
  return out;
}

/// Flattened design matrix for the linear models: the K windows' features in
/// time order.
inline MatrixXd flatten_design(const models::SequenceData& data) {
  if (data.size() == 0) return {};
  const int K = data.windows();
  const int F = data.feature_dim();
  MatrixXd x(data.size(), K * F);
  for (int i = 0; i < data.size(); ++i)
    for (int k = 0; k < K; ++k)
      x.block(i, k * F, 1, F) = data.inputs[static_cast<std::size_t>(i)].row(k);
  return x;
}

/// Column indices of the delta features inside the flattened augmented
/// design (the per-window unmatched flag is not a delta coefficient).
inline std::vector<int> delta_design_columns(int time_step, int n_labs, int n_delta) {
  std::vector<int> cols;
  const int width = n_labs + n_delta + 1;
  for (int k = 0; k < time_step; ++k)
    for (int j = 0; j < n_delta; ++j) cols.push_back(k * width + n_labs + j);
  return cols;
}

}  // namespace deltaseq::harness
