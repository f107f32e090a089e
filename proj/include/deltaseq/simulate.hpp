#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "deltaseq/common.hpp"
#include "deltaseq/rng.hpp"
#include "deltaseq/structure.hpp"

namespace deltaseq::synth {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using MatrixXu8 = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct SimulationConfig {
  int n_patients = 0;
  double observation_rate = 0.5;
  double escalation_margin = 0.10;  // next line when lab > threshold * (1 + margin)
  std::uint64_t rng_seed = 0;
  bool force_untreated = false;  // counterfactual arm: meds never start

  void validate() const {
    if (n_patients < 1) throw ConfigError("n_patients must be >= 1");
    if (!(observation_rate > 0.0) || observation_rate > 1.0)
      throw ConfigError("observation_rate must be in (0, 1]");
    if (!(escalation_margin > 0.0)) throw ConfigError("escalation_margin must be > 0");
  }
};

struct PatientTrajectory {
  std::string patient_id;
  MatrixXd severity;       // disease x window, latent, >= 0
  MatrixXd labs_true;      // lab x window, no measurement noise
  MatrixXd labs_observed;  // lab x window, NaN where unobserved
  MatrixXu8 observed;      // lab x window mask
  MatrixXu8 meds;          // med digit x window
  MatrixXu8 dx;            // (disease + outcome) x window
  VectorXd individual_effects;  // per med digit, E^I multiplier

  int n_windows() const { return static_cast<int>(severity.cols()); }

  /// First window at which a med digit is on, or -1. Digits are monotone.
  int med_start(int digit, int upto_window) const {
    for (int t = 0; t <= upto_window; ++t)
      if (meds(digit, t)) return t;
    return -1;
  }
};

inline std::string make_patient_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "p%06d", index);
  return buf;
}

/// Draw initial severities S_0. Roots draw from their configured uniform
/// range; children add child_init_parent_weight * mean(parent S_0) on top of
/// the same draw, so a child with all-zero parents matches the root
/// distribution exactly. Draws happen in topological order.
inline VectorXd init_patient(const CausalStructure& st, Rng& rng) {
  VectorXd s0 = VectorXd::Zero(st.n_diseases());
  for (int d : st.topo_order) {
    const auto& spec = st.diseases[static_cast<std::size_t>(d)];
    double u = rng.uniform(spec.init_min, spec.init_max);
    const auto& parents = st.parent_idx[static_cast<std::size_t>(d)];
    if (parents.empty()) {
      s0[d] = u;
    } else {
      double pmean = 0.0;
      for (int p : parents) pmean += s0[p];
      pmean /= static_cast<double>(parents.size());
      s0[d] = std::max(0.0, st.child_init_parent_weight * pmean + u);
    }
  }
  return s0;
}

namespace detail {

/// Treatment contribution to disease d's severity at window t, driven by the
/// medication vector at t-1: sum over active lines of E^p(elapsed) * E^I.
inline double treatment_effect(const PatientTrajectory& tr, const CausalStructure& st, int d,
                               int t) {
  double eff = 0.0;
  const auto& spec = st.diseases[static_cast<std::size_t>(d)];
  int off = st.digit_offset[static_cast<std::size_t>(d)];
  for (int k = 0; k < static_cast<int>(spec.lines.size()); ++k) {
    int digit = off + k;
    if (!tr.meds(digit, t - 1)) continue;
    int start = tr.med_start(digit, t - 1);
    int elapsed = (t - 1) - start;
    eff += spec.lines[static_cast<std::size_t>(k)].effect_at(elapsed) *
           tr.individual_effects[digit];
  }
  return eff;
}

inline void fill_dx(PatientTrajectory& tr, const CausalStructure& st, int t) {
  const int D = st.n_diseases();
  for (int d = 0; d < D; ++d) {
    bool prev = t > 0 && tr.dx(d, t - 1);
    bool now = tr.labs_true(st.diagnostic_lab_idx[static_cast<std::size_t>(d)], t) >=
               st.diseases[static_cast<std::size_t>(d)].diagnosis_threshold;
    tr.dx(d, t) = (prev || now) ? 1 : 0;
  }
  for (int o = 0; o < st.n_outcomes(); ++o) {
    const auto& spec = st.outcomes[static_cast<std::size_t>(o)];
    bool prev = t > 0 && tr.dx(D + o, t - 1);
    bool now = false;
    if (t >= spec.earliest_onset_window) {
      double acc = 0.0;
      const auto& pars = st.outcome_parent_idx[static_cast<std::size_t>(o)];
      for (std::size_t i = 0; i < pars.size(); ++i)
        acc += spec.parent_weights[i] * tr.severity(pars[i], t);
      now = acc >= spec.threshold;
    }
    tr.dx(D + o, t) = (prev || now) ? 1 : 0;
  }
}

/// Observation pass for window t. Always draws one uniform and one normal per
/// lab so stream consumption does not depend on the mask or on treatment.
inline void observe(PatientTrajectory& tr, const CausalStructure& st, double rate, int t,
                    Rng& rng) {
  for (int l = 0; l < st.n_labs(); ++l) {
    double u = rng.uniform01();
    double z = rng.normal();
    if (u <= rate) {
      tr.observed(l, t) = 1;
      tr.labs_observed(l, t) =
          tr.labs_true(l, t) + st.labs[static_cast<std::size_t>(l)].obs_noise_std * z;
    } else {
      tr.observed(l, t) = 0;
      tr.labs_observed(l, t) = std::numeric_limits<double>::quiet_NaN();
    }
  }
}

}  // namespace detail

using MedVector = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

/// Prescription rule applied once per window per disease: treatment starts at
/// line 1 when the disease is first diagnosed; it escalates to the next line
/// when the diagnostic lab exceeds threshold * (1 + margin); at most one new
/// line per window; lines are never removed.
inline MedVector prescribe(const CausalStructure& st, const VectorXd& labs_t,
                           const MedVector& dx_t, const MedVector& meds_prev, double margin) {
  MedVector out = meds_prev;
  for (int d = 0; d < st.n_diseases(); ++d) {
    if (!dx_t[d]) continue;  // undiagnosed: no change
    const auto& spec = st.diseases[static_cast<std::size_t>(d)];
    int off = st.digit_offset[static_cast<std::size_t>(d)];
    int n_lines = static_cast<int>(spec.lines.size());
    int active = 0;
    while (active < n_lines && meds_prev[off + active]) ++active;
    if (active == 0) {
      out[off] = 1;  // first line at diagnosis
    } else if (active < n_lines) {
      double lab = labs_t[st.diagnostic_lab_idx[static_cast<std::size_t>(d)]];
      if (lab > spec.diagnosis_threshold * (1.0 + margin)) out[off + active] = 1;
    }
  }
  return out;
}

/// Fill severity, labs_true and dx at window t (t >= 1) from window t-1 and
/// the meds active at t-1. Consumes, in fixed order, one normal per disease
/// and one normal per lab.
inline void step_patient(PatientTrajectory& tr, const CausalStructure& st, int t, Rng& rng) {
  if (t < 1 || t >= tr.n_windows())
    throw std::out_of_range("step_patient: window index out of range");
  const int D = st.n_diseases();
  for (int d = 0; d < D; ++d) {
    const auto& pr = st.diseases[static_cast<std::size_t>(d)].progression;
    double xi = rng.normal();
    double v = pr.self_coef * tr.severity(d, t - 1) + pr.drift + pr.noise_std * xi;
    const auto& parents = st.parent_idx[static_cast<std::size_t>(d)];
    for (std::size_t i = 0; i < parents.size(); ++i)
      v += pr.parent_coefs[i] * tr.severity(parents[i], t - 1);
    v += detail::treatment_effect(tr, st, d, t);
    tr.severity(d, t) = std::max(0.0, v);
  }
  for (int l = 0; l < st.n_labs(); ++l) {
    double eta = rng.normal();
    double inc = st.labs[static_cast<std::size_t>(l)].process_noise_std * eta;
    for (const auto& [d, w] : st.lab_weights[static_cast<std::size_t>(l)])
      inc += w * tr.severity(d, t);
    tr.labs_true(l, t) = tr.labs_true(l, t - 1) + inc;
  }
  detail::fill_dx(tr, st, t);
}

inline PatientTrajectory simulate_patient(const CausalStructure& st, const SimulationConfig& cfg,
                                          int patient_index) {
  const int T = st.n_windows;
  const int D = st.n_diseases();
  const int L = st.n_labs();
  const int M = st.n_med_digits;
  Rng rng = Rng::for_patient(cfg.rng_seed, static_cast<std::uint64_t>(patient_index));

  PatientTrajectory tr;
  tr.patient_id = make_patient_id(patient_index);
  tr.severity = MatrixXd::Zero(D, T);
  tr.labs_true = MatrixXd::Zero(L, T);
  tr.labs_observed = MatrixXd::Constant(L, T, std::numeric_limits<double>::quiet_NaN());
  tr.observed = MatrixXu8::Zero(L, T);
  tr.meds = MatrixXu8::Zero(M, T);
  tr.dx = MatrixXu8::Zero(D + st.n_outcomes(), T);
  tr.individual_effects = VectorXd::Ones(M);

  // Individual effect multipliers, one per (disease, line), in digit order.
  for (int j = 0; j < M; ++j)
    tr.individual_effects[j] = rng.lognormal_median1(st.individual_effect_sigma);

  tr.severity.col(0) = init_patient(st, rng);
  for (int l = 0; l < L; ++l) {
    double eta = rng.normal();
    const auto& spec = st.labs[static_cast<std::size_t>(l)];
    double v = spec.baseline + spec.process_noise_std * eta;
    for (const auto& [d, w] : st.lab_weights[static_cast<std::size_t>(l)])
      v += w * tr.severity(d, 0);
    tr.labs_true(l, 0) = v;
  }
  detail::fill_dx(tr, st, 0);
  if (!cfg.force_untreated) {
    MedVector none = MedVector::Zero(M);
    MedVector dx0 = tr.dx.col(0).head(D);
    tr.meds.col(0) = prescribe(st, tr.labs_true.col(0), dx0, none, cfg.escalation_margin);
  }
  detail::observe(tr, st, cfg.observation_rate, 0, rng);

  for (int t = 1; t < T; ++t) {
    step_patient(tr, st, t, rng);
    if (!cfg.force_untreated) {
      MedVector prev = tr.meds.col(t - 1);
      MedVector dxt = tr.dx.col(t).head(D);
      tr.meds.col(t) = prescribe(st, tr.labs_true.col(t), dxt, prev, cfg.escalation_margin);
    }
    detail::observe(tr, st, cfg.observation_rate, t, rng);
  }
  return tr;
}

/// Simulate a full cohort. Patients are independent with per-patient rng
/// streams, so the result is identical for any worker count.
inline std::vector<PatientTrajectory> simulate_cohort(const CausalStructure& st,
                                                      const SimulationConfig& cfg,
                                                      int n_threads = 1) {
  cfg.validate();
  st.validate();
  std::vector<PatientTrajectory> out(static_cast<std::size_t>(cfg.n_patients));
  if (n_threads <= 1 || cfg.n_patients < 2 * n_threads) {
    for (int i = 0; i < cfg.n_patients; ++i)
      out[static_cast<std::size_t>(i)] = simulate_patient(st, cfg, i);
    return out;
  }
  std::vector<std::thread> workers;
  std::size_t n = static_cast<std::size_t>(cfg.n_patients);
  std::size_t nt = static_cast<std::size_t>(n_threads);
  for (std::size_t w = 0; w < nt; ++w) {
    workers.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += nt)
        out[i] = simulate_patient(st, cfg, static_cast<int>(i));
    });
  }
  for (auto& th : workers) th.join();
  return out;
}

}  // namespace deltaseq::synth
