#pragma once

// Shared fixtures: small hand-built structures and the independent
// counterfactual difference recursion used as the treatment-effect oracle.

#include <Eigen/Dense>
#include <vector>

#include "deltaseq/cohort.hpp"
#include "deltaseq/simulate.hpp"
#include "deltaseq/structure.hpp"

namespace testutil {

using deltaseq::synth::CausalStructure;
using deltaseq::synth::DiseaseSpec;
using deltaseq::synth::LabSpec;
using deltaseq::synth::MedicationLine;
using deltaseq::synth::OutcomeSpec;
using deltaseq::synth::PatientTrajectory;
using Eigen::MatrixXd;

/// Two diseases in a chain (d0 -> d1) feeding one outcome, three labs,
/// noiseless by default. Lab0 diagnoses d0, lab1 diagnoses d1, lab2 tracks
/// both.
inline CausalStructure chain_structure(int n_windows = 40, bool with_noise = false) {
  CausalStructure st;
  st.n_windows = n_windows;
  st.individual_effect_sigma = 0.0;

  DiseaseSpec d0;
  d0.id = "d0";
  d0.progression = {1.01, {}, 0.05, with_noise ? 0.02 : 0.0};
  d0.init_min = 0.5;
  d0.init_max = 1.5;
  d0.diagnostic_lab = "lab0";
  d0.diagnosis_threshold = 112.0;
  d0.lines.push_back({{-0.15, -0.12, -0.08, -0.04, 0.0}});
  d0.lines.push_back({{-0.25, -0.2, -0.1, 0.0}});

  DiseaseSpec d1;
  d1.id = "d1";
  d1.parents = {"d0"};
  d1.progression = {1.0, {0.05}, 0.03, with_noise ? 0.02 : 0.0};
  d1.init_min = 0.2;
  d1.init_max = 1.0;
  d1.diagnostic_lab = "lab1";
  d1.diagnosis_threshold = 108.0;
  d1.lines.push_back({{-0.1, -0.05, 0.0}});

  LabSpec l0;
  l0.id = "lab0";
  l0.baseline = 100.0;
  l0.disease_weights = {{"d0", 1.5}};
  l0.obs_noise_std = with_noise ? 0.5 : 0.0;
  l0.process_noise_std = with_noise ? 0.3 : 0.0;

  LabSpec l1;
  l1.id = "lab1";
  l1.baseline = 95.0;
  l1.disease_weights = {{"d1", 1.2}};
  l1.obs_noise_std = with_noise ? 0.5 : 0.0;
  l1.process_noise_std = with_noise ? 0.3 : 0.0;

  LabSpec l2;
  l2.id = "lab2";
  l2.baseline = 110.0;
  l2.disease_weights = {{"d0", 0.4}, {"d1", 0.6}};
  l2.obs_noise_std = with_noise ? 0.5 : 0.0;
  l2.process_noise_std = with_noise ? 0.3 : 0.0;

  OutcomeSpec y;
  y.id = "y0";
  y.parents = {"d0", "d1"};
  y.parent_weights = {1.0, 1.0};
  y.threshold = 6.0;
  y.earliest_onset_window = n_windows / 2;

  st.diseases = {d0, d1};
  st.labs = {l0, l1, l2};
  st.outcomes = {y};
  st.finalize();
  st.validate();
  return st;
}

/// Independent oracle: the treated-minus-untreated difference recursion.
/// Given the treated arm's medication matrix and individual effects, the
/// severity difference follows the linear recursion and the lab difference
/// its accumulated image, provided neither arm clamps at zero.
struct DifferenceOracle {
  MatrixXd severity_diff;  // disease x window
  MatrixXd lab_diff;       // lab x window
};

inline DifferenceOracle difference_oracle(const CausalStructure& st,
                                          const PatientTrajectory& treated) {
  const int T = st.n_windows;
  const int D = st.n_diseases();
  const int L = st.n_labs();
  DifferenceOracle out;
  out.severity_diff = MatrixXd::Zero(D, T);
  out.lab_diff = MatrixXd::Zero(L, T);
  for (int t = 1; t < T; ++t) {
    for (int d = 0; d < D; ++d) {
      const auto& pr = st.diseases[static_cast<std::size_t>(d)].progression;
      double v = pr.self_coef * out.severity_diff(d, t - 1);
      const auto& parents = st.parent_idx[static_cast<std::size_t>(d)];
      for (std::size_t i = 0; i < parents.size(); ++i)
        v += pr.parent_coefs[i] * out.severity_diff(parents[i], t - 1);
      int off = st.digit_offset[static_cast<std::size_t>(d)];
      const auto& lines = st.diseases[static_cast<std::size_t>(d)].lines;
      for (int k = 0; k < static_cast<int>(lines.size()); ++k) {
        int digit = off + k;
        if (!treated.meds(digit, t - 1)) continue;
        int start = treated.med_start(digit, t - 1);
        v += lines[static_cast<std::size_t>(k)].effect_at((t - 1) - start) *
             treated.individual_effects[digit];
      }
      out.severity_diff(d, t) = v;
    }
    for (int l = 0; l < L; ++l) {
      double inc = 0.0;
      for (const auto& [d, w] : st.lab_weights[static_cast<std::size_t>(l)])
        inc += w * out.severity_diff(d, t);
      out.lab_diff(l, t) = out.lab_diff(l, t - 1) + inc;
    }
  }
  return out;
}

/// Minimal hand-built cohort: per-patient med matrices plus constant labs,
/// fully observed, no dx. Enough for enumeration and matching tests.
inline deltaseq::synth::Cohort tiny_cohort(const std::vector<Eigen::MatrixX<std::uint8_t>>& meds,
                                           int n_labs = 2) {
  using deltaseq::synth::Cohort;
  using deltaseq::synth::CohortPatient;
  Cohort c;
  const int T = static_cast<int>(meds.at(0).cols());
  const int m = static_cast<int>(meds.at(0).rows());
  c.meta.n_windows = T;
  c.meta.n_labs = n_labs;
  c.meta.n_meds = m;
  c.meta.n_dx = 1;
  for (int l = 0; l < n_labs; ++l) c.meta.lab_ids.push_back("lab" + std::to_string(l));
  c.meta.dx_ids = {"y0"};
  for (int j = 0; j < m; ++j) {
    c.meta.digit_disease.push_back("d0");
    c.meta.digit_line.push_back(j + 1);
  }
  c.meta.disease_labs["d0"] = {0};
  char name[16];
  for (std::size_t i = 0; i < meds.size(); ++i) {
    CohortPatient p;
    std::snprintf(name, sizeof name, "p%06zu", i);
    p.id = name;
    p.meds = meds[i];
    p.labs_observed = Eigen::MatrixXd::Constant(n_labs, T, 100.0);
    p.observed = Eigen::MatrixX<std::uint8_t>::Ones(n_labs, T);
    p.dx = Eigen::MatrixX<std::uint8_t>::Zero(1, T);
    c.patients.push_back(std::move(p));
  }
  return c;
}

}  // namespace testutil
