#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "deltaseq/common.hpp"
#include "deltaseq/rng.hpp"
#include "deltaseq/simulate.hpp"
#include "deltaseq/stats.hpp"
#include "deltaseq/structure.hpp"

namespace deltaseq::synth {

struct RandomStructureParams {
  int n_diseases = 10;
  int n_labs = 20;
  int n_outcomes = 4;
  double edge_density = 0.25;
  int n_windows = 60;
  std::uint64_t seed = 0;
  bool placebo = false;       // zero out all medication effects
  int pilot_patients = 200;   // calibration cohort size
};

/// Generate a random structure of the experiment's shape: a disease DAG,
/// labs driven by severities (each disease owns one diagnostic lab),
/// escalation ladders whose effects decay to zero, and late-onset outcomes
/// driven by parent severities.
///
/// Thresholds are calibrated against pilot simulations so the dynamics are
/// plausible at any horizon: diagnosis thresholds come from an untreated
/// pilot (diagnosis happens before treatment exists), outcome thresholds
/// from a treated pilot (outcomes unfold under medication).
inline CausalStructure build_random_structure(const RandomStructureParams& p) {
  if (p.n_diseases < 1) throw ConfigError("n_diseases must be >= 1");
  if (p.n_labs < p.n_diseases)
    throw ConfigError("random generation needs n_labs >= n_diseases (one diagnostic lab each)");
  if (p.n_outcomes < 0) throw ConfigError("n_outcomes must be >= 0");
  if (p.pilot_patients < 20) throw ConfigError("pilot_patients must be >= 20");
  Rng rng(p.seed ^ 0x5eedf00dULL);

  CausalStructure st;
  st.n_windows = p.n_windows;
  st.window_length_years = 0.5;
  st.child_init_parent_weight = 0.5;
  st.individual_effect_sigma = 0.40;

  auto disease_name = [](int i) { return "d" + std::to_string(i); };
  auto lab_name = [](int i) { return "lab" + std::to_string(i); };

  // Disease DAG over index order; at most two parents each.
  for (int i = 0; i < p.n_diseases; ++i) {
    DiseaseSpec d;
    d.id = disease_name(i);
    for (int q = 0; q < i; ++q) {
      if (static_cast<int>(d.parents.size()) >= 2) break;
      if (rng.uniform01() < p.edge_density) d.parents.push_back(disease_name(q));
    }
    d.progression.self_coef = rng.uniform(1.000, 1.015);
    d.progression.parent_coefs.assign(d.parents.size(), 0.0);
    for (auto& c : d.progression.parent_coefs) c = rng.uniform(0.01, 0.04);
    d.progression.drift = rng.uniform(0.02, 0.05);
    d.progression.noise_std = 0.02;
    d.init_min = 0.0;
    d.init_max = 1.0;

    int n_lines = 2 + (rng.uniform01() < 0.6 ? 1 : 0);
    double base_strength = rng.uniform(0.22, 0.42);
    for (int k = 0; k < n_lines; ++k) {
      // Later lines are stronger and last longer, each decaying to zero.
      double g = base_strength * (1.0 + 0.5 * k);
      int dur = 8 + 4 * k;
      MedicationLine ml;
      for (int w = 0; w < dur; ++w)
        ml.effect_schedule.push_back(p.placebo ? 0.0
                                               : -g * (1.0 - static_cast<double>(w) / dur));
      ml.effect_schedule.push_back(0.0);
      d.lines.push_back(std::move(ml));
    }
    // Calibrated below; harmless placeholder so pilots can run.
    d.diagnostic_lab = lab_name(i);
    d.diagnosis_threshold = 1e18;
    st.diseases.push_back(std::move(d));
  }

  // Labs: lab i's primary disease is i mod n_diseases; lab i (< n_diseases)
  // is disease i's diagnostic lab.
  for (int i = 0; i < p.n_labs; ++i) {
    LabSpec l;
    l.id = lab_name(i);
    l.baseline = rng.uniform(80.0, 120.0);
    int primary = i % p.n_diseases;
    l.disease_weights[disease_name(primary)] = rng.uniform(1.2, 2.0);
    if (rng.uniform01() < 0.35) {
      int other = rng.uniform_int(p.n_diseases);
      if (other != primary) l.disease_weights[disease_name(other)] = rng.uniform(0.2, 0.5);
    }
    l.obs_noise_std = 1.0;
    l.process_noise_std = 0.5;
    l.units = "U";
    st.labs.push_back(std::move(l));
  }

  for (int i = 0; i < p.n_outcomes; ++i) {
    OutcomeSpec o;
    o.id = "y" + std::to_string(i);
    int a = rng.uniform_int(p.n_diseases);
    int b = rng.uniform_int(p.n_diseases);
    if (b == a) b = (a + 1) % p.n_diseases;
    o.parents = {disease_name(std::min(a, b)), disease_name(std::max(a, b))};
    o.parent_weights = {1.0, 1.0};
    o.threshold = 1e18;  // calibrated below
    o.earliest_onset_window = p.n_windows / 2;
    st.outcomes.push_back(std::move(o));
  }
  st.finalize();

  SimulationConfig pilot;
  pilot.n_patients = p.pilot_patients;
  pilot.observation_rate = 1.0;
  pilot.rng_seed = p.seed ^ 0x9a11b0a7ULL;

  // Untreated pilot: place each diagnosis threshold at a drawn quantile of
  // the diagnostic lab at a drawn crossing window in the first half.
  {
    SimulationConfig cfg = pilot;
    cfg.force_untreated = true;
    auto cohort = simulate_cohort(st, cfg);
    for (int i = 0; i < p.n_diseases; ++i) {
      int t_cross = static_cast<int>(rng.uniform(0.15, 0.5) * p.n_windows);
      t_cross = std::clamp(t_cross, 1, p.n_windows - 1);
      double q = rng.uniform(0.35, 0.65);
      std::vector<double> values;
      values.reserve(cohort.size());
      int lab = st.diagnostic_lab_idx[static_cast<std::size_t>(i)];
      for (const auto& tr : cohort) values.push_back(tr.labs_true(lab, t_cross));
      st.diseases[static_cast<std::size_t>(i)].diagnosis_threshold = quantile(values, q);
    }
  }

  // Treated pilot: outcome thresholds from the realized parent-severity sums
  // under medication. Diagnosis is sticky, so the crossing statistic is the
  // running max of the sum over the onset-gated range; a quantile of that max
  // pins the end-of-horizon prevalence directly.
  if (p.n_outcomes > 0) {
    auto cohort = simulate_cohort(st, pilot);
    for (int i = 0; i < p.n_outcomes; ++i) {
      auto& o = st.outcomes[static_cast<std::size_t>(i)];
      double q = rng.uniform(0.55, 0.80);
      std::vector<double> values;
      values.reserve(cohort.size());
      const auto& pars = st.outcome_parent_idx[static_cast<std::size_t>(i)];
      for (const auto& tr : cohort) {
        double peak = 0.0;
        for (int t = o.earliest_onset_window; t < p.n_windows; ++t) {
          double acc = 0.0;
          for (std::size_t k = 0; k < pars.size(); ++k)
            acc += o.parent_weights[k] * tr.severity(pars[k], t);
          peak = std::max(peak, acc);
        }
        values.push_back(peak);
      }
      o.threshold = quantile(values, q);
    }
  }

  st.validate();
  return st;
}

}  // namespace deltaseq::synth
