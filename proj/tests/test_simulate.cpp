#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "deltaseq/random_structure.hpp"
#include "deltaseq/simulate.hpp"
#include "deltaseq/stats.hpp"
#include "helpers.hpp"

using namespace deltaseq;
using namespace deltaseq::synth;

namespace {

CausalStructure single_disease(double self_coef, double drift, int n_windows = 30) {
  CausalStructure st;
  st.n_windows = n_windows;
  st.individual_effect_sigma = 0.0;
  DiseaseSpec d;
  d.id = "d0";
  d.progression = {self_coef, {}, drift, 0.0};
  d.init_min = 0.0;
  d.init_max = 1.0;
  d.diagnostic_lab = "lab0";
  d.diagnosis_threshold = 1e9;  // never diagnosed unless overridden
  d.lines.push_back({{-0.2, 0.0}});
  LabSpec l;
  l.id = "lab0";
  l.baseline = 100.0;
  l.disease_weights = {{"d0", 1.0}};
  st.diseases = {d};
  st.labs = {l};
  st.finalize();
  st.validate();
  return st;
}

}  // namespace

TEST_CASE("initial severity lands in the configured range and is seed-stable") {
  CausalStructure st = single_disease(1.0, 0.0);
  Rng r1(42), r2(42);
  auto a = init_patient(st, r1);
  auto b = init_patient(st, r2);
  CHECK(a[0] >= 0.0);
  CHECK(a[0] <= 1.0);
  CHECK(a[0] == b[0]);
}

TEST_CASE("child with zero-severity parents draws the root distribution") {
  CausalStructure st = testutil::chain_structure();
  st.diseases[0].init_min = 0.0;
  st.diseases[0].init_max = 0.0;  // parent severity forced to zero
  st.diseases[1].init_min = 0.0;
  st.diseases[1].init_max = 1.0;
  st.finalize();

  const int n = 10000;
  std::vector<double> child;
  Rng rng(5);
  for (int i = 0; i < n; ++i) child.push_back(init_patient(st, rng)[1]);

  std::vector<double> reference;
  Rng ref(17);
  for (int i = 0; i < n; ++i) reference.push_back(ref.uniform(0.0, 1.0));

  CHECK(ks_test_two_sample(child, reference) > 0.01);
}

TEST_CASE("untreated linear drift has the closed form s0 + t*drift") {
  CausalStructure st = single_disease(1.0, 0.04);
  SimulationConfig cfg;
  cfg.n_patients = 1;
  cfg.observation_rate = 1.0;
  cfg.rng_seed = 3;
  cfg.force_untreated = true;
  auto tr = simulate_patient(st, cfg, 0);
  double s0 = tr.severity(0, 0);
  for (int t = 0; t < st.n_windows; ++t)
    CHECK(tr.severity(0, t) == Catch::Approx(s0 + t * 0.04).epsilon(1e-12));
}

TEST_CASE("prescription margin rules") {
  CausalStructure st = testutil::chain_structure();
  const double margin = 0.10;
  const double thr = st.diseases[0].diagnosis_threshold;
  Eigen::VectorXd labs(3);
  labs << thr * 1.05, 0.0, 0.0;
  MedVector dx(2);
  dx << 1, 0;

  SECTION("diagnosed, below margin, line 1 active: no escalation") {
    MedVector prev(3);
    prev << 1, 0, 0;
    MedVector out = prescribe(st, labs, dx, prev, margin);
    CHECK(out[0] == 1);
    CHECK(out[1] == 0);
  }
  SECTION("lab at 1.11x threshold with line 1 active: line 2 starts") {
    labs[0] = thr * 1.11;
    MedVector prev(3);
    prev << 1, 0, 0;
    MedVector out = prescribe(st, labs, dx, prev, margin);
    CHECK(out[1] == 1);
  }
  SECTION("ladder exhausted: vector unchanged") {
    labs[0] = thr * 2.0;
    MedVector prev(3);
    prev << 1, 1, 0;
    MedVector out = prescribe(st, labs, dx, prev, margin);
    CHECK(out == prev);
  }
  SECTION("undiagnosed: no change") {
    dx[0] = 0;
    labs[0] = thr * 2.0;
    MedVector prev = MedVector::Zero(3);
    MedVector out = prescribe(st, labs, dx, prev, margin);
    CHECK(out == prev);
  }
  SECTION("first diagnosis starts line 1") {
    MedVector prev = MedVector::Zero(3);
    MedVector out = prescribe(st, labs, dx, prev, margin);
    CHECK(out[0] == 1);
    CHECK(out[1] == 0);
  }
}

TEST_CASE("counterfactual clone difference equals the propagated effect") {
  // Noiseless chain; diagnosis thresholds low enough that treatment starts.
  CausalStructure st = testutil::chain_structure(40, /*with_noise=*/false);
  SimulationConfig cfg;
  cfg.n_patients = 20;
  cfg.observation_rate = 1.0;
  cfg.rng_seed = 11;

  SimulationConfig untreated_cfg = cfg;
  untreated_cfg.force_untreated = true;

  int treated_seen = 0;
  for (int i = 0; i < cfg.n_patients; ++i) {
    PatientTrajectory treated = simulate_patient(st, cfg, i);
    PatientTrajectory untreated = simulate_patient(st, untreated_cfg, i);
    if (treated.meds.sum() == 0) continue;
    ++treated_seen;
    auto oracle = testutil::difference_oracle(st, treated);
    for (int l = 0; l < st.n_labs(); ++l)
      for (int t = 0; t < st.n_windows; ++t) {
        double got = treated.labs_true(l, t) - untreated.labs_true(l, t);
        double want = oracle.lab_diff(l, t);
        CHECK(std::abs(got - want) <= 1e-9 * std::max(1.0, std::abs(want)));
      }
    // Severity identical before any treatment effect and different after.
    CHECK(treated.severity.col(0) == untreated.severity.col(0));
  }
  REQUIRE(treated_seen > 0);
}

TEST_CASE("dx and med-line monotonicity, severity nonnegativity") {
  RandomStructureParams p;
  p.n_diseases = 6;
  p.n_labs = 9;
  p.n_outcomes = 2;
  p.seed = 21;
  p.n_windows = 50;
  CausalStructure st = build_random_structure(p);
  SimulationConfig cfg;
  cfg.n_patients = 80;
  cfg.observation_rate = 0.5;
  cfg.rng_seed = 9;
  auto cohort = simulate_cohort(st, cfg);

  for (const auto& tr : cohort) {
    for (int c = 0; c < tr.dx.rows(); ++c)
      for (int t = 1; t < st.n_windows; ++t) CHECK(tr.dx(c, t) >= tr.dx(c, t - 1));
    for (int m = 0; m < tr.meds.rows(); ++m)
      for (int t = 1; t < st.n_windows; ++t) CHECK(tr.meds(m, t) >= tr.meds(m, t - 1));
    // Lines start in ladder order.
    for (int d = 0; d < st.n_diseases(); ++d) {
      int off = st.digit_offset[static_cast<std::size_t>(d)];
      int nl = static_cast<int>(st.diseases[static_cast<std::size_t>(d)].lines.size());
      for (int t = 0; t < st.n_windows; ++t)
        for (int k = 1; k < nl; ++k)
          if (tr.meds(off + k, t)) CHECK(tr.meds(off + k - 1, t) == 1);
    }
    CHECK(tr.severity.minCoeff() >= 0.0);
  }
}

TEST_CASE("observation mask frequency tracks the configured rate") {
  CausalStructure st = testutil::chain_structure(60);
  SimulationConfig cfg;
  cfg.n_patients = 700;
  cfg.observation_rate = 0.5;
  cfg.rng_seed = 123;
  auto cohort = simulate_cohort(st, cfg);
  double cells = 0.0, observed = 0.0;
  for (const auto& tr : cohort) {
    cells += static_cast<double>(tr.observed.size());
    observed += static_cast<double>(tr.observed.cast<int>().sum());
  }
  REQUIRE(cells >= 1e5);
  CHECK(std::abs(observed / cells - 0.5) < 0.01);

  cfg.observation_rate = 1.0;
  cfg.n_patients = 3;
  auto all = simulate_cohort(st, cfg);
  for (const auto& tr : all) CHECK(tr.observed.cast<int>().sum() == tr.observed.size());
}

TEST_CASE("same seed gives bit-identical cohorts across thread counts") {
  CausalStructure st = testutil::chain_structure(30, /*with_noise=*/true);
  SimulationConfig cfg;
  cfg.n_patients = 50;
  cfg.observation_rate = 0.5;
  cfg.rng_seed = 77;
  auto a = simulate_cohort(st, cfg, 1);
  auto b = simulate_cohort(st, cfg, 3);
  auto c = simulate_cohort(st, cfg, 1);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].severity == b[i].severity);
    CHECK(a[i].labs_true == b[i].labs_true);
    CHECK(a[i].meds == b[i].meds);
    CHECK(a[i].dx == b[i].dx);
    CHECK(a[i].observed == b[i].observed);
    CHECK(a[i].severity == c[i].severity);
  }
}

TEST_CASE("beneficial medication lowers the treated lab against the counterfactual") {
  CausalStructure st = testutil::chain_structure(40);
  SimulationConfig cfg;
  cfg.n_patients = 300;
  cfg.observation_rate = 1.0;
  cfg.rng_seed = 31;
  SimulationConfig untreated = cfg;
  untreated.force_untreated = true;

  // Mean lab0 among patients k >= 2 windows past their line-1 start.
  for (int k = 2; k <= 4; ++k) {
    double treated_sum = 0.0, untreated_sum = 0.0;
    int n = 0;
    for (int i = 0; i < cfg.n_patients; ++i) {
      auto tr = simulate_patient(st, cfg, i);
      int start = tr.med_start(0, st.n_windows - 1);
      if (start < 0 || start + k >= st.n_windows) continue;
      auto un = simulate_patient(st, untreated, i);
      treated_sum += tr.labs_true(0, start + k);
      untreated_sum += un.labs_true(0, start + k);
      ++n;
    }
    REQUIRE(n > 50);
    CHECK(treated_sum / n < untreated_sum / n);
  }
}

TEST_CASE("step_patient rejects out-of-range windows") {
  CausalStructure st = single_disease(1.0, 0.01);
  SimulationConfig cfg;
  cfg.n_patients = 1;
  cfg.rng_seed = 1;
  auto tr = simulate_patient(st, cfg, 0);
  Rng rng(0);
  CHECK_THROWS_AS(step_patient(tr, st, 0, rng), std::out_of_range);
  CHECK_THROWS_AS(step_patient(tr, st, st.n_windows, rng), std::out_of_range);
}

TEST_CASE("simulation config validation") {
  SimulationConfig cfg;
  cfg.n_patients = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.n_patients = 1;
  cfg.observation_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.observation_rate = 0.5;
  cfg.escalation_margin = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
