#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>
#include <tuple>

#include "deltaseq/dataset.hpp"
#include "deltaseq/ite.hpp"
#include "deltaseq/simulate.hpp"
#include "helpers.hpp"

using namespace deltaseq;
using namespace deltaseq::ite;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

using MedMatrix = Eigen::MatrixX<std::uint8_t>;

MedMatrix med_rows(int m, int T) { return MedMatrix::Zero(m, T); }

/// Independent exhaustive nearest-propensity matcher implementing the
/// documented tie order: gap, |t1-t2|, control id, control window.
MatchResult brute_force_match(const std::vector<ScoredMember>& treated,
                              const std::vector<ScoredMember>& controls, double caliper,
                              const std::vector<std::string>& ids) {
  MatchResult res;
  for (const auto& t : treated) {
    bool have = false;
    MatchedPair best;
    for (const auto& c : controls) {
      if (c.ref.patient == t.ref.patient && c.ref.window == t.ref.window) continue;
      double gap = std::abs(t.prob - c.prob);
      if (gap > caliper) continue;
      MatchedPair cand{t.ref, c.ref, gap};
      bool better = false;
      if (!have) {
        better = true;
      } else if (cand.gap != best.gap) {
        better = cand.gap < best.gap;
      } else {
        int cd = std::abs(cand.treated.window - cand.control.window);
        int bd = std::abs(best.treated.window - best.control.window);
        if (cd != bd) {
          better = cd < bd;
        } else {
          const std::string& cid = ids[static_cast<std::size_t>(cand.control.patient)];
          const std::string& bid = ids[static_cast<std::size_t>(best.control.patient)];
          if (cid != bid)
            better = cid < bid;
          else
            better = cand.control.window < best.control.window;
        }
      }
      if (better) {
        best = cand;
        have = true;
      }
    }
    if (have)
      res.matched.push_back(best);
    else
      res.unmatched.push_back(t.ref);
  }
  return res;
}

bool same_pairs(const MatchResult& a, const MatchResult& b) {
  if (a.matched.size() != b.matched.size()) return false;
  auto key = [](const MatchedPair& p) {
    return std::tuple{p.treated.patient, p.treated.window, p.control.patient, p.control.window};
  };
  std::vector<std::tuple<int, int, int, int>> ka, kb;
  for (const auto& p : a.matched) ka.push_back(key(p));
  for (const auto& p : b.matched) kb.push_back(key(p));
  std::sort(ka.begin(), ka.end());
  std::sort(kb.begin(), kb.end());
  return ka == kb;
}

}  // namespace

TEST_CASE("enumeration: all-zero med cohort yields no pairs") {
  auto cohort = testutil::tiny_cohort({med_rows(2, 8), med_rows(2, 8)});
  CHECK(enumerate_group_pairs(cohort, 1).empty());
}

TEST_CASE("enumeration: one switcher and one holder make a single pair") {
  const int T = 10;
  MedMatrix switcher = med_rows(2, T);
  for (int t = 5; t < T; ++t) switcher(0, t) = 1;
  MedMatrix holder = med_rows(2, T);
  auto cohort = testutil::tiny_cohort({switcher, holder});

  auto pairs = enumerate_group_pairs(cohort, 1);
  REQUIRE(pairs.size() == 1);
  const auto& pr = pairs[0];
  CHECK(pr.added == std::vector<int>{0});
  CHECK(pr.prior == std::vector<std::uint8_t>(2, 0));
  REQUIRE(pr.treated.size() == 1);
  CHECK(pr.treated[0].patient == 0);
  CHECK(pr.treated[0].window == 5);
  // The holder contributes every window; the switcher its pre-switch windows.
  int holder_windows = 0;
  for (const auto& c : pr.controls)
    if (c.patient == 1) ++holder_windows;
  CHECK(holder_windows == T);
  CHECK(pr.controls.size() == static_cast<std::size_t>(T + 5));

  SECTION("min_group_size filters the pair out") {
    CHECK(enumerate_group_pairs(cohort, 2).empty());
  }
}

TEST_CASE("propensity fit: independent treatment gives near-zero coefficients") {
  Rng rng(2);
  const int n = 10000, d = 4;
  MatrixXd x(n, d);
  VectorXd z(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
    z[i] = rng.uniform01() < 0.5 ? 1.0 : 0.0;
  }
  PropensityModel m = fit_propensity(x, z, 1e-6);
  for (int j = 0; j < d; ++j) {
    double se = std::sqrt(m.fit.cov(j + 1, j + 1));
    CHECK(std::abs(m.fit.coef[j]) < 3.0 * se);
  }
}

TEST_CASE("propensity fit: mirrored data has zero intercept") {
  const int n = 40;
  MatrixXd x(2 * n, 2);
  VectorXd z(2 * n);
  Rng rng(3);
  for (int i = 0; i < n; ++i) {
    double a = rng.normal(), b = rng.normal();
    x(2 * i, 0) = a;
    x(2 * i, 1) = b;
    z[2 * i] = 1.0;
    x(2 * i + 1, 0) = -a;
    x(2 * i + 1, 1) = -b;
    z[2 * i + 1] = 0.0;
  }
  PropensityModel m = fit_propensity(x, z, 1e-4);
  CHECK(std::abs(m.fit.intercept) < 1e-8);
}

TEST_CASE("propensity fit: separable points stay finite under ridge") {
  MatrixXd x(4, 1);
  x << -2.0, -1.0, 1.0, 2.0;
  VectorXd z(4);
  z << 0.0, 0.0, 1.0, 1.0;
  PropensityModel m = fit_propensity(x, z, 1e-4);
  REQUIRE(std::isfinite(m.fit.coef[0]));
  double loss = 0.0;
  for (int i = 0; i < 4; ++i) {
    double p = clamp_prob(m.prob(x.row(i).transpose()));
    loss += -(z[i] * std::log(p) + (1.0 - z[i]) * std::log(1.0 - p));
  }
  CHECK(loss / 4.0 < 0.1);
}

TEST_CASE("propensity fit rejects single-class labels") {
  MatrixXd x = MatrixXd::Random(6, 2);
  VectorXd z = VectorXd::Ones(6);
  CHECK_THROWS_AS(fit_propensity(x, z), DataError);
}

TEST_CASE("matching: exact covariate clone is matched at zero gap") {
  std::vector<std::string> ids{"p0", "p1", "p2"};
  std::vector<ScoredMember> treated{{{0, 4}, 0.37}};
  std::vector<ScoredMember> controls{{{1, 4}, 0.37}, {{2, 2}, 0.9}};
  MatchResult r = match_groups(treated, controls, 0.2, ids);
  REQUIRE(r.matched.size() == 1);
  CHECK(r.matched[0].control.patient == 1);
  CHECK(r.matched[0].gap == 0.0);
}

TEST_CASE("matching: caliper smaller than every gap leaves all unmatched") {
  std::vector<std::string> ids{"p0", "p1"};
  std::vector<ScoredMember> treated{{{0, 1}, 0.5}, {{0, 3}, 0.6}};
  std::vector<ScoredMember> controls{{{1, 1}, 0.1}};
  MatchResult r = match_groups(treated, controls, 1e-6, ids);
  CHECK(r.matched.empty());
  CHECK(r.unmatched.size() == 2);
}

TEST_CASE("matching: never pairs a treated record with itself") {
  std::vector<std::string> ids{"p0", "p1"};
  std::vector<ScoredMember> treated{{{0, 4}, 0.5}};
  std::vector<ScoredMember> controls{{{0, 4}, 0.5}, {{1, 2}, 0.48}};
  MatchResult r = match_groups(treated, controls, 0.2, ids);
  REQUIRE(r.matched.size() == 1);
  CHECK(r.matched[0].control.patient == 1);
  // Same patient at a different window is allowed.
  std::vector<ScoredMember> controls2{{{0, 2}, 0.5}, {{1, 2}, 0.4}};
  MatchResult r2 = match_groups(treated, controls2, 0.2, ids);
  REQUIRE(r2.matched.size() == 1);
  CHECK(r2.matched[0].control.patient == 0);
  CHECK(r2.matched[0].control.window == 2);
}

TEST_CASE("matching equals the exhaustive oracle on random instances") {
  Rng rng(11);
  for (int inst = 0; inst < 40; ++inst) {
    int n_treated = 5 + rng.uniform_int(45);
    int n_controls = 10 + rng.uniform_int(190);
    int n_patients = 4 + rng.uniform_int(20);
    std::vector<std::string> ids;
    for (int i = 0; i < n_patients; ++i) ids.push_back("p" + std::to_string(1000 + i));
    auto member = [&]() {
      ScoredMember m;
      m.ref.patient = rng.uniform_int(n_patients);
      m.ref.window = rng.uniform_int(12);
      // Coarse probability grid to force plenty of exact ties.
      m.prob = rng.uniform_int(25) / 25.0;
      return m;
    };
    std::vector<ScoredMember> treated, controls;
    for (int i = 0; i < n_treated; ++i) treated.push_back(member());
    for (int i = 0; i < n_controls; ++i) controls.push_back(member());
    double caliper = rng.uniform(0.01, 0.3);

    MatchResult fast = match_groups(treated, controls, caliper, ids);
    MatchResult slow = brute_force_match(treated, controls, caliper, ids);
    REQUIRE(same_pairs(fast, slow));
    for (const auto& p : fast.matched) CHECK(p.gap <= caliper);

    // Control-pool ordering must not matter.
    std::vector<ScoredMember> shuffled = controls;
    for (int i = static_cast<int>(shuffled.size()) - 1; i > 0; --i)
      std::swap(shuffled[static_cast<std::size_t>(i)],
                shuffled[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    MatchResult again = match_groups(treated, shuffled, caliper, ids);
    REQUIRE(same_pairs(fast, again));
  }
}

TEST_CASE("matching rejects a nonpositive caliper") {
  CHECK_THROWS_AS(match_groups({}, {}, 0.0, {}), ConfigError);
}

TEST_CASE("compute_delta basics") {
  std::vector<MatrixXd> labs(2);
  labs[0] = MatrixXd::Constant(1, 4, 140.0);
  labs[1] = MatrixXd::Constant(1, 4, 150.0);
  MatchedPair mp{{0, 1}, {1, 2}, 0.0};
  VectorXd d = compute_delta(mp, labs, {0});
  REQUIRE(d.size() == 1);
  CHECK(d[0] == -10.0);

  labs[1] = labs[0];
  CHECK(compute_delta(mp, labs, {0})[0] == 0.0);

  MatchedPair horizon{{0, 3}, {1, 2}, 0.0};
  CHECK_THROWS_AS(compute_delta(horizon, labs, {0}), DataError);
}

TEST_CASE("delta against the forced-untreated clone equals the propagated truth") {
  using namespace deltaseq::synth;
  CausalStructure st = testutil::chain_structure(30);
  SimulationConfig cfg;
  cfg.n_patients = 12;
  cfg.observation_rate = 1.0;
  cfg.rng_seed = 4;
  SimulationConfig un = cfg;
  un.force_untreated = true;

  int checked = 0;
  for (int i = 0; i < cfg.n_patients; ++i) {
    PatientTrajectory treated = simulate_patient(st, cfg, i);
    if (treated.meds.sum() == 0) continue;
    PatientTrajectory clone = simulate_patient(st, un, i);
    int t1 = treated.med_start(0, st.n_windows - 1);
    if (t1 < 0 || t1 + 1 >= st.n_windows) continue;
    ++checked;

    std::vector<MatrixXd> labs{treated.labs_true, clone.labs_true};
    MatchedPair mp{{0, t1}, {1, t1}, 0.0};
    std::vector<int> relevant{0, 1, 2};
    VectorXd d = compute_delta(mp, labs, relevant);
    auto oracle = testutil::difference_oracle(st, treated);
    for (int k = 0; k < 3; ++k) {
      double want = oracle.lab_diff(relevant[static_cast<std::size_t>(k)], t1 + 1);
      CHECK(std::abs(d[k] - want) <= 1e-6 * std::max(1.0, std::abs(want)));
    }
    // First-window effect through the lab map: w * E^p(0) * E^I on lab0.
    double direct = st.labs[0].disease_weights.at("d0") *
                    st.diseases[0].lines[0].effect_schedule[0] * treated.individual_effects[0];
    CHECK(d[0] == Catch::Approx(direct).margin(1e-9));
  }
  REQUIRE(checked >= 3);
}

TEST_CASE("delta sequences: never-treated patients carry exact zeros") {
  const int T = 12;
  MedMatrix a = med_rows(1, T);
  for (int t = 6; t < T; ++t) a(0, t) = 1;
  std::vector<MedMatrix> meds{a};
  for (int i = 0; i < 4; ++i) meds.push_back(med_rows(1, T));
  auto cohort = testutil::tiny_cohort(meds, 2);
  Rng rng(6);
  std::vector<MatrixXd> imputed;
  for (int p = 0; p < cohort.n_patients(); ++p) {
    MatrixXd m(2, T);
    for (int l = 0; l < 2; ++l)
      for (int t = 0; t < T; ++t) m(l, t) = 100.0 + 3.0 * rng.normal();
    imputed.push_back(m);
  }

  DeltaOptions opts;
  opts.min_group_size = 1;
  opts.relevant_labs = {0, 1};
  DeltaResult res = build_delta_sequences(cohort, imputed, opts);

  for (int p = 1; p < cohort.n_patients(); ++p) {
    CHECK(res.seqs.delta[static_cast<std::size_t>(p)].cwiseAbs().maxCoeff() == 0.0);
    for (int t = 0; t < T; ++t)
      CHECK(res.seqs.unmatched[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)] == 0);
  }
  // The treated patient's delta shows up exactly at the realization window.
  for (int t = 0; t < T; ++t) {
    bool has = res.seqs.control[0][static_cast<std::size_t>(t)].patient >= 0 ||
               res.seqs.unmatched[0][static_cast<std::size_t>(t)] != 0;
    CHECK(has == (t == 7));
  }
  REQUIRE(res.report.size() == 1);
  CHECK(res.report[0].match_rate >= 0.0);
  CHECK(res.report[0].match_rate <= 1.0);
}

TEST_CASE("delta sequences: clone pair reproduces the hand computation") {
  const int T = 8;
  MedMatrix a = med_rows(1, T);
  for (int t = 3; t < T; ++t) a(0, t) = 1;
  // Two identically-treated twins (the fit needs two members per class), the
  // untreated clone, and one far-away control.
  std::vector<MedMatrix> meds{a, med_rows(1, T), med_rows(1, T), a};
  auto cohort = testutil::tiny_cohort(meds, 1);
  std::vector<MatrixXd> imputed(4);
  for (auto& m : imputed) m = MatrixXd::Zero(1, T);
  for (int t = 0; t < T; ++t) {
    imputed[0](0, t) = 100.0 + 2.0 * t;  // treated trajectory
    imputed[1](0, t) = 100.0 + 2.0 * t;  // exact clone until divergence
    imputed[2](0, t) = 160.0;            // far-away control
    imputed[3](0, t) = 100.0 + 2.0 * t;  // treated twin
  }
  imputed[0](0, 4) = 95.0;  // post-treatment drop
  imputed[3](0, 4) = 95.0;

  DeltaOptions opts;
  opts.min_group_size = 1;
  opts.relevant_labs = {0};
  DeltaResult res = build_delta_sequences(cohort, imputed, opts);
  REQUIRE(res.report.size() == 1);
  REQUIRE(res.report[0].matched == 2);
  const auto& ctrl = res.seqs.control[0][4];
  REQUIRE(ctrl.patient == 1);
  // The clone ties at zero gap; the window-distance tie break picks its
  // same-window record.
  CHECK(ctrl.window == 3);
  double expect = 95.0 - imputed[1](0, ctrl.window + 1);
  CHECK(res.seqs.delta[0](0, 4) == Catch::Approx(expect).margin(1e-12));
  for (int t = 0; t < T; ++t)
    if (t != 4) CHECK(res.seqs.delta[0](0, t) == 0.0);
}

TEST_CASE("matched pseudo-population improves covariate balance") {
  using namespace deltaseq::synth;
  CausalStructure st = testutil::chain_structure(40, /*with_noise=*/true);
  SimulationConfig cfg;
  cfg.n_patients = 400;
  cfg.observation_rate = 1.0;
  cfg.rng_seed = 19;
  auto cohort = make_cohort(st, simulate_cohort(st, cfg, 2), false);

  auto stats = harness::compute_impute_stats(cohort);
  auto imputed = harness::impute_labs(cohort, stats);
  auto pairs = enumerate_group_pairs(cohort, 20);
  REQUIRE(!pairs.empty());

  const ComparableGroupPair* pick = &pairs[0];
  for (const auto& pr : pairs)
    if (pr.treated.size() > pick->treated.size()) pick = &pr;

  auto smd = [&](const std::vector<MemberRef>& a, const std::vector<MemberRef>& b, int lab) {
    auto stats_of = [&](const std::vector<MemberRef>& v) {
      double s = 0.0, s2 = 0.0;
      for (const auto& r : v) {
        double x = imputed[static_cast<std::size_t>(r.patient)](lab, r.window);
        s += x;
        s2 += x * x;
      }
      double mu = s / static_cast<double>(v.size());
      return std::pair{mu, s2 / static_cast<double>(v.size()) - mu * mu};
    };
    auto [ma, va] = stats_of(a);
    auto [mb, vb] = stats_of(b);
    return (ma - mb) / std::sqrt(0.5 * (va + vb) + 1e-12);
  };

  DeltaOptions opts;
  opts.min_group_size = 20;
  opts.relevant_labs = {0, 1, 2};
  DeltaResult res = build_delta_sequences(cohort, imputed, opts);
  REQUIRE(!res.report.empty());

  std::vector<MemberRef> matched_treated, matched_controls;
  for (int p = 0; p < cohort.n_patients(); ++p)
    for (int t = 1; t < st.n_windows; ++t) {
      const auto& ctrl =
          res.seqs.control[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)];
      if (ctrl.patient < 0) continue;
      for (const auto& tr : pick->treated)
        if (tr.patient == p && tr.window == t - 1) {
          matched_treated.push_back({p, t - 1});
          matched_controls.push_back(ctrl);
        }
    }
  REQUIRE(matched_treated.size() >= 10);

  int improved = 0, considered = 0;
  for (int lab = 0; lab < st.n_labs(); ++lab) {
    double before = std::abs(smd(pick->treated, pick->controls, lab));
    double after = std::abs(smd(matched_treated, matched_controls, lab));
    if (before > 0.2) {
      ++considered;
      if (after < before) ++improved;
    }
  }
  REQUIRE(considered > 0);
  CHECK(improved == considered);
}

TEST_CASE("delta file round trip preserves records and meta") {
  const int T = 8;
  MedMatrix a = med_rows(1, T);
  for (int t = 3; t < T; ++t) a(0, t) = 1;
  std::vector<MedMatrix> meds{a, med_rows(1, T)};
  auto cohort = testutil::tiny_cohort(meds, 2);
  std::vector<MatrixXd> imputed(2, MatrixXd::Constant(2, T, 100.0));
  imputed[0].row(0).setLinSpaced(T, 100.0, 130.0);

  DeltaOptions opts;
  opts.min_group_size = 1;
  opts.relevant_labs = {0, 1};
  DeltaResult res = build_delta_sequences(cohort, imputed, opts);

  std::string path = "/tmp/deltaseq_test_deltas.jsonl";
  write_deltas_jsonl(res, cohort, opts, path);
  DeltaFile f = read_deltas_jsonl(path);
  CHECK(f.meta.relevant_labs == opts.relevant_labs);
  CHECK(f.meta.min_group_size == opts.min_group_size);
  DeltaSequences rebuilt = sequences_from_file(f, cohort);
  for (int p = 0; p < 2; ++p)
    CHECK(rebuilt.delta[static_cast<std::size_t>(p)] ==
          res.seqs.delta[static_cast<std::size_t>(p)]);
}
