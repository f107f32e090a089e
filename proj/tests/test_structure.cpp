#include <catch2/catch_amalgamated.hpp>

#include "deltaseq/random_structure.hpp"
#include "deltaseq/structure.hpp"
#include "helpers.hpp"

using namespace deltaseq;
using namespace deltaseq::synth;

TEST_CASE("explicit two-disease chain with one outcome validates") {
  CausalStructure st = testutil::chain_structure();
  REQUIRE(st.n_diseases() == 2);
  REQUIRE(st.n_outcomes() == 1);
  int dag_edges = 0;
  for (const auto& pars : st.parent_idx) dag_edges += static_cast<int>(pars.size());
  CHECK(dag_edges == 1);
  CHECK(st.n_med_digits == 3);
  CHECK(st.digit_offset[1] == 2);
}

TEST_CASE("random generation matches the requested scale and is deterministic") {
  RandomStructureParams p;
  p.n_diseases = 10;
  p.n_labs = 20;
  p.n_outcomes = 4;
  p.seed = 7;
  CausalStructure a = build_random_structure(p);
  CausalStructure b = build_random_structure(p);
  CHECK(a.n_diseases() == 10);
  CHECK(a.n_labs() == 20);
  CHECK(a.n_outcomes() == 4);
  for (const auto& d : a.diseases) {
    CHECK(d.lines.size() >= 1);
    CHECK(d.lines.size() <= 3);
  }
  CHECK(structure_to_json(a).dump() == structure_to_json(b).dump());

  p.seed = 8;
  CausalStructure c = build_random_structure(p);
  CHECK(structure_to_json(a).dump() != structure_to_json(c).dump());
}

TEST_CASE("degenerate and malformed structures are rejected") {
  RandomStructureParams p;
  p.n_diseases = 0;
  CHECK_THROWS_AS(build_random_structure(p), ConfigError);

  CausalStructure st = testutil::chain_structure();

  SECTION("cyclic parents") {
    st.diseases[0].parents = {"d1"};
    st.diseases[0].progression.parent_coefs = {0.1};
    CHECK_THROWS_AS(st.finalize(), ConfigError);
  }
  SECTION("lab referencing unknown disease") {
    st.labs[0].disease_weights = {{"nope", 1.0}};
    CHECK_THROWS_AS(st.finalize(), ConfigError);
  }
  SECTION("too many medication lines") {
    st.diseases[0].lines.push_back({{-0.1}});
    st.diseases[0].lines.push_back({{-0.1}});
    CHECK_THROWS_AS(st.validate(), ConfigError);
  }
  SECTION("outcome without parents") {
    st.outcomes[0].parents.clear();
    st.outcomes[0].parent_weights.clear();
    st.finalize();
    CHECK_THROWS_AS(st.validate(), ConfigError);
  }
  SECTION("unmapped lab") {
    st.labs[2].disease_weights = {{"d0", 0.0}};
    st.finalize();
    CHECK_THROWS_AS(st.validate(), ConfigError);
  }
}

TEST_CASE("structure JSON round trip preserves content") {
  CausalStructure a = testutil::chain_structure();
  CausalStructure b = structure_from_json(structure_to_json(a));
  CHECK(structure_to_json(a).dump() == structure_to_json(b).dump());
  CHECK(b.diseases[0].lines[1].effect_schedule == a.diseases[0].lines[1].effect_schedule);
  CHECK(b.outcomes[0].earliest_onset_window == a.outcomes[0].earliest_onset_window);
}

TEST_CASE("relevant lab defaults follow the causal map") {
  CausalStructure st = testutil::chain_structure();
  // All three labs map to a disease with medication lines.
  CHECK(st.default_relevant_labs() == std::vector<int>{0, 1, 2});
  CHECK(st.labs_of_disease(0) == std::vector<int>{0, 2});
}

TEST_CASE("placebo copy zeroes every schedule") {
  CausalStructure st = make_placebo(testutil::chain_structure());
  for (const auto& d : st.diseases)
    for (const auto& ml : d.lines)
      for (double e : ml.effect_schedule) CHECK(e == 0.0);
}
