#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltaseq/common.hpp"
#include "deltaseq/rng.hpp"

namespace deltaseq::synth {

using json = nlohmann::json;

/// One medication line of a disease's escalation ladder. The schedule holds
/// the population-level severity effect per window since the line started;
/// past the end the last entry applies (generated schedules decay to a
/// trailing zero, so a failed line contributes nothing).
struct MedicationLine {
  std::vector<double> effect_schedule;

  double effect_at(int elapsed) const {
    if (effect_schedule.empty()) return 0.0;
    int i = std::min<int>(elapsed, static_cast<int>(effect_schedule.size()) - 1);
    return effect_schedule[static_cast<std::size_t>(std::max(i, 0))];
  }
};

/// Natural-progression coefficients: s_t = self*s_{t-1} + sum_p parent_w[p]*pa_p(t-1)
/// + drift + noise, clamped at zero.
struct Progression {
  double self_coef = 1.0;
  std::vector<double> parent_coefs;  // aligned with DiseaseSpec::parents
  double drift = 0.0;
  double noise_std = 0.0;
};

struct DiseaseSpec {
  std::string id;
  std::vector<std::string> parents;
  Progression progression;
  double init_min = 0.0;
  double init_max = 1.0;
  std::string diagnostic_lab;
  double diagnosis_threshold = 0.0;
  std::vector<MedicationLine> lines;  // 1..3
};

struct LabSpec {
  std::string id;
  double baseline = 0.0;
  std::map<std::string, double> disease_weights;  // ordered: deterministic iteration
  double obs_noise_std = 0.0;
  double process_noise_std = 0.0;
  std::string units;
};

/// Outcomes are diagnosed directly from their parent diseases' severities.
/// With hazard_scale = 0 the rule is a hard threshold on the weighted
/// severity sum; otherwise each window past onset carries a logistic hazard
/// hazard_max * sigmoid((sum - threshold) / hazard_scale), so onsets spread
/// over the late horizon instead of firing the moment the sum crosses.
struct OutcomeSpec {
  std::string id;
  std::vector<std::string> parents;
  std::vector<double> parent_weights;  // defaults to 1s
  double threshold = 0.0;
  double hazard_scale = 0.0;
  double hazard_max = 0.35;
  int earliest_onset_window = 0;
};

struct CausalStructure {
  std::vector<DiseaseSpec> diseases;
  std::vector<LabSpec> labs;
  std::vector<OutcomeSpec> outcomes;
  int n_windows = 0;
  double window_length_years = 0.5;
  double child_init_parent_weight = 0.5;
  double individual_effect_sigma = 0.25;

  // Derived lookup tables, filled by finalize().
  std::map<std::string, int> disease_index;
  std::map<std::string, int> lab_index;
  std::vector<std::vector<int>> parent_idx;          // per disease
  std::vector<int> topo_order;                       // parents before children
  std::vector<int> diagnostic_lab_idx;               // per disease
  std::vector<std::vector<std::pair<int, double>>> lab_weights;  // per lab: (disease, w)
  std::vector<int> digit_offset;                     // per disease, into the med vector
  std::vector<int> digit_disease;                    // per digit
  std::vector<int> digit_line;                       // per digit, 0-based line
  std::vector<std::vector<int>> outcome_parent_idx;  // per outcome
  int n_med_digits = 0;

  int n_diseases() const { return static_cast<int>(diseases.size()); }
  int n_labs() const { return static_cast<int>(labs.size()); }
  int n_outcomes() const { return static_cast<int>(outcomes.size()); }
  int n_dx_codes() const { return n_diseases() + n_outcomes(); }

  /// Labs causally mapped to a disease (nonzero G_l weight).
  std::vector<int> labs_of_disease(int d) const {
    std::vector<int> out;
    for (int l = 0; l < n_labs(); ++l)
      for (const auto& [dd, w] : lab_weights[static_cast<std::size_t>(l)])
        if (dd == d && w != 0.0) { out.push_back(l); break; }
    return out;
  }

  /// Default "relevant labs": union of mapped labs over diseases that carry
  /// medication lines, i.e. the labs a newly-added treatment can move.
  std::vector<int> default_relevant_labs() const {
    std::set<int> s;
    for (int d = 0; d < n_diseases(); ++d)
      if (!diseases[static_cast<std::size_t>(d)].lines.empty())
        for (int l : labs_of_disease(d)) s.insert(l);
    return {s.begin(), s.end()};
  }

  void finalize();
  void validate() const;
};

inline void CausalStructure::finalize() {
  disease_index.clear();
  lab_index.clear();
  for (int i = 0; i < n_diseases(); ++i) {
    const auto& d = diseases[static_cast<std::size_t>(i)];
    if (!disease_index.emplace(d.id, i).second)
      throw ConfigError("duplicate disease id: " + d.id);
  }
  for (int i = 0; i < n_labs(); ++i) {
    const auto& l = labs[static_cast<std::size_t>(i)];
    if (!lab_index.emplace(l.id, i).second)
      throw ConfigError("duplicate lab id: " + l.id);
  }

  parent_idx.assign(static_cast<std::size_t>(n_diseases()), {});
  for (int i = 0; i < n_diseases(); ++i) {
    for (const auto& pid : diseases[static_cast<std::size_t>(i)].parents) {
      auto it = disease_index.find(pid);
      if (it == disease_index.end())
        throw ConfigError("disease " + diseases[static_cast<std::size_t>(i)].id +
                          " references unknown parent: " + pid);
      parent_idx[static_cast<std::size_t>(i)].push_back(it->second);
    }
  }

  // Kahn toposort; stable by index so draw order is reproducible.
  {
    std::vector<int> indeg(static_cast<std::size_t>(n_diseases()), 0);
    for (int i = 0; i < n_diseases(); ++i)
      indeg[static_cast<std::size_t>(i)] =
          static_cast<int>(parent_idx[static_cast<std::size_t>(i)].size());
    topo_order.clear();
    std::vector<int> ready;
    for (int i = 0; i < n_diseases(); ++i)
      if (indeg[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
    while (!ready.empty()) {
      int u = ready.front();
      ready.erase(ready.begin());
      topo_order.push_back(u);
      for (int v = 0; v < n_diseases(); ++v)
        for (int p : parent_idx[static_cast<std::size_t>(v)])
          if (p == u && --indeg[static_cast<std::size_t>(v)] == 0) ready.push_back(v);
    }
    if (static_cast<int>(topo_order.size()) != n_diseases())
      throw ConfigError("disease parent links contain a cycle");
  }

  diagnostic_lab_idx.assign(static_cast<std::size_t>(n_diseases()), -1);
  for (int i = 0; i < n_diseases(); ++i) {
    auto it = lab_index.find(diseases[static_cast<std::size_t>(i)].diagnostic_lab);
    if (it == lab_index.end())
      throw ConfigError("disease " + diseases[static_cast<std::size_t>(i)].id +
                        " references unknown diagnostic lab: " +
                        diseases[static_cast<std::size_t>(i)].diagnostic_lab);
    diagnostic_lab_idx[static_cast<std::size_t>(i)] = it->second;
  }

  lab_weights.assign(static_cast<std::size_t>(n_labs()), {});
  for (int l = 0; l < n_labs(); ++l) {
    for (const auto& [did, w] : labs[static_cast<std::size_t>(l)].disease_weights) {
      auto it = disease_index.find(did);
      if (it == disease_index.end())
        throw ConfigError("lab " + labs[static_cast<std::size_t>(l)].id +
                          " references unknown disease: " + did);
      lab_weights[static_cast<std::size_t>(l)].emplace_back(it->second, w);
    }
  }

  digit_offset.assign(static_cast<std::size_t>(n_diseases()), 0);
  digit_disease.clear();
  digit_line.clear();
  int off = 0;
  for (int i = 0; i < n_diseases(); ++i) {
    digit_offset[static_cast<std::size_t>(i)] = off;
    int nl = static_cast<int>(diseases[static_cast<std::size_t>(i)].lines.size());
    for (int k = 0; k < nl; ++k) {
      digit_disease.push_back(i);
      digit_line.push_back(k);
    }
    off += nl;
  }
  n_med_digits = off;

  outcome_parent_idx.assign(static_cast<std::size_t>(n_outcomes()), {});
  for (int i = 0; i < n_outcomes(); ++i) {
    auto& o = outcomes[static_cast<std::size_t>(i)];
    for (const auto& pid : o.parents) {
      auto it = disease_index.find(pid);
      if (it == disease_index.end())
        throw ConfigError("outcome " + o.id + " references unknown parent disease: " + pid);
      outcome_parent_idx[static_cast<std::size_t>(i)].push_back(it->second);
    }
    if (o.parent_weights.empty())
      o.parent_weights.assign(o.parents.size(), 1.0);
    if (o.parent_weights.size() != o.parents.size())
      throw ConfigError("outcome " + o.id + ": parent_weights size mismatch");
  }
}

inline void CausalStructure::validate() const {
  if (diseases.empty()) throw ConfigError("structure has no diseases");
  if (labs.empty()) throw ConfigError("structure has no labs");
  if (n_windows < 1) throw ConfigError("n_windows must be >= 1");
  for (const auto& d : diseases) {
    if (d.lines.empty() || d.lines.size() > 3)
      throw ConfigError("disease " + d.id + " must have 1..3 medication lines");
    if (d.progression.parent_coefs.size() != d.parents.size())
      throw ConfigError("disease " + d.id + ": parent_coefs size mismatch");
    if (d.init_max < d.init_min)
      throw ConfigError("disease " + d.id + ": init_max < init_min");
    if (!(d.diagnosis_threshold > -1e300))
      throw ConfigError("disease " + d.id + ": bad diagnosis threshold");
    for (const auto& ml : d.lines)
      if (ml.effect_schedule.empty())
        throw ConfigError("disease " + d.id + ": empty medication effect schedule");
  }
  for (const auto& l : labs) {
    bool mapped = false;
    for (const auto& [did, w] : l.disease_weights)
      if (w != 0.0) mapped = true;
    if (!mapped) throw ConfigError("lab " + l.id + " maps to no disease");
    if (l.obs_noise_std < 0 || l.process_noise_std < 0)
      throw ConfigError("lab " + l.id + ": negative noise std");
  }
  for (const auto& o : outcomes) {
    if (o.parents.empty()) throw ConfigError("outcome " + o.id + " has no parent disease");
    if (o.earliest_onset_window < 0 || o.earliest_onset_window >= n_windows)
      throw ConfigError("outcome " + o.id + ": earliest_onset_window out of range");
    if (o.hazard_scale < 0) throw ConfigError("outcome " + o.id + ": negative hazard_scale");
    if (!(o.hazard_max > 0) || o.hazard_max > 1.0)
      throw ConfigError("outcome " + o.id + ": hazard_max must be in (0, 1]");
  }
  if (individual_effect_sigma < 0) throw ConfigError("individual_effect_sigma must be >= 0");
}

// ---------------------------------------------------------------------------
// JSON (de)serialization
// ---------------------------------------------------------------------------

inline json structure_to_json(const CausalStructure& st) {
  json j;
  j["n_windows"] = st.n_windows;
  j["window_length_years"] = st.window_length_years;
  j["child_init_parent_weight"] = st.child_init_parent_weight;
  j["individual_effect_sigma"] = st.individual_effect_sigma;
  j["diseases"] = json::array();
  for (const auto& d : st.diseases) {
    json jd;
    jd["id"] = d.id;
    jd["parents"] = d.parents;
    jd["progression"] = {{"self", d.progression.self_coef},
                         {"parent_weights", d.progression.parent_coefs},
                         {"drift", d.progression.drift},
                         {"noise_std", d.progression.noise_std}};
    jd["init"] = {{"min", d.init_min}, {"max", d.init_max}};
    jd["diagnostic_lab"] = d.diagnostic_lab;
    jd["diagnosis_threshold"] = d.diagnosis_threshold;
    jd["lines"] = json::array();
    for (const auto& ml : d.lines) jd["lines"].push_back({{"effect_schedule", ml.effect_schedule}});
    j["diseases"].push_back(jd);
  }
  j["labs"] = json::array();
  for (const auto& l : st.labs) {
    json jl;
    jl["id"] = l.id;
    jl["baseline"] = l.baseline;
    jl["disease_weights"] = l.disease_weights;
    jl["obs_noise_std"] = l.obs_noise_std;
    jl["process_noise_std"] = l.process_noise_std;
    jl["units"] = l.units;
    j["labs"].push_back(jl);
  }
  j["outcomes"] = json::array();
  for (const auto& o : st.outcomes) {
    json jo;
    jo["id"] = o.id;
    jo["parents"] = o.parents;
    jo["parent_weights"] = o.parent_weights;
    jo["threshold"] = o.threshold;
    jo["earliest_onset_window"] = o.earliest_onset_window;
    j["outcomes"].push_back(jo);
  }
  return j;
}

inline CausalStructure structure_from_json(const json& j) {
  CausalStructure st;
  try {
    st.n_windows = j.at("n_windows").get<int>();
    st.window_length_years = j.value("window_length_years", 0.5);
    st.child_init_parent_weight = j.value("child_init_parent_weight", 0.5);
    st.individual_effect_sigma = j.value("individual_effect_sigma", 0.25);
    for (const auto& jd : j.at("diseases")) {
      DiseaseSpec d;
      d.id = jd.at("id").get<std::string>();
      d.parents = jd.value("parents", std::vector<std::string>{});
      if (jd.contains("progression")) {
        const auto& jp = jd["progression"];
        d.progression.self_coef = jp.value("self", 1.0);
        d.progression.parent_coefs = jp.value("parent_weights", std::vector<double>{});
        d.progression.drift = jp.value("drift", 0.0);
        d.progression.noise_std = jp.value("noise_std", 0.0);
      }
      if (d.progression.parent_coefs.empty() && !d.parents.empty())
        d.progression.parent_coefs.assign(d.parents.size(), 0.0);
      if (jd.contains("init")) {
        d.init_min = jd["init"].value("min", 0.0);
        d.init_max = jd["init"].value("max", 1.0);
      }
      d.diagnostic_lab = jd.at("diagnostic_lab").get<std::string>();
      d.diagnosis_threshold = jd.at("diagnosis_threshold").get<double>();
      for (const auto& jl : jd.at("lines"))
        d.lines.push_back({jl.at("effect_schedule").get<std::vector<double>>()});
      st.diseases.push_back(std::move(d));
    }
    for (const auto& jl : j.at("labs")) {
      LabSpec l;
      l.id = jl.at("id").get<std::string>();
      l.baseline = jl.at("baseline").get<double>();
      l.disease_weights = jl.at("disease_weights").get<std::map<std::string, double>>();
      l.obs_noise_std = jl.value("obs_noise_std", 0.0);
      l.process_noise_std = jl.value("process_noise_std", 0.0);
      l.units = jl.value("units", std::string{});
      st.labs.push_back(std::move(l));
    }
    for (const auto& jo : j.value("outcomes", json::array())) {
      OutcomeSpec o;
      o.id = jo.at("id").get<std::string>();
      o.parents = jo.at("parents").get<std::vector<std::string>>();
      o.parent_weights = jo.value("parent_weights", std::vector<double>{});
      o.threshold = jo.at("threshold").get<double>();
      o.earliest_onset_window = jo.value("earliest_onset_window", st.n_windows / 2);
      st.outcomes.push_back(std::move(o));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed structure file: ") + e.what());
  }
  st.finalize();
  st.validate();
  return st;
}

inline CausalStructure load_structure(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open structure file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("structure file is not valid JSON: ") + e.what());
  }
  return structure_from_json(j);
}

inline void save_structure(const CausalStructure& st, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write structure file: " + path);
  out << structure_to_json(st).dump(2) << "\n";
}

/// Copy of a structure with every medication effect zeroed (placebo world).
inline CausalStructure make_placebo(CausalStructure st) {
  for (auto& d : st.diseases)
    for (auto& ml : d.lines)
      for (auto& e : ml.effect_schedule) e = 0.0;
  return st;
}

}  // namespace deltaseq::synth
