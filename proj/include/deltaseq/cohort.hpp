#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltaseq/common.hpp"
#include "deltaseq/simulate.hpp"
#include "deltaseq/structure.hpp"

namespace deltaseq::synth {

/// Structure-level metadata written as the first JSONL line of a cohort file.
/// It carries what downstream estimation needs without the structure file:
/// digit -> disease mapping and disease -> causally mapped lab indices.
struct CohortMeta {
  int n_windows = 0;
  int n_labs = 0;
  int n_meds = 0;
  int n_dx = 0;
  std::vector<std::string> lab_ids;
  std::vector<std::string> dx_ids;  // diseases first, then outcomes
  std::vector<std::string> digit_disease;
  std::vector<int> digit_line;  // 1-based treatment line per digit
  std::map<std::string, std::vector<int>> disease_labs;

  std::vector<int> default_relevant_labs() const {
    std::set<int> s;
    for (std::size_t j = 0; j < digit_disease.size(); ++j) {
      auto it = disease_labs.find(digit_disease[j]);
      if (it != disease_labs.end()) s.insert(it->second.begin(), it->second.end());
    }
    return {s.begin(), s.end()};
  }

  int dx_code(const std::string& id) const {
    for (std::size_t i = 0; i < dx_ids.size(); ++i)
      if (dx_ids[i] == id) return static_cast<int>(i);
    throw ConfigError("unknown dx code: " + id);
  }

  int lab_code(const std::string& id) const {
    for (std::size_t i = 0; i < lab_ids.size(); ++i)
      if (lab_ids[i] == id) return static_cast<int>(i);
    throw ConfigError("unknown lab id: " + id);
  }
};

struct CohortPatient {
  std::string id;
  MatrixXu8 meds;          // digit x window
  MatrixXd labs_observed;  // lab x window, NaN missing
  MatrixXu8 observed;      // lab x window
  MatrixXu8 dx;            // code x window
  // Ground truth, present only when the cohort was written with it.
  bool has_truth = false;
  MatrixXd severity;
  MatrixXd labs_true;
  VectorXd individual_effects;
};

struct Cohort {
  CohortMeta meta;
  std::vector<CohortPatient> patients;

  int n_patients() const { return static_cast<int>(patients.size()); }

  int patient_index(const std::string& id) const {
    for (int i = 0; i < n_patients(); ++i)
      if (patients[static_cast<std::size_t>(i)].id == id) return i;
    throw DataError("unknown patient id: " + id);
  }
};

inline CohortMeta make_cohort_meta(const CausalStructure& st) {
  CohortMeta m;
  m.n_windows = st.n_windows;
  m.n_labs = st.n_labs();
  m.n_meds = st.n_med_digits;
  m.n_dx = st.n_dx_codes();
  for (const auto& l : st.labs) m.lab_ids.push_back(l.id);
  for (const auto& d : st.diseases) m.dx_ids.push_back(d.id);
  for (const auto& o : st.outcomes) m.dx_ids.push_back(o.id);
  for (int j = 0; j < st.n_med_digits; ++j) {
    m.digit_disease.push_back(
        st.diseases[static_cast<std::size_t>(st.digit_disease[static_cast<std::size_t>(j)])].id);
    m.digit_line.push_back(st.digit_line[static_cast<std::size_t>(j)] + 1);
  }
  for (int d = 0; d < st.n_diseases(); ++d)
    m.disease_labs[st.diseases[static_cast<std::size_t>(d)].id] = st.labs_of_disease(d);
  return m;
}

inline CohortPatient to_cohort_patient(const PatientTrajectory& tr, bool keep_truth) {
  CohortPatient p;
  p.id = tr.patient_id;
  p.meds = tr.meds;
  p.labs_observed = tr.labs_observed;
  p.observed = tr.observed;
  p.dx = tr.dx;
  if (keep_truth) {
    p.has_truth = true;
    p.severity = tr.severity;
    p.labs_true = tr.labs_true;
    p.individual_effects = tr.individual_effects;
  }
  return p;
}

inline Cohort make_cohort(const CausalStructure& st, std::vector<PatientTrajectory> trajectories,
                          bool keep_truth) {
  Cohort c;
  c.meta = make_cohort_meta(st);
  c.patients.reserve(trajectories.size());
  for (const auto& tr : trajectories) c.patients.push_back(to_cohort_patient(tr, keep_truth));
  return c;
}

// ---------------------------------------------------------------------------
// JSONL IO. Per spec, matrices are written window-major: row per window.
// ---------------------------------------------------------------------------

namespace detail {

inline json u8_matrix_to_rows(const MatrixXu8& m) {
  json rows = json::array();
  for (int t = 0; t < m.cols(); ++t) {
    json row = json::array();
    for (int r = 0; r < m.rows(); ++r) row.push_back(static_cast<int>(m(r, t)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json d_matrix_to_rows(const MatrixXd& m) {
  json rows = json::array();
  for (int t = 0; t < m.cols(); ++t) {
    json row = json::array();
    for (int r = 0; r < m.rows(); ++r) row.push_back(m(r, t));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json labs_to_rows(const MatrixXd& labs, const MatrixXu8& mask) {
  json rows = json::array();
  for (int t = 0; t < labs.cols(); ++t) {
    json row = json::array();
    for (int r = 0; r < labs.rows(); ++r) {
      if (mask(r, t))
        row.push_back(labs(r, t));
      else
        row.push_back(nullptr);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline void write_cohort_jsonl(const Cohort& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write cohort file: " + path);
  json meta;
  meta["cohort_meta"] = {{"n_windows", c.meta.n_windows},
                         {"n_labs", c.meta.n_labs},
                         {"n_meds", c.meta.n_meds},
                         {"n_dx", c.meta.n_dx},
                         {"lab_ids", c.meta.lab_ids},
                         {"dx_ids", c.meta.dx_ids},
                         {"digit_disease", c.meta.digit_disease},
                         {"digit_line", c.meta.digit_line},
                         {"disease_labs", c.meta.disease_labs}};
  out << meta.dump() << "\n";
  for (const auto& p : c.patients) {
    json j;
    j["id"] = p.id;
    j["meds"] = detail::u8_matrix_to_rows(p.meds);
    j["labs_observed"] = detail::labs_to_rows(p.labs_observed, p.observed);
    j["dx"] = detail::u8_matrix_to_rows(p.dx);
    if (p.has_truth) {
      j["severity"] = detail::d_matrix_to_rows(p.severity);
      j["labs_true"] = detail::d_matrix_to_rows(p.labs_true);
      json ie = json::array();
      for (int k = 0; k < p.individual_effects.size(); ++k) ie.push_back(p.individual_effects[k]);
      j["individual_effects"] = ie;
    }
    out << j.dump() << "\n";
  }
}

inline Cohort read_cohort_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open cohort file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty cohort file: " + path);
  Cohort c;
  try {
    json meta = json::parse(line);
    const auto& m = meta.at("cohort_meta");
    c.meta.n_windows = m.at("n_windows").get<int>();
    c.meta.n_labs = m.at("n_labs").get<int>();
    c.meta.n_meds = m.at("n_meds").get<int>();
    c.meta.n_dx = m.at("n_dx").get<int>();
    c.meta.lab_ids = m.at("lab_ids").get<std::vector<std::string>>();
    c.meta.dx_ids = m.at("dx_ids").get<std::vector<std::string>>();
    c.meta.digit_disease = m.at("digit_disease").get<std::vector<std::string>>();
    c.meta.digit_line = m.at("digit_line").get<std::vector<int>>();
    c.meta.disease_labs = m.at("disease_labs").get<std::map<std::string, std::vector<int>>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("cohort file lacks a valid meta line: ") + e.what());
  }
  const int T = c.meta.n_windows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed cohort line: ") + e.what());
    }
    CohortPatient p;
    p.id = j.at("id").get<std::string>();
    const auto& meds = j.at("meds");
    const auto& labs = j.at("labs_observed");
    const auto& dx = j.at("dx");
    if (static_cast<int>(meds.size()) != T || static_cast<int>(labs.size()) != T ||
        static_cast<int>(dx.size()) != T)
      throw DataError("patient " + p.id + ": window count mismatch");
    p.meds = MatrixXu8::Zero(c.meta.n_meds, T);
    p.labs_observed = MatrixXd::Constant(c.meta.n_labs, T, std::numeric_limits<double>::quiet_NaN());
    p.observed = MatrixXu8::Zero(c.meta.n_labs, T);
    p.dx = MatrixXu8::Zero(c.meta.n_dx, T);
    for (int t = 0; t < T; ++t) {
      const auto& mrow = meds[static_cast<std::size_t>(t)];
      const auto& lrow = labs[static_cast<std::size_t>(t)];
      const auto& drow = dx[static_cast<std::size_t>(t)];
      if (static_cast<int>(mrow.size()) != c.meta.n_meds ||
          static_cast<int>(lrow.size()) != c.meta.n_labs ||
          static_cast<int>(drow.size()) != c.meta.n_dx)
        throw DataError("patient " + p.id + ": row width mismatch at window " + std::to_string(t));
      for (int k = 0; k < c.meta.n_meds; ++k)
        p.meds(k, t) = static_cast<std::uint8_t>(mrow[static_cast<std::size_t>(k)].get<int>());
      for (int k = 0; k < c.meta.n_labs; ++k) {
        const auto& cell = lrow[static_cast<std::size_t>(k)];
        if (!cell.is_null()) {
          p.labs_observed(k, t) = cell.get<double>();
          p.observed(k, t) = 1;
        }
      }
      for (int k = 0; k < c.meta.n_dx; ++k)
        p.dx(k, t) = static_cast<std::uint8_t>(drow[static_cast<std::size_t>(k)].get<int>());
    }
    if (j.contains("severity")) {
      p.has_truth = true;
      const auto& sev = j["severity"];
      const auto& lt = j["labs_true"];
      int D = static_cast<int>(sev[0].size());
      p.severity = MatrixXd::Zero(D, T);
      p.labs_true = MatrixXd::Zero(c.meta.n_labs, T);
      for (int t = 0; t < T; ++t) {
        for (int d = 0; d < D; ++d) p.severity(d, t) = sev[static_cast<std::size_t>(t)][static_cast<std::size_t>(d)].get<double>();
        for (int k = 0; k < c.meta.n_labs; ++k)
          p.labs_true(k, t) = lt[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)].get<double>();
      }
      auto ie = j["individual_effects"].get<std::vector<double>>();
      p.individual_effects = Eigen::Map<VectorXd>(ie.data(), static_cast<Eigen::Index>(ie.size()));
    }
    c.patients.push_back(std::move(p));
  }
  return c;
}

}  // namespace deltaseq::synth
