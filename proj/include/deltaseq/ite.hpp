#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltaseq/cohort.hpp"
#include "deltaseq/common.hpp"
#include "deltaseq/logistic.hpp"
#include "deltaseq/stats.hpp"

namespace deltaseq::ite {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;
using synth::Cohort;

struct MemberRef {
  int patient = -1;
  int window = -1;
  bool operator==(const MemberRef&) const = default;
};

/// A pair of comparable treatment-combination groups: the control side holds
/// combination `prior`; the treated side switched from `prior` by turning on
/// the digits in `added` (nonempty).
struct ComparableGroupPair {
  std::vector<std::uint8_t> prior;  // control combination, one entry per digit
  std::vector<int> added;           // digit indices newly turned on
  std::vector<MemberRef> treated;   // (patient, transition window)
  std::vector<MemberRef> controls;  // (patient, any window holding `prior`)

  std::string key() const {
    std::string s = "prior=";
    for (auto b : prior) s += b ? '1' : '0';
    s += ";add=";
    for (std::size_t i = 0; i < added.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(added[i]);
    }
    return s;
  }
};

/// Enumerate every observed (prior-combination, newly-added-set) transition
/// whose treated and control memberships both reach min_group_size. A patient
/// joins the treated side at the window its added digits first turn on, and
/// the control side at every window where it holds the prior combination.
/// Members come out in canonical (patient, window) order regardless of input
/// ordering.
inline std::vector<ComparableGroupPair> enumerate_group_pairs(const Cohort& cohort,
                                                              int min_group_size) {
  struct KeyLess {
    bool operator()(const std::pair<std::vector<std::uint8_t>, std::vector<int>>& a,
                    const std::pair<std::vector<std::uint8_t>, std::vector<int>>& b) const {
      if (a.first != b.first) return a.first < b.first;
      return a.second < b.second;
    }
  };
  std::map<std::pair<std::vector<std::uint8_t>, std::vector<int>>, ComparableGroupPair, KeyLess>
      pairs;
  std::map<std::vector<std::uint8_t>, std::vector<MemberRef>> holders;

  const int m = cohort.meta.n_meds;
  const int T = cohort.meta.n_windows;
  for (int p = 0; p < cohort.n_patients(); ++p) {
    const auto& meds = cohort.patients[static_cast<std::size_t>(p)].meds;
    std::vector<std::uint8_t> combo(static_cast<std::size_t>(m));
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < m; ++k) combo[static_cast<std::size_t>(k)] = meds(k, t);
      holders[combo].push_back({p, t});
      if (t >= 1) {
        std::vector<int> added;
        std::vector<std::uint8_t> prior(static_cast<std::size_t>(m));
        for (int k = 0; k < m; ++k) {
          prior[static_cast<std::size_t>(k)] = meds(k, t - 1);
          if (meds(k, t) && !meds(k, t - 1)) added.push_back(k);
        }
        if (!added.empty()) {
          auto& pr = pairs[{prior, added}];
          pr.prior = prior;
          pr.added = added;
          pr.treated.push_back({p, t});
        }
      }
    }
  }

  std::vector<ComparableGroupPair> out;
  for (auto& [k, pr] : pairs) {
    auto it = holders.find(pr.prior);
    if (it != holders.end()) pr.controls = it->second;
    if (static_cast<int>(pr.treated.size()) >= min_group_size &&
        static_cast<int>(pr.controls.size()) >= min_group_size)
      out.push_back(std::move(pr));
  }
  return out;
}

/// Propensity model: logistic P(Z | X) over the union population, with
/// internal predictor standardization for conditioning.
struct PropensityModel {
  LogisticFit fit;
  VectorXd mean, scale;
  std::string fitted_on;

  double prob(const VectorXd& x) const {
    VectorXd z = (x - mean).cwiseQuotient(scale);
    return fit.prob(z);
  }
};

inline PropensityModel fit_propensity(const MatrixXd& x, const VectorXd& z, double ridge = 1e-6,
                                      const std::string& key = {}) {
  PropensityModel m;
  m.fitted_on = key;
  m.mean = x.colwise().mean();
  VectorXd var = ((x.rowwise() - m.mean.transpose()).array().square().colwise().sum() /
                  std::max<double>(1.0, static_cast<double>(x.rows()) - 1.0))
                     .transpose();
  m.scale = var.array().sqrt().max(1e-12).matrix();
  for (int j = 0; j < m.scale.size(); ++j)
    if (m.scale[j] < 1e-12) m.scale[j] = 1.0;
  MatrixXd xs = (x.rowwise() - m.mean.transpose()).array().rowwise() /
                m.scale.transpose().array();
  LogisticOptions opts;
  opts.ridge = ridge;
  m.fit = fit_logistic(xs, z, opts);
  return m;
}

struct MatchedPair {
  MemberRef treated;
  MemberRef control;
  double gap = 0.0;
};

struct ScoredMember {
  MemberRef ref;
  double prob = 0.0;
};

struct MatchResult {
  std::vector<MatchedPair> matched;
  std::vector<MemberRef> unmatched;
};

namespace detail {

/// Total order on match candidates at equal propensity gap: smaller window
/// distance, then lexicographically smaller control patient id, then smaller
/// control window.
inline bool candidate_better(const MatchedPair& cand, const MatchedPair& best,
                             const std::vector<std::string>& ids) {
  if (cand.gap != best.gap) return cand.gap < best.gap;
  int cd = std::abs(cand.treated.window - cand.control.window);
  int bd = std::abs(best.treated.window - best.control.window);
  if (cd != bd) return cd < bd;
  const std::string& cid = ids[static_cast<std::size_t>(cand.control.patient)];
  const std::string& bid = ids[static_cast<std::size_t>(best.control.patient)];
  if (cid != bid) return cid < bid;
  return cand.control.window < best.control.window;
}

}  // namespace detail

/// 1-nearest matching with replacement inside a caliper. For each treated
/// record, picks the control minimizing the propensity gap, ties broken by
/// the documented total order. A control is never matched to a treated record
/// of the same patient at the same window. Output is independent of the input
/// ordering of either pool.
inline MatchResult match_groups(std::vector<ScoredMember> treated,
                                std::vector<ScoredMember> controls, double caliper,
                                const std::vector<std::string>& patient_ids) {
  if (!(caliper > 0.0)) throw ConfigError("caliper must be > 0");
  MatchResult res;
  auto by_ref = [](const ScoredMember& a, const ScoredMember& b) {
    if (a.ref.patient != b.ref.patient) return a.ref.patient < b.ref.patient;
    return a.ref.window < b.ref.window;
  };
  std::sort(treated.begin(), treated.end(), by_ref);
  std::sort(controls.begin(), controls.end(), [&](const ScoredMember& a, const ScoredMember& b) {
    if (a.prob != b.prob) return a.prob < b.prob;
    return by_ref(a, b);
  });
  std::vector<double> probs(controls.size());
  for (std::size_t i = 0; i < controls.size(); ++i) probs[i] = controls[i].prob;

  const double inf = std::numeric_limits<double>::infinity();
  for (const auto& t : treated) {
    auto pos = std::lower_bound(probs.begin(), probs.end(), t.prob) - probs.begin();
    long l = pos - 1;
    long r = pos;
    MatchedPair best;
    best.gap = inf;
    bool have = false;
    while (l >= 0 || r < static_cast<long>(controls.size())) {
      double gl = l >= 0 ? t.prob - probs[static_cast<std::size_t>(l)] : inf;
      double gr = r < static_cast<long>(controls.size())
                      ? probs[static_cast<std::size_t>(r)] - t.prob
                      : inf;
      double g = std::min(gl, gr);
      if (g > caliper) break;
      if (have && best.gap < g) break;
      long idx = (gl <= gr) ? l : r;
      const auto& c = controls[static_cast<std::size_t>(idx)];
      if (!(c.ref.patient == t.ref.patient && c.ref.window == t.ref.window)) {
        MatchedPair cand{t.ref, c.ref, g};
        if (!have || detail::candidate_better(cand, best, patient_ids)) {
          best = cand;
          have = true;
        }
      }
      if (gl <= gr)
        --l;
      else
        ++r;
    }
    if (have)
      res.matched.push_back(best);
    else
      res.unmatched.push_back(t.ref);
  }
  return res;
}

/// Delta for one matched pair over the relevant lab subset:
/// labs(P1, t1+1) - labs(P2, t2+1), from imputed lab values.
inline VectorXd compute_delta(const MatchedPair& pair, const std::vector<MatrixXd>& imputed_labs,
                              const std::vector<int>& relevant_labs) {
  const auto& a = imputed_labs[static_cast<std::size_t>(pair.treated.patient)];
  const auto& b = imputed_labs[static_cast<std::size_t>(pair.control.patient)];
  int t1 = pair.treated.window + 1;
  int t2 = pair.control.window + 1;
  if (t1 >= a.cols() || t2 >= b.cols())
    throw DataError("compute_delta: next window beyond the horizon");
  VectorXd d(static_cast<Eigen::Index>(relevant_labs.size()));
  for (std::size_t k = 0; k < relevant_labs.size(); ++k)
    d[static_cast<Eigen::Index>(k)] = a(relevant_labs[k], t1) - b(relevant_labs[k], t2);
  return d;
}

struct DeltaOptions {
  double caliper = std::numeric_limits<double>::quiet_NaN();  // NaN: 0.2 * sd(propensity)
  int min_group_size = 10;
  std::vector<int> relevant_labs;           // resolved lab indices; required
  std::vector<std::uint8_t> fit_patients;   // per-patient mask; empty = all
  double propensity_ridge = 1e-6;
};

/// Per-patient Delta sequence aligned to windows: the computed vector at the
/// window following a matched medication addition, zero elsewhere; unmatched
/// additions keep the zero vector and raise the flag at their realization
/// window.
struct DeltaSequences {
  std::vector<MatrixXd> delta;                        // per patient: |L| x T
  std::vector<std::vector<std::uint8_t>> unmatched;   // per patient, per window
  std::vector<std::vector<MemberRef>> control;        // matched control per window
  std::vector<int> relevant_labs;
  int dropped_horizon = 0;  // treated transitions at the final window
};

struct MatchReportRow {
  std::string pair_key;
  int treated_total = 0;
  int matched = 0;
  int unmatched = 0;
  int dropped = 0;
  int control_pool = 0;
  double match_rate = 0.0;
  double mean_gap = 0.0;
  double caliper_used = 0.0;
  double propensity_coef_norm = 0.0;  // statistic of the fitted model
  bool fit_failed = false;
};

struct DeltaResult {
  DeltaSequences seqs;
  std::vector<MatchReportRow> report;
};

/// Full sequential-ITE pipeline: enumerate comparable group pairs, fit a
/// propensity model per pair (on fit_patients members when given), match
/// within the caliper, difference next-window labs. Failed pairs are logged
/// in the report and do not abort the others.
inline DeltaResult build_delta_sequences(const Cohort& cohort,
                                         const std::vector<MatrixXd>& imputed_labs,
                                         const DeltaOptions& opts) {
  if (opts.relevant_labs.empty())
    throw ConfigError("build_delta_sequences: relevant_labs must not be empty");
  for (int l : opts.relevant_labs)
    if (l < 0 || l >= cohort.meta.n_labs) throw ConfigError("relevant lab index out of range");
  if (!opts.fit_patients.empty() &&
      static_cast<int>(opts.fit_patients.size()) != cohort.n_patients())
    throw ConfigError("fit_patients mask size mismatch");

  const int T = cohort.meta.n_windows;
  const int P = static_cast<int>(opts.relevant_labs.size());
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(cohort.n_patients()));
  for (const auto& p : cohort.patients) ids.push_back(p.id);

  DeltaResult out;
  out.seqs.relevant_labs = opts.relevant_labs;
  out.seqs.delta.assign(static_cast<std::size_t>(cohort.n_patients()), MatrixXd::Zero(P, T));
  out.seqs.unmatched.assign(static_cast<std::size_t>(cohort.n_patients()),
                            std::vector<std::uint8_t>(static_cast<std::size_t>(T), 0));
  out.seqs.control.assign(static_cast<std::size_t>(cohort.n_patients()),
                          std::vector<MemberRef>(static_cast<std::size_t>(T)));

  auto in_fit = [&](int patient) {
    return opts.fit_patients.empty() || opts.fit_patients[static_cast<std::size_t>(patient)];
  };
  auto member_x = [&](const MemberRef& r) {
    return VectorXd(imputed_labs[static_cast<std::size_t>(r.patient)].col(r.window));
  };

  auto pairs = enumerate_group_pairs(cohort, opts.min_group_size);
  for (const auto& pr : pairs) {
    MatchReportRow row;
    row.pair_key = pr.key();
    row.control_pool = static_cast<int>(pr.controls.size());

    // Realizable members only: delta needs the next window on both sides.
    std::vector<MemberRef> treated;
    for (const auto& t : pr.treated) {
      if (t.window + 1 >= T) {
        ++out.seqs.dropped_horizon;
        ++row.dropped;
      } else {
        treated.push_back(t);
      }
    }
    std::vector<MemberRef> controls;
    for (const auto& c : pr.controls)
      if (c.window + 1 < T) controls.push_back(c);
    row.treated_total = static_cast<int>(treated.size());
    if (treated.empty()) {
      out.report.push_back(row);
      continue;
    }

    // Fit population: union of the pair's full memberships, restricted to
    // fit_patients; the horizon filter only affects matching.
    std::vector<MemberRef> fit_members;
    std::vector<double> fit_labels;
    for (const auto& t : pr.treated)
      if (in_fit(t.patient)) {
        fit_members.push_back(t);
        fit_labels.push_back(1.0);
      }
    for (const auto& c : pr.controls)
      if (in_fit(c.patient)) {
        fit_members.push_back(c);
        fit_labels.push_back(0.0);
      }
    int n_pos = static_cast<int>(std::count(fit_labels.begin(), fit_labels.end(), 1.0));
    int n_neg = static_cast<int>(fit_labels.size()) - n_pos;
    if (n_pos < 2 || n_neg < 2) {
      row.fit_failed = true;
      for (const auto& t : treated)
        out.seqs.unmatched[static_cast<std::size_t>(t.patient)]
                          [static_cast<std::size_t>(t.window + 1)] = 1;
      row.unmatched = static_cast<int>(treated.size());
      out.report.push_back(row);
      continue;
    }

    MatrixXd x(static_cast<Eigen::Index>(fit_members.size()), cohort.meta.n_labs);
    VectorXd z(static_cast<Eigen::Index>(fit_members.size()));
    for (std::size_t i = 0; i < fit_members.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = member_x(fit_members[i]).transpose();
      z[static_cast<Eigen::Index>(i)] = fit_labels[i];
    }
    PropensityModel model;
    try {
      model = fit_propensity(x, z, opts.propensity_ridge, pr.key());
    } catch (const DataError&) {
      row.fit_failed = true;
      for (const auto& t : treated)
        out.seqs.unmatched[static_cast<std::size_t>(t.patient)]
                          [static_cast<std::size_t>(t.window + 1)] = 1;
      row.unmatched = static_cast<int>(treated.size());
      out.report.push_back(row);
      continue;
    }

    row.propensity_coef_norm = model.fit.coef.norm();

    double caliper = opts.caliper;
    if (!(caliper > 0.0)) {
      // Conventional heuristic: 0.2 * sd of the fitted probabilities over the
      // fit population.
      VectorXd probs(static_cast<Eigen::Index>(fit_members.size()));
      for (std::size_t i = 0; i < fit_members.size(); ++i)
        probs[static_cast<Eigen::Index>(i)] = model.prob(member_x(fit_members[i]));
      double mu = probs.mean();
      double sd = std::sqrt((probs.array() - mu).square().sum() /
                            std::max<double>(1.0, static_cast<double>(probs.size()) - 1.0));
      caliper = std::max(0.2 * sd, 1e-8);
    }
    row.caliper_used = caliper;

    std::vector<ScoredMember> st, sc;
    st.reserve(treated.size());
    sc.reserve(controls.size());
    for (const auto& t : treated) st.push_back({t, model.prob(member_x(t))});
    for (const auto& c : controls) sc.push_back({c, model.prob(member_x(c))});

    MatchResult mr = match_groups(st, sc, caliper, ids);
    double gap_sum = 0.0;
    for (const auto& mp : mr.matched) {
      VectorXd d = compute_delta(mp, imputed_labs, opts.relevant_labs);
      int w = mp.treated.window + 1;
      out.seqs.delta[static_cast<std::size_t>(mp.treated.patient)].col(w) = d;
      out.seqs.control[static_cast<std::size_t>(mp.treated.patient)]
                      [static_cast<std::size_t>(w)] = mp.control;
      gap_sum += mp.gap;
    }
    for (const auto& u : mr.unmatched)
      out.seqs.unmatched[static_cast<std::size_t>(u.patient)]
                        [static_cast<std::size_t>(u.window + 1)] = 1;
    row.matched = static_cast<int>(mr.matched.size());
    row.unmatched = static_cast<int>(mr.unmatched.size());
    row.match_rate = row.treated_total > 0
                         ? static_cast<double>(row.matched) / row.treated_total
                         : 0.0;
    row.mean_gap = row.matched > 0 ? gap_sum / row.matched : 0.0;
    out.report.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Delta file IO (JSONL with a meta first line) and the match report CSV.
// ---------------------------------------------------------------------------

struct DeltaFileMeta {
  std::vector<int> relevant_labs;
  double caliper = std::numeric_limits<double>::quiet_NaN();  // NaN = auto
  int min_group_size = 10;
  int n_windows = 0;
};

struct DeltaFile {
  DeltaFileMeta meta;
  struct Record {
    std::string patient_id;
    int window = 0;
    std::vector<double> delta;
    bool unmatched = false;
    std::string control_id;  // empty if none
    int control_window = -1;
  };
  std::vector<Record> records;
};

inline void write_deltas_jsonl(const DeltaResult& res, const Cohort& cohort,
                               const DeltaOptions& opts, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write delta file: " + path);
  json meta;
  meta["delta_meta"] = {{"relevant_labs", res.seqs.relevant_labs},
                        {"caliper", std::isnan(opts.caliper) ? json(nullptr) : json(opts.caliper)},
                        {"min_group_size", opts.min_group_size},
                        {"n_windows", cohort.meta.n_windows},
                        {"dropped_horizon", res.seqs.dropped_horizon}};
  out << meta.dump() << "\n";
  const int T = cohort.meta.n_windows;
  for (int p = 0; p < cohort.n_patients(); ++p) {
    for (int t = 0; t < T; ++t) {
      bool um = res.seqs.unmatched[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)];
      const auto& ctrl = res.seqs.control[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)];
      bool has = um || ctrl.patient >= 0;
      if (!has) continue;
      json j;
      j["patient_id"] = cohort.patients[static_cast<std::size_t>(p)].id;
      j["window"] = t;
      json dv = json::array();
      for (int k = 0; k < res.seqs.delta[static_cast<std::size_t>(p)].rows(); ++k)
        dv.push_back(res.seqs.delta[static_cast<std::size_t>(p)](k, t));
      j["delta"] = dv;
      j["unmatched"] = um;
      if (ctrl.patient >= 0)
        j["control"] = {{"patient_id", cohort.patients[static_cast<std::size_t>(ctrl.patient)].id},
                        {"window", ctrl.window}};
      else
        j["control"] = nullptr;
      out << j.dump() << "\n";
    }
  }
}

inline DeltaFile read_deltas_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open delta file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty delta file: " + path);
  DeltaFile f;
  try {
    json meta = json::parse(line);
    const auto& m = meta.at("delta_meta");
    f.meta.relevant_labs = m.at("relevant_labs").get<std::vector<int>>();
    if (!m.at("caliper").is_null()) f.meta.caliper = m.at("caliper").get<double>();
    f.meta.min_group_size = m.at("min_group_size").get<int>();
    f.meta.n_windows = m.at("n_windows").get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("delta file lacks a valid meta line: ") + e.what());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed delta line: ") + e.what());
    }
    DeltaFile::Record r;
    r.patient_id = j.at("patient_id").get<std::string>();
    r.window = j.at("window").get<int>();
    r.delta = j.at("delta").get<std::vector<double>>();
    r.unmatched = j.at("unmatched").get<bool>();
    if (j.contains("control") && !j["control"].is_null()) {
      r.control_id = j["control"].at("patient_id").get<std::string>();
      r.control_window = j["control"].at("window").get<int>();
    }
    f.records.push_back(std::move(r));
  }
  return f;
}

/// Rebuild in-memory sequences from a delta file (zero-vector default).
inline DeltaSequences sequences_from_file(const DeltaFile& f, const Cohort& cohort) {
  DeltaSequences s;
  s.relevant_labs = f.meta.relevant_labs;
  const int T = cohort.meta.n_windows;
  const int P = static_cast<int>(f.meta.relevant_labs.size());
  s.delta.assign(static_cast<std::size_t>(cohort.n_patients()), MatrixXd::Zero(P, T));
  s.unmatched.assign(static_cast<std::size_t>(cohort.n_patients()),
                     std::vector<std::uint8_t>(static_cast<std::size_t>(T), 0));
  s.control.assign(static_cast<std::size_t>(cohort.n_patients()),
                   std::vector<MemberRef>(static_cast<std::size_t>(T)));
  std::map<std::string, int> index;
  for (int p = 0; p < cohort.n_patients(); ++p)
    index[cohort.patients[static_cast<std::size_t>(p)].id] = p;
  for (const auto& r : f.records) {
    auto it = index.find(r.patient_id);
    if (it == index.end()) throw DataError("delta record for unknown patient: " + r.patient_id);
    if (r.window < 0 || r.window >= T) throw DataError("delta record window out of range");
    if (static_cast<int>(r.delta.size()) != P) throw DataError("delta record width mismatch");
    for (int k = 0; k < P; ++k)
      s.delta[static_cast<std::size_t>(it->second)](k, r.window) =
          r.delta[static_cast<std::size_t>(k)];
    s.unmatched[static_cast<std::size_t>(it->second)][static_cast<std::size_t>(r.window)] =
        r.unmatched ? 1 : 0;
    if (!r.control_id.empty()) {
      auto ct = index.find(r.control_id);
      if (ct != index.end())
        s.control[static_cast<std::size_t>(it->second)][static_cast<std::size_t>(r.window)] = {
            ct->second, r.control_window};
    }
  }
  return s;
}

inline void write_match_report_csv(const std::vector<MatchReportRow>& rows,
                                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write match report: " + path);
  out << "pair_key,treated,matched,unmatched,dropped,control_pool,match_rate,mean_gap,"
         "caliper,fit_failed\n";
  char buf[64];
  for (const auto& r : rows) {
    out << '"' << r.pair_key << '"' << ',' << r.treated_total << ',' << r.matched << ','
        << r.unmatched << ',' << r.dropped << ',' << r.control_pool << ',';
    std::snprintf(buf, sizeof buf, "%.6f", r.match_rate);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.6g", r.mean_gap);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.6g", r.caliper_used);
    out << buf << ',' << (r.fit_failed ? 1 : 0) << "\n";
  }
}

}  // namespace deltaseq::ite
