#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "deltaseq/cohort.hpp"
#include "deltaseq/common.hpp"
#include "deltaseq/dataset.hpp"
#include "deltaseq/ite.hpp"
#include "deltaseq/linear_models.hpp"
#include "deltaseq/metrics.hpp"
#include "deltaseq/stats.hpp"
#include "deltaseq/training.hpp"

namespace deltaseq::harness {

using nlohmann::json;

enum class ModelKind { glm, glmer, lstm, gru };

inline std::string model_name(ModelKind m) {
  switch (m) {
    case ModelKind::glm: return "glm";
    case ModelKind::glmer: return "glmer";
    case ModelKind::lstm: return "lstm";
    default: return "gru";
  }
}

inline ModelKind model_from_name(const std::string& s) {
  if (s == "glm") return ModelKind::glm;
  if (s == "glmer") return ModelKind::glmer;
  if (s == "lstm") return ModelKind::lstm;
  if (s == "gru") return ModelKind::gru;
  throw ConfigError("unknown model: " + s);
}

inline bool is_recurrent(ModelKind m) { return m == ModelKind::lstm || m == ModelKind::gru; }

/// One grid cell: outcome x model x method x time step.
struct CellConfig {
  std::string outcome;
  ModelKind model = ModelKind::glm;
  Method method = Method::none;
  int time_step = 10;
};

struct GridSpec {
  std::vector<std::string> outcomes;
  std::vector<ModelKind> models{ModelKind::glm, ModelKind::glmer, ModelKind::lstm,
                                ModelKind::gru};
  std::vector<Method> methods{Method::none, Method::augment, Method::pretrain};
  std::map<std::string, std::vector<Method>> model_methods;  // optional per-model override
  std::vector<int> time_steps{10, 20, 30};
  Task task = Task::diagnosis;
  int horizon = 5;
  int runs = 3;
  double train_fraction = 0.8;
  std::uint64_t base_seed = 0;

  // Delta pipeline settings (normally taken from the delta file's meta line).
  double caliper = std::numeric_limits<double>::quiet_NaN();
  int min_group_size = 10;
  std::vector<int> relevant_labs;

  double glm_ridge = 1e-3;
  models::TrainConfig train;
  int pretrain_epochs = 40;

  void validate() const {
    // An empty outcome list is legal: the grid is empty and the report
    // degenerates to its header.
    if (time_steps.empty()) throw ConfigError("grid: no time steps");
    for (int k : time_steps)
      if (k < 1) throw ConfigError("grid: time_step must be >= 1");
    if (horizon < 1) throw ConfigError("grid: horizon must be >= 1");
    if (runs < 1) throw ConfigError("grid: runs must be >= 1");
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
      throw ConfigError("grid: train_fraction must be in (0, 1)");
  }

  std::vector<Method> methods_for(ModelKind m) const {
    std::vector<Method> base;
    auto it = model_methods.find(model_name(m));
    if (it != model_methods.end())
      base = it->second;
    else
      base = methods;
    std::vector<Method> out;
    for (Method me : base) {
      // Pretraining applies to the recurrent models only.
      if (me == Method::pretrain && !is_recurrent(m)) continue;
      out.push_back(me);
    }
    return out;
  }

  std::vector<CellConfig> cells() const {
    std::vector<CellConfig> out;
    for (const auto& oc : outcomes)
      for (ModelKind m : models)
        for (Method me : methods_for(m))
          for (int k : time_steps) out.push_back({oc, m, me, k});
    return out;
  }
};

struct ResultRow {
  CellConfig cell;
  std::string metric_name;      // AUC or MSE
  std::vector<double> run_values;  // per run; NaN for invalid runs
  double mean = std::numeric_limits<double>::quiet_NaN();
  int valid_runs = 0;
  std::string error;  // nonempty when the whole cell failed
};

/// Per-run shared state: split, imputation, delta pipeline, scalers. All
/// statistics are fitted on the run's training patients only.
struct RunContext {
  std::vector<std::uint8_t> train_mask, test_mask;
  std::vector<Eigen::MatrixXd> imputed;
  ite::DeltaResult delta;
  FeatureScaler lab_scaler, delta_scaler;
};

inline RunContext make_run_context(const synth::Cohort& cohort, const GridSpec& spec, int run) {
  const int n = cohort.n_patients();
  RunContext ctx;
  ctx.train_mask.assign(static_cast<std::size_t>(n), 0);
  ctx.test_mask.assign(static_cast<std::size_t>(n), 0);
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(spec.base_seed + static_cast<std::uint64_t>(run));
  for (int i = n - 1; i > 0; --i) {
    int j = rng.uniform_int(i + 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  int n_train = static_cast<int>(spec.train_fraction * n);
  n_train = std::clamp(n_train, 1, n - 1);
  for (int i = 0; i < n; ++i) {
    if (i < n_train)
      ctx.train_mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    else
      ctx.test_mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  }

  ImputeStats stats = compute_impute_stats(cohort, ctx.train_mask);
  ctx.imputed = impute_labs(cohort, stats);

  ite::DeltaOptions opts;
  opts.caliper = spec.caliper;
  opts.min_group_size = spec.min_group_size;
  opts.relevant_labs =
      spec.relevant_labs.empty() ? cohort.meta.default_relevant_labs() : spec.relevant_labs;
  opts.fit_patients = ctx.train_mask;
  ctx.delta = ite::build_delta_sequences(cohort, ctx.imputed, opts);

  ctx.lab_scaler = fit_lab_scaler(ctx.imputed, ctx.train_mask);
  ctx.delta_scaler = fit_delta_scaler(ctx.delta.seqs, ctx.train_mask);
  return ctx;
}

/// Wald p-values of the delta coefficients of one augmented linear fit,
/// skipping zero-variance design columns.
inline std::vector<double> delta_pvalues(const models::LinearModel& fit,
                                         const Eigen::MatrixXd& design, int time_step, int n_labs,
                                         int n_delta) {
  std::vector<double> out;
  for (int col : delta_design_columns(time_step, n_labs, n_delta)) {
    double mu = design.col(col).mean();
    double var = (design.col(col).array() - mu).square().sum();
    if (var < 1e-20) continue;
    out.push_back(models::wald_pvalues(fit, {col})[0]);
  }
  return out;
}

struct CellOutput {
  ResultRow row;
  std::vector<double> delta_pvals;  // linear augmented fits only, pooled over runs
};

namespace detail {

struct PretrainKey {
  models::CellType cell;
  int time_step = 0;
  int run = 0;
  bool operator<(const PretrainKey& o) const {
    if (cell != o.cell) return cell < o.cell;
    if (time_step != o.time_step) return time_step < o.time_step;
    return run < o.run;
  }
};

using PretrainCache = std::map<PretrainKey, models::RecurrentParams>;

inline models::RecurrentParams run_pretrain(const synth::Cohort& cohort, const GridSpec& spec,
                                            const RunContext& ctx, models::CellType cell,
                                            int time_step, int run) {
  models::SequenceData pre = assemble_pretrain(cohort, ctx.imputed, ctx.delta.seqs,
                                               ctx.lab_scaler, ctx.delta_scaler, time_step,
                                               spec.horizon, ctx.train_mask);
  models::TrainConfig cfg = spec.train;
  cfg.seed = spec.base_seed + static_cast<std::uint64_t>(run);
  cfg.max_epochs = spec.pretrain_epochs;
  Rng rng(cfg.seed ^ 0x696e6974ULL);
  int pre_dim = static_cast<int>(ctx.delta.seqs.relevant_labs.size());
  models::RecurrentParams p = models::init_params(
      cell, pre.feature_dim(), cfg.hidden_dim, pre_dim, rng);
  models::pretrain(p, pre, cfg);
  return p;
}

inline double score_run(const synth::Cohort& cohort, const GridSpec& spec, const RunContext& ctx,
                        const CellConfig& cell, int run, const PretrainCache& pretrained,
                        std::vector<double>* pvals_out) {
  AssembleOptions aopts;
  aopts.task = spec.task;
  aopts.target_id = cell.outcome;
  aopts.time_step = cell.time_step;
  aopts.horizon = spec.horizon;
  aopts.augment = cell.method == Method::augment;

  AssembledData train = assemble_dataset(cohort, ctx.imputed, ctx.delta.seqs, ctx.lab_scaler,
                                         ctx.delta_scaler, aopts, ctx.train_mask);
  AssembledData test = assemble_dataset(cohort, ctx.imputed, ctx.delta.seqs, ctx.lab_scaler,
                                        ctx.delta_scaler, aopts, ctx.test_mask);
  if (train.data.size() < 2 || test.data.size() < 2)
    throw DataError("degenerate split: too few eligible patients");

  const bool classification = spec.task == Task::diagnosis;
  if (classification) {
    auto single_class = [](const Eigen::VectorXd& y) {
      double s = y.sum();
      return s <= 0.0 || s >= static_cast<double>(y.size());
    };
    if (single_class(train.data.labels) || single_class(test.data.labels))
      throw DataError("degenerate split: single-class labels");
  }

  std::vector<double> scores;
  std::vector<int> ylab;
  std::vector<double> ytarget;
  for (int i = 0; i < test.data.size(); ++i) {
    if (classification)
      ylab.push_back(test.data.labels[i] > 0.5 ? 1 : 0);
    else
      ytarget.push_back(test.data.labels[i]);
  }

  if (cell.model == ModelKind::glm || cell.model == ModelKind::glmer) {
    Eigen::MatrixXd xtr = flatten_design(train.data);
    Eigen::MatrixXd xte = flatten_design(test.data);
    models::LinearModel fit;
    if (cell.model == ModelKind::glm) {
      if (classification)
        fit = models::fit_glm(xtr, train.data.labels, spec.glm_ridge);
      else
        fit = models::fit_lm(xtr, train.data.labels);
      for (int i = 0; i < xte.rows(); ++i) scores.push_back(fit.predict(xte.row(i).transpose()));
    } else {
      std::vector<std::string> groups;
      for (int i = 0; i < train.data.size(); ++i)
        groups.push_back(
            cohort.patients[static_cast<std::size_t>(train.patient_index[static_cast<std::size_t>(i)])]
                .id);
      models::MixedModel mm = models::fit_random_intercept(xtr, train.data.labels, groups,
                                                           classification, spec.glm_ridge);
      for (int i = 0; i < xte.rows(); ++i) {
        const std::string& gid =
            cohort.patients[static_cast<std::size_t>(test.patient_index[static_cast<std::size_t>(i)])]
                .id;
        scores.push_back(mm.predict(xte.row(i).transpose(), gid));
      }
      fit = mm.fixed;
    }
    if (pvals_out && cell.method == Method::augment) {
      int n_delta = static_cast<int>(ctx.delta.seqs.relevant_labs.size());
      auto pv = delta_pvalues(fit, xtr, cell.time_step, cohort.meta.n_labs, n_delta);
      pvals_out->insert(pvals_out->end(), pv.begin(), pv.end());
    }
  } else {
    models::CellType ct =
        cell.model == ModelKind::lstm ? models::CellType::lstm : models::CellType::gru;
    models::TrainConfig cfg = spec.train;
    cfg.seed = spec.base_seed + static_cast<std::uint64_t>(run);
    models::TaskLoss loss =
        classification ? models::TaskLoss::cross_entropy : models::TaskLoss::mse;

    // Regression targets are standardized for training and unscaled at
    // prediction time.
    double ymean = 0.0, ysd = 1.0;
    models::SequenceData train_data = train.data;
    if (!classification) {
      ymean = train_data.labels.mean();
      ysd = std::sqrt((train_data.labels.array() - ymean).square().sum() /
                      std::max(1.0, static_cast<double>(train_data.size()) - 1.0));
      if (ysd < 1e-12) ysd = 1.0;
      train_data.labels = (train_data.labels.array() - ymean) / ysd;
    }

    models::RecurrentParams params;
    int pre_dim = static_cast<int>(ctx.delta.seqs.relevant_labs.size());
    if (cell.method == Method::pretrain) {
      auto it = pretrained.find({ct, cell.time_step, run});
      if (it == pretrained.end()) throw DataError("missing pretrained weights for cell");
      auto [p, summary] = models::finetune(it->second, train_data, cfg, loss);
      params = std::move(p);
    } else {
      auto [p, summary] = models::train_from_scratch(ct, train_data, cfg, loss, pre_dim);
      params = std::move(p);
    }
    for (int i = 0; i < test.data.size(); ++i) {
      double z = models::score_sample(params, test.data.inputs[static_cast<std::size_t>(i)]);
      scores.push_back(classification ? sigmoid(z) : z * ysd + ymean);
    }
  }

  if (classification) return compute_auc(scores, ylab);
  return compute_mse(scores, ytarget);
}

}  // namespace detail

/// Run one experiment cell over all runs of the prepared contexts.
inline CellOutput run_experiment_cell(const synth::Cohort& cohort, const GridSpec& spec,
                                      const std::vector<RunContext>& contexts,
                                      const CellConfig& cell,
                                      const detail::PretrainCache& pretrained) {
  CellOutput out;
  out.row.cell = cell;
  out.row.metric_name = spec.task == Task::diagnosis ? "AUC" : "MSE";
  out.row.run_values.assign(static_cast<std::size_t>(spec.runs),
                            std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  for (int r = 0; r < spec.runs; ++r) {
    try {
      double v = detail::score_run(cohort, spec, contexts[static_cast<std::size_t>(r)], cell, r,
                                   pretrained, &out.delta_pvals);
      out.row.run_values[static_cast<std::size_t>(r)] = v;
      sum += v;
      ++out.row.valid_runs;
    } catch (const DataError& e) {
      std::cerr << "warning: " << cell.outcome << "/" << model_name(cell.model) << "/"
                << method_name(cell.method) << "/K=" << cell.time_step << " run " << r
                << " invalid: " << e.what() << "\n";
    }
  }
  if (out.row.valid_runs == 0) {
    out.row.error = "all runs invalid";
  } else {
    out.row.mean = sum / out.row.valid_runs;
  }
  return out;
}

/// Single-cell convenience entry: builds the run contexts and executes one
/// configuration end to end. Deterministic in (cohort, spec, cell).
inline ResultRow run_experiment(const synth::Cohort& cohort, const GridSpec& spec,
                                const CellConfig& cell) {
  spec.validate();
  std::vector<RunContext> contexts;
  for (int r = 0; r < spec.runs; ++r) contexts.push_back(make_run_context(cohort, spec, r));
  detail::PretrainCache cache;
  if (cell.method == Method::pretrain && is_recurrent(cell.model)) {
    models::CellType ct =
        cell.model == ModelKind::lstm ? models::CellType::lstm : models::CellType::gru;
    for (int r = 0; r < spec.runs; ++r)
      cache[{ct, cell.time_step, r}] = detail::run_pretrain(
          cohort, spec, contexts[static_cast<std::size_t>(r)], ct, cell.time_step, r);
  }
  CellOutput out = run_experiment_cell(cohort, spec, contexts, cell, cache);
  if (out.row.valid_runs == 0) throw AllRunsInvalidError("all runs invalid for the experiment");
  return out.row;
}

struct GridResult {
  std::vector<CellOutput> cells;
  // (model, time_step) -> pooled delta p-values from augmented linear fits
  std::map<std::pair<std::string, int>, std::vector<double>> pvalues;
};

/// Execute the full grid. Cell work runs on `n_threads` workers; results are
/// keyed by cell index, so output is independent of scheduling.
inline GridResult run_grid(const synth::Cohort& cohort, const GridSpec& spec, int n_threads = 1) {
  spec.validate();
  auto cells = spec.cells();
  GridResult res;
  res.cells.resize(cells.size());

  std::vector<RunContext> contexts(static_cast<std::size_t>(spec.runs));
  {
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        int r = next.fetch_add(1);
        if (r >= spec.runs) break;
        contexts[static_cast<std::size_t>(r)] = make_run_context(cohort, spec, r);
      }
    };
    std::vector<std::thread> ws;
    for (int i = 0; i < std::max(1, std::min(n_threads, spec.runs)); ++i)
      ws.emplace_back(worker);
    for (auto& w : ws) w.join();
  }

  // Pretrained recurrent weights are outcome-independent: compute each
  // (cell type, time step, run) once up front.
  detail::PretrainCache cache;
  {
    std::vector<detail::PretrainKey> keys;
    for (const auto& c : cells)
      if (c.method == Method::pretrain && is_recurrent(c.model)) {
        models::CellType ct =
            c.model == ModelKind::lstm ? models::CellType::lstm : models::CellType::gru;
        for (int r = 0; r < spec.runs; ++r) {
          detail::PretrainKey k{ct, c.time_step, r};
          if (!cache.count(k)) {
            cache[k] = models::RecurrentParams{};
            keys.push_back(k);
          }
        }
      }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= keys.size()) break;
        const auto& k = keys[i];
        cache[k] = detail::run_pretrain(cohort, spec,
                                        contexts[static_cast<std::size_t>(k.run)], k.cell,
                                        k.time_step, k.run);
      }
    };
    std::vector<std::thread> ws;
    for (int i = 0; i < std::max(1, n_threads); ++i) ws.emplace_back(worker);
    for (auto& w : ws) w.join();
  }

  {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= cells.size()) break;
        try {
          res.cells[i] = run_experiment_cell(cohort, spec, contexts, cells[i], cache);
        } catch (const std::exception& e) {
          res.cells[i].row.cell = cells[i];
          res.cells[i].row.metric_name = spec.task == Task::diagnosis ? "AUC" : "MSE";
          res.cells[i].row.error = e.what();
          std::cerr << "cell failed: " << cells[i].outcome << "/" << model_name(cells[i].model)
                    << "/" << method_name(cells[i].method) << "/K=" << cells[i].time_step << ": "
                    << e.what() << "\n";
        }
      }
    };
    std::vector<std::thread> ws;
    for (int i = 0; i < std::max(1, n_threads); ++i) ws.emplace_back(worker);
    for (auto& w : ws) w.join();
  }

  for (const auto& c : res.cells) {
    if (c.delta_pvals.empty()) continue;
    auto& dst = res.pvalues[{model_name(c.row.cell.model), c.row.cell.time_step}];
    dst.insert(dst.end(), c.delta_pvals.begin(), c.delta_pvals.end());
  }
  return res;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

}  // namespace detail

/// results.csv: one row per valid run plus one mean row per cell
/// (run = -1, mean_flag = 1). Cells whose runs all failed emit a mean row
/// with an empty value.
inline void write_results_csv(const GridResult& res, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write results file: " + path);
  out << "outcome,model,method,time_step,run,metric_name,value,mean_flag\n";
  for (const auto& c : res.cells) {
    const auto& r = c.row;
    std::string prefix = r.cell.outcome + "," + model_name(r.cell.model) + "," +
                         method_name(r.cell.method) + "," + std::to_string(r.cell.time_step);
    for (std::size_t i = 0; i < r.run_values.size(); ++i) {
      if (std::isnan(r.run_values[i])) continue;
      out << prefix << "," << i << "," << r.metric_name << "," << detail::fmt(r.run_values[i])
          << ",0\n";
    }
    out << prefix << ",-1," << r.metric_name << ","
        << (r.valid_runs > 0 ? detail::fmt(r.mean) : "") << ",1\n";
  }
}

/// pvalues.csv: five-number summary of the delta-coefficient Wald p-values
/// from augmented linear fits, grouped by model and time step.
inline void write_pvalues_csv(const GridResult& res, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write p-value file: " + path);
  out << "model,time_step,count,min,q25,median,q75,max\n";
  for (const auto& [key, pv] : res.pvalues) {
    if (pv.empty()) continue;
    out << key.first << "," << key.second << "," << pv.size() << ","
        << detail::fmt_g(quantile(pv, 0.0)) << "," << detail::fmt_g(quantile(pv, 0.25)) << ","
        << detail::fmt_g(quantile(pv, 0.5)) << "," << detail::fmt_g(quantile(pv, 0.75)) << ","
        << detail::fmt_g(quantile(pv, 1.0)) << "\n";
  }
}

/// series.csv: mean metric per (outcome, model, method, time_step), the data
/// behind metric-vs-time-step comparison plots.
inline void write_series_csv(const GridResult& res, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write series file: " + path);
  out << "outcome,model,method,time_step,metric_name,mean_value\n";
  for (const auto& c : res.cells) {
    const auto& r = c.row;
    if (r.valid_runs == 0) continue;
    out << r.cell.outcome << "," << model_name(r.cell.model) << "," << method_name(r.cell.method)
        << "," << r.cell.time_step << "," << r.metric_name << "," << detail::fmt(r.mean) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Grid file
// ---------------------------------------------------------------------------

inline GridSpec load_grid_spec(const json& j) {
  GridSpec s;
  try {
    s.outcomes = j.at("outcomes").get<std::vector<std::string>>();
    if (j.contains("models")) {
      s.models.clear();
      for (const auto& m : j["models"]) s.models.push_back(model_from_name(m.get<std::string>()));
    }
    if (j.contains("methods")) {
      s.methods.clear();
      for (const auto& m : j["methods"]) s.methods.push_back(method_from_name(m.get<std::string>()));
    }
    if (j.contains("model_methods")) {
      for (const auto& [k, v] : j["model_methods"].items()) {
        model_from_name(k);  // validates
        std::vector<Method> ms;
        for (const auto& m : v) ms.push_back(method_from_name(m.get<std::string>()));
        s.model_methods[k] = std::move(ms);
      }
    }
    if (j.contains("time_steps")) s.time_steps = j["time_steps"].get<std::vector<int>>();
    if (j.contains("task")) {
      std::string t = j["task"].get<std::string>();
      if (t == "dx")
        s.task = Task::diagnosis;
      else if (t == "lab")
        s.task = Task::lab_forecast;
      else
        throw ConfigError("unknown task: " + t);
    }
    s.horizon = j.value("horizon", 5);
    s.runs = j.value("runs", 3);
    s.train_fraction = j.value("train_fraction", 0.8);
    s.base_seed = j.value("base_seed", std::uint64_t{0});
    if (j.contains("caliper") && !j["caliper"].is_null()) s.caliper = j["caliper"].get<double>();
    s.min_group_size = j.value("min_group_size", 10);
    if (j.contains("relevant_labs") && j["relevant_labs"].is_array())
      s.relevant_labs = j["relevant_labs"].get<std::vector<int>>();
    s.glm_ridge = j.value("glm_ridge", 1e-3);
    s.pretrain_epochs = j.value("pretrain_epochs", 40);
    if (j.contains("train")) {
      const auto& t = j["train"];
      s.train.hidden_dim = t.value("hidden_dim", s.train.hidden_dim);
      s.train.learning_rate = t.value("learning_rate", s.train.learning_rate);
      s.train.momentum = t.value("momentum", s.train.momentum);
      s.train.max_epochs = t.value("max_epochs", s.train.max_epochs);
      s.train.batch_size = t.value("batch_size", s.train.batch_size);
      s.train.weight_decay = t.value("weight_decay", s.train.weight_decay);
      s.train.clip_norm = t.value("clip_norm", s.train.clip_norm);
      s.train.patience = t.value("patience", s.train.patience);
      s.train.val_fraction = t.value("val_fraction", s.train.val_fraction);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed grid file: ") + e.what());
  }
  s.validate();
  return s;
}

inline GridSpec load_grid_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid file is not valid JSON: ") + e.what());
  }
  return load_grid_spec(j);
}

}  // namespace deltaseq::harness
