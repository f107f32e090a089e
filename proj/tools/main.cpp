// deltaseq command line: simulate cohorts, estimate sequential treatment
// effects, train predictors, and run the experiment grid.

#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "deltaseq/cohort.hpp"
#include "deltaseq/common.hpp"
#include "deltaseq/dataset.hpp"
#include "deltaseq/experiment.hpp"
#include "deltaseq/ite.hpp"
#include "deltaseq/linear_models.hpp"
#include "deltaseq/metrics.hpp"
#include "deltaseq/random_structure.hpp"
#include "deltaseq/simulate.hpp"
#include "deltaseq/structure.hpp"
#include "deltaseq/training.hpp"

namespace {

using namespace deltaseq;
using nlohmann::json;

std::vector<int> parse_relevant_labs(const std::string& arg, const synth::Cohort& cohort) {
  if (arg == "auto") {
    auto labs = cohort.meta.default_relevant_labs();
    if (labs.empty()) throw ConfigError("relevant-labs auto: cohort meta maps no labs");
    return labs;
  }
  std::vector<int> out;
  std::string cur;
  for (char c : arg + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        out.push_back(std::stoi(cur));
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  if (out.empty()) throw ConfigError("relevant-labs: empty index list");
  return out;
}

int cmd_gen_structure(const std::string& out_path, int diseases, int labs, int outcomes,
                      double density, int windows, std::uint64_t seed, bool placebo) {
  synth::RandomStructureParams p;
  p.n_diseases = diseases;
  p.n_labs = labs;
  p.n_outcomes = outcomes;
  p.edge_density = density;
  p.n_windows = windows;
  p.seed = seed;
  p.placebo = placebo;
  synth::CausalStructure st = synth::build_random_structure(p);
  synth::save_structure(st, out_path);
  std::cout << "wrote " << out_path << " (" << st.n_diseases() << " diseases, " << st.n_labs()
            << " labs, " << st.n_outcomes() << " outcomes, " << st.n_med_digits
            << " med digits)\n";
  return 0;
}

int cmd_validate_structure(const std::string& path) {
  synth::CausalStructure st = synth::load_structure(path);  // throws on invalid
  std::cout << "ok: " << st.n_diseases() << " diseases, " << st.n_labs() << " labs, "
            << st.n_outcomes() << " outcomes, " << st.n_windows << " windows, "
            << st.n_med_digits << " med digits\n";
  return 0;
}

int cmd_simulate(const std::string& structure_path, int patients, int windows, double obs_rate,
                 std::uint64_t seed, const std::string& out_path, bool ground_truth,
                 bool counterfactual, int threads) {
  synth::CausalStructure st = synth::load_structure(structure_path);
  if (windows > 0) st.n_windows = windows;
  synth::SimulationConfig cfg;
  cfg.n_patients = patients;
  cfg.observation_rate = obs_rate;
  cfg.rng_seed = seed;
  cfg.force_untreated = counterfactual;
  auto trajectories = synth::simulate_cohort(st, cfg, threads);
  synth::Cohort cohort = synth::make_cohort(st, std::move(trajectories), ground_truth);
  synth::write_cohort_jsonl(cohort, out_path);
  std::cout << "wrote " << out_path << " (" << cohort.n_patients() << " patients, "
            << st.n_windows << " windows)\n";
  return 0;
}

int cmd_estimate_ite(const std::string& cohort_path, const std::string& structure_path,
                     double caliper, int min_group_size, const std::string& relevant,
                     const std::string& out_path, const std::string& report_path) {
  synth::Cohort cohort = synth::read_cohort_jsonl(cohort_path);
  ite::DeltaOptions opts;
  opts.caliper = caliper;
  opts.min_group_size = min_group_size;
  if (!structure_path.empty() && relevant == "auto") {
    synth::CausalStructure st = synth::load_structure(structure_path);
    opts.relevant_labs = st.default_relevant_labs();
  } else {
    opts.relevant_labs = parse_relevant_labs(relevant, cohort);
  }
  harness::ImputeStats stats = harness::compute_impute_stats(cohort);
  auto imputed = harness::impute_labs(cohort, stats);
  ite::DeltaResult res = ite::build_delta_sequences(cohort, imputed, opts);
  ite::write_deltas_jsonl(res, cohort, opts, out_path);
  if (!report_path.empty()) ite::write_match_report_csv(res.report, report_path);
  int records = 0, matched = 0;
  for (const auto& r : res.report) {
    records += r.treated_total;
    matched += r.matched;
  }
  std::cout << "wrote " << out_path << " (" << res.report.size() << " group pairs, " << records
            << " treated records, " << matched << " matched, " << res.seqs.dropped_horizon
            << " dropped at horizon)\n";
  return 0;
}

int cmd_train(const std::string& task, const std::string& model, const std::string& method,
              int time_step, int horizon, const std::string& outcome,
              const std::string& cohort_path, const std::string& deltas_path, std::uint64_t seed,
              const std::string& out_path, const std::string& metrics_path, double train_fraction,
              const harness::GridSpec& overrides) {
  synth::Cohort cohort = synth::read_cohort_jsonl(cohort_path);
  harness::Method m = harness::method_from_name(method);
  harness::ModelKind mk = harness::model_from_name(model);
  if (m == harness::Method::pretrain && !harness::is_recurrent(mk))
    throw ConfigError("pretraining applies to the recurrent models only");

  // Standalone training consumes the delta file as-is (the grid runner
  // recomputes deltas per run with train-frozen propensity models instead).
  ite::DeltaSequences seqs;
  if (m == harness::Method::none) {
    seqs.relevant_labs = {0};
    seqs.delta.assign(static_cast<std::size_t>(cohort.n_patients()),
                      Eigen::MatrixXd::Zero(1, cohort.meta.n_windows));
    seqs.unmatched.assign(
        static_cast<std::size_t>(cohort.n_patients()),
        std::vector<std::uint8_t>(static_cast<std::size_t>(cohort.meta.n_windows), 0));
    seqs.control.assign(
        static_cast<std::size_t>(cohort.n_patients()),
        std::vector<ite::MemberRef>(static_cast<std::size_t>(cohort.meta.n_windows)));
  } else {
    if (deltas_path.empty()) throw ConfigError("--deltas required for method " + method);
    ite::DeltaFile df = ite::read_deltas_jsonl(deltas_path);
    seqs = ite::sequences_from_file(df, cohort);
  }

  // 80/20 patient split, seeded; statistics from the training side only.
  const int n = cohort.n_patients();
  std::vector<std::uint8_t> train_mask(static_cast<std::size_t>(n), 0);
  std::vector<std::uint8_t> test_mask(static_cast<std::size_t>(n), 0);
  {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
      int j = rng.uniform_int(i + 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    int n_train = std::clamp(static_cast<int>(train_fraction * n), 1, n - 1);
    for (int i = 0; i < n; ++i)
      (i < n_train ? train_mask : test_mask)[static_cast<std::size_t>(
          order[static_cast<std::size_t>(i)])] = 1;
  }
  harness::ImputeStats stats = harness::compute_impute_stats(cohort, train_mask);
  auto imputed = harness::impute_labs(cohort, stats);
  harness::FeatureScaler lab_scaler = harness::fit_lab_scaler(imputed, train_mask);
  harness::FeatureScaler delta_scaler = harness::fit_delta_scaler(seqs, train_mask);

  harness::AssembleOptions aopts;
  aopts.task = task == "dx" ? harness::Task::diagnosis : harness::Task::lab_forecast;
  aopts.target_id = outcome;
  aopts.time_step = time_step;
  aopts.horizon = horizon;
  aopts.augment = m == harness::Method::augment;
  auto train = harness::assemble_dataset(cohort, imputed, seqs, lab_scaler, delta_scaler, aopts,
                                         train_mask);
  auto test = harness::assemble_dataset(cohort, imputed, seqs, lab_scaler, delta_scaler, aopts,
                                        test_mask);
  if (train.data.size() < 2 || test.data.size() < 2)
    throw DataError("too few eligible patients after exclusion");

  const bool classification = aopts.task == harness::Task::diagnosis;
  std::vector<double> scores;
  json model_json;

  if (mk == harness::ModelKind::glm || mk == harness::ModelKind::glmer) {
    Eigen::MatrixXd xtr = harness::flatten_design(train.data);
    Eigen::MatrixXd xte = harness::flatten_design(test.data);
    models::LinearModel fit;
    if (mk == harness::ModelKind::glm) {
      fit = classification ? models::fit_glm(xtr, train.data.labels, overrides.glm_ridge)
                           : models::fit_lm(xtr, train.data.labels);
      for (int i = 0; i < xte.rows(); ++i) scores.push_back(fit.predict(xte.row(i).transpose()));
    } else {
      std::vector<std::string> groups;
      for (int i = 0; i < train.data.size(); ++i)
        groups.push_back(cohort.patients[static_cast<std::size_t>(
                                             train.patient_index[static_cast<std::size_t>(i)])]
                             .id);
      models::MixedModel mm = models::fit_random_intercept(xtr, train.data.labels, groups,
                                                           classification, overrides.glm_ridge);
      for (int i = 0; i < xte.rows(); ++i) {
        const std::string& gid =
            cohort
                .patients[static_cast<std::size_t>(test.patient_index[static_cast<std::size_t>(i)])]
                .id;
        scores.push_back(mm.predict(xte.row(i).transpose(), gid));
      }
      fit = mm.fixed;
      model_json["intercept_var"] = mm.intercept_var;
    }
    model_json["model"] = model;
    model_json["intercept"] = fit.intercept;
    json coef = json::array();
    for (int i = 0; i < fit.coef.size(); ++i) coef.push_back(fit.coef[i]);
    model_json["coef"] = coef;
    if (!out_path.empty()) {
      std::ofstream out(out_path);
      if (!out) throw ConfigError("cannot write model file: " + out_path);
      out << model_json.dump(2) << "\n";
    }
  } else {
    models::CellType ct =
        mk == harness::ModelKind::lstm ? models::CellType::lstm : models::CellType::gru;
    models::TrainConfig cfg = overrides.train;
    cfg.seed = seed;
    models::TaskLoss loss =
        classification ? models::TaskLoss::cross_entropy : models::TaskLoss::mse;
    double ymean = 0.0, ysd = 1.0;
    models::SequenceData tdata = train.data;
    if (!classification) {
      ymean = tdata.labels.mean();
      ysd = std::sqrt((tdata.labels.array() - ymean).square().sum() /
                      std::max(1.0, static_cast<double>(tdata.size()) - 1.0));
      if (ysd < 1e-12) ysd = 1.0;
      tdata.labels = (tdata.labels.array() - ymean) / ysd;
    }
    models::RecurrentParams params;
    int pre_dim = static_cast<int>(seqs.relevant_labs.size());
    if (m == harness::Method::pretrain) {
      auto pre = harness::assemble_pretrain(cohort, imputed, seqs, lab_scaler, delta_scaler,
                                            time_step, horizon, train_mask);
      models::TrainConfig pcfg = cfg;
      pcfg.max_epochs = overrides.pretrain_epochs;
      Rng rng(cfg.seed ^ 0x696e6974ULL);
      params = models::init_params(ct, pre.feature_dim(), cfg.hidden_dim, pre_dim, rng);
      models::pretrain(params, pre, pcfg);
      auto [p, summary] = models::finetune(params, tdata, cfg, loss);
      params = std::move(p);
    } else {
      auto [p, summary] = models::train_from_scratch(ct, tdata, cfg, loss, pre_dim);
      params = std::move(p);
    }
    for (int i = 0; i < test.data.size(); ++i) {
      double z = models::score_sample(params, test.data.inputs[static_cast<std::size_t>(i)]);
      scores.push_back(classification ? sigmoid(z) : z * ysd + ymean);
    }
    if (!out_path.empty()) {
      json meta;
      meta["task"] = task;
      meta["method"] = method;
      meta["time_step"] = time_step;
      meta["seed"] = seed;
      models::save_checkpoint(params, out_path, meta);
    }
  }

  double value;
  std::string metric_name;
  if (classification) {
    std::vector<int> labels;
    for (int i = 0; i < test.data.size(); ++i)
      labels.push_back(test.data.labels[i] > 0.5 ? 1 : 0);
    value = harness::compute_auc(scores, labels);
    metric_name = "AUC";
  } else {
    std::vector<double> targets(test.data.labels.data(),
                                test.data.labels.data() + test.data.size());
    value = harness::compute_mse(scores, targets);
    metric_name = "MSE";
  }

  json metrics;
  metrics["task"] = task;
  metrics["model"] = model;
  metrics["method"] = method;
  metrics["outcome"] = outcome;
  metrics["time_step"] = time_step;
  metrics["horizon"] = horizon;
  metrics["seed"] = seed;
  metrics["n_train"] = train.data.size();
  metrics["n_test"] = test.data.size();
  metrics["metric_name"] = metric_name;
  metrics["value"] = value;
  if (!metrics_path.empty()) {
    std::ofstream mo(metrics_path);
    if (!mo) throw ConfigError("cannot write metrics file: " + metrics_path);
    mo << metrics.dump(2) << "\n";
  }
  std::cout << metric_name << " = " << value << " (" << train.data.size() << " train / "
            << test.data.size() << " test)\n";
  return 0;
}

int cmd_report(const std::string& grid_path, const std::string& cohort_path,
               const std::string& deltas_path, const std::string& out_path,
               const std::string& pvalues_path, const std::string& series_path, int threads) {
  synth::Cohort cohort = synth::read_cohort_jsonl(cohort_path);
  harness::GridSpec spec = harness::load_grid_spec_file(grid_path);
  if (!deltas_path.empty()) {
    ite::DeltaFile df = ite::read_deltas_jsonl(deltas_path);
    if (spec.relevant_labs.empty()) spec.relevant_labs = df.meta.relevant_labs;
    if (std::isnan(spec.caliper)) spec.caliper = df.meta.caliper;
    if (spec.min_group_size <= 0) spec.min_group_size = df.meta.min_group_size;
  }
  harness::GridResult res = harness::run_grid(cohort, spec, threads);
  harness::write_results_csv(res, out_path);
  if (!pvalues_path.empty()) harness::write_pvalues_csv(res, pvalues_path);
  if (!series_path.empty()) harness::write_series_csv(res, series_path);

  int failed = 0;
  for (const auto& c : res.cells)
    if (!c.row.error.empty()) ++failed;
  std::cout << "wrote " << out_path << " (" << res.cells.size() << " cells, " << failed
            << " failed)\n";
  if (failed == static_cast<int>(res.cells.size()) && failed > 0)
    throw AllRunsInvalidError("every grid cell failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deltaseq: sequential treatment-effect estimation for predictive sequence models"};
  app.require_subcommand(1);

  // gen-structure
  auto* gen = app.add_subcommand("gen-structure", "generate a random causal structure file");
  std::string gen_out = "structure.json";
  int gen_d = 10, gen_l = 20, gen_o = 4, gen_w = 60;
  double gen_density = 0.25;
  std::uint64_t gen_seed = 0;
  bool gen_placebo = false;
  gen->add_option("--diseases", gen_d, "number of diseases");
  gen->add_option("--labs", gen_l, "number of labs");
  gen->add_option("--outcomes", gen_o, "number of outcome codes");
  gen->add_option("--edge-density", gen_density, "parent link probability");
  gen->add_option("--windows", gen_w, "number of time windows");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_flag("--placebo", gen_placebo, "zero all medication effects");
  gen->add_option("--out", gen_out, "output path")->required();

  // validate-structure
  auto* val = app.add_subcommand("validate-structure", "validate a structure file");
  std::string val_path;
  val->add_option("structure", val_path, "structure JSON file")->required();

  // simulate
  auto* sim = app.add_subcommand("simulate", "simulate a patient cohort");
  std::string sim_structure, sim_out = "cohort.jsonl";
  int sim_patients = 1000, sim_windows = 0, sim_threads = 1;
  double sim_rate = 0.5;
  std::uint64_t sim_seed = 0;
  bool sim_truth = false, sim_cf = false;
  sim->add_option("--structure", sim_structure, "structure JSON file")->required();
  sim->add_option("--patients", sim_patients, "number of patients")->required();
  sim->add_option("--windows", sim_windows, "override the structure's window count");
  sim->add_option("--obs-rate", sim_rate, "per-cell lab observation rate");
  sim->add_option("--seed", sim_seed, "rng seed");
  sim->add_option("--out", sim_out, "output JSONL path")->required();
  sim->add_flag("--emit-ground-truth", sim_truth, "include severities, true labs and E^I");
  sim->add_flag("--counterfactual-untreated", sim_cf, "force all medications off");
  sim->add_option("--threads", sim_threads, "worker threads");

  // estimate-ite
  auto* est = app.add_subcommand("estimate-ite", "estimate per-patient treatment-effect deltas");
  std::string est_cohort, est_structure, est_out = "deltas.jsonl", est_report, est_relevant = "auto";
  double est_caliper = std::numeric_limits<double>::quiet_NaN();
  int est_min_group = 10;
  est->add_option("--cohort", est_cohort, "cohort JSONL")->required();
  est->add_option("--structure", est_structure, "optional structure file for --relevant-labs auto");
  est->add_option("--caliper", est_caliper, "propensity caliper (default: 0.2 sd)");
  est->add_option("--min-group-size", est_min_group, "minimum members per group side");
  est->add_option("--relevant-labs", est_relevant, "auto or comma-separated lab indices");
  est->add_option("--out", est_out, "output delta JSONL")->required();
  est->add_option("--report", est_report, "match report CSV");

  // train
  auto* trn = app.add_subcommand("train", "train a single predictor configuration");
  std::string trn_task = "dx", trn_model = "lstm", trn_method = "none", trn_outcome;
  std::string trn_cohort, trn_deltas, trn_out, trn_metrics;
  int trn_step = 10, trn_horizon = 5;
  double trn_fraction = 0.8;
  std::uint64_t trn_seed = 0;
  harness::GridSpec trn_overrides;
  trn->add_option("--task", trn_task, "dx or lab")->check(CLI::IsMember({"dx", "lab"}));
  trn->add_option("--model", trn_model, "glm, glmer, lstm or gru")
      ->check(CLI::IsMember({"glm", "glmer", "lstm", "gru"}));
  trn->add_option("--method", trn_method, "none, augment or pretrain")
      ->check(CLI::IsMember({"none", "augment", "pretrain"}));
  trn->add_option("--time-step", trn_step, "number of input windows K");
  trn->add_option("--horizon", trn_horizon, "label offset past the anchor window");
  trn->add_option("--outcome", trn_outcome, "outcome dx id (or lab id for --task lab)")
      ->required();
  trn->add_option("--cohort", trn_cohort, "cohort JSONL")->required();
  trn->add_option("--deltas", trn_deltas, "delta JSONL (augment/pretrain)");
  trn->add_option("--seed", trn_seed, "rng seed");
  trn->add_option("--out", trn_out, "model checkpoint path");
  trn->add_option("--metrics", trn_metrics, "metrics JSON path");
  trn->add_option("--train-fraction", trn_fraction, "train split fraction");
  trn->add_option("--hidden-dim", trn_overrides.train.hidden_dim, "RNN hidden width");
  trn->add_option("--learning-rate", trn_overrides.train.learning_rate, "SGD learning rate");
  trn->add_option("--epochs", trn_overrides.train.max_epochs, "max epochs");
  trn->add_option("--batch-size", trn_overrides.train.batch_size, "mini-batch size");
  trn->add_option("--pretrain-epochs", trn_overrides.pretrain_epochs, "pretraining epochs");
  trn->add_option("--glm-ridge", trn_overrides.glm_ridge, "ridge strength for linear models");

  // report
  auto* rep = app.add_subcommand("report", "run the experiment grid and write result tables");
  std::string rep_grid, rep_cohort, rep_deltas, rep_out = "results.csv", rep_pvalues, rep_series;
  int rep_threads = static_cast<int>(std::thread::hardware_concurrency());
  rep->add_option("--grid", rep_grid, "grid JSON file")->required();
  rep->add_option("--cohort", rep_cohort, "cohort JSONL")->required();
  rep->add_option("--deltas", rep_deltas, "delta JSONL (supplies ITE settings)");
  rep->add_option("--out", rep_out, "results CSV path")->required();
  rep->add_option("--pvalues", rep_pvalues, "delta p-value summary CSV");
  rep->add_option("--series", rep_series, "per-outcome series CSV");
  rep->add_option("--threads", rep_threads, "worker threads");

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return cmd_gen_structure(gen_out, gen_d, gen_l, gen_o, gen_density, gen_w, gen_seed,
                               gen_placebo);
    if (val->parsed()) return cmd_validate_structure(val_path);
    if (sim->parsed())
      return cmd_simulate(sim_structure, sim_patients, sim_windows, sim_rate, sim_seed, sim_out,
                          sim_truth, sim_cf, sim_threads);
    if (est->parsed())
      return cmd_estimate_ite(est_cohort, est_structure, est_caliper, est_min_group, est_relevant,
                              est_out, est_report);
    if (trn->parsed())
      return cmd_train(trn_task, trn_model, trn_method, trn_step, trn_horizon, trn_outcome,
                       trn_cohort, trn_deltas, trn_seed, trn_out, trn_metrics, trn_fraction,
                       trn_overrides);
    if (rep->parsed())
      return cmd_report(rep_grid, rep_cohort, rep_deltas, rep_out, rep_pvalues, rep_series,
                        rep_threads);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const AllRunsInvalidError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
