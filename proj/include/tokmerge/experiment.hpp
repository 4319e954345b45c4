#pragma once

// Experiment pipeline behind the command-line tool: builds the model, data and
// head from a RunConfig and runs optimize / sweep / select / trace, writing
// result files under the configured output directory.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tokmerge/mobo.hpp"
#include "tokmerge/results_io.hpp"
#include "tokmerge/run_config.hpp"
#include "tokmerge/task_eval.hpp"
#include "tokmerge/weight_file.hpp"

namespace tokmerge {

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x) { return Json(x).dump(); }

inline std::string schedule_field(const MergeSchedule& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ";" : "") + format_double(s[i]);
  return out;
}

struct Experiment {
  RunConfig config;
  std::shared_ptr<const ModelWeights> weights;
  Dataset calibration;
  Dataset evaluation;
  PrototypeHead head;
  std::size_t threads = 1;

  const ModelDims& dims() const { return weights->dims; }

  ReferencePoint reference() const {
    return {0.0, 1.01 * static_cast<double>(schedule_flops(MergeSchedule::uniform(dims().layers, 0.0), dims()).total)};
  }

  ChannelSpec channel(double snr_db) const { return {snr_db, config.channel_seed, config.codec}; }

  /// Full evaluation split: sweeps and policies.
  TaskEvaluator evaluator() const { return {weights, head, evaluation.examples, threads}; }

  /// Seeded subset of the evaluation split used as the optimization objective.
  TaskEvaluator optimization_evaluator() const {
    const std::size_t n = std::min(config.eval_subset == 0 ? evaluation.size() : config.eval_subset, evaluation.size());
    return {weights, head, seeded_subset(evaluation.examples, n, mix_seed(config.dataset_seed, 0xB0)), threads};
  }
};

inline std::shared_ptr<const ModelWeights> build_weights(const RunConfig& c) {
  if (!c.weights_file) return std::make_shared<const ModelWeights>(random_weights(c.model, c.weights_seed));
  ModelWeights w = load_weights(c.weights_file->string());
  w.dims.num_classes = c.model.num_classes;
  const auto& d = w.dims;
  if (d.channels != c.model.channels || d.patch != c.model.patch || d.tokens != c.model.tokens)
    throw ConfigError("model.weights_file: " + c.weights_file->string() + " expects " + std::to_string(d.tokens) +
                      " tokens of " + std::to_string(d.patch) + "x" + std::to_string(d.patch) + "x" +
                      std::to_string(d.channels) + " patches, which does not match image.height/image.width");
  return std::make_shared<const ModelWeights>(std::move(w));
}

inline Experiment prepare_experiment(const RunConfig& c, std::size_t threads) {
  Experiment e;
  e.config = c;
  e.threads = threads;
  e.weights = build_weights(c);
  e.config.model = e.weights->dims;
  e.calibration = generate_dataset(c.dataset_spec(Split::Calibration), c.dataset_seed, Split::Calibration);
  e.evaluation = generate_dataset(c.dataset_spec(Split::Evaluation), c.dataset_seed, Split::Evaluation);
  e.head = fit_prototypes(*e.weights, e.calibration.examples, threads);
  return e;
}

inline BOSettings bo_settings(const RunConfig& c) {
  BOSettings s;
  s.budget = c.budget;
  s.n_init = c.n_init;
  s.restarts = c.restarts;
  s.seed = c.bo_seed;
  s.max_proportion = c.max_proportion;
  s.priors = c.priors;
  s.proposal.samples = c.acquisition_samples;
  return s;
}

// --- gen-data / calibrate ---------------------------------------------------

inline void run_gen_data(const Experiment& e, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  save_dataset((out_dir / "calibration.bin").string(), e.calibration);
  save_dataset((out_dir / "evaluation.bin").string(), e.evaluation);
  save_weights((out_dir / "weights.bin").string(), *e.weights);
}

inline Json run_calibrate(const Experiment& e, const std::filesystem::path& out_dir) {
  const auto clean = e.evaluator().evaluate(MergeSchedule::uniform(e.dims().layers, 0.0));
  Json j;
  j["num_classes"] = e.head.centroids.size();
  j["calibration_samples"] = e.calibration.size();
  j["evaluation_samples"] = e.evaluation.size();
  j["clean_accuracy"] = clean.accuracy;
  j["clean_flops"] = clean.flops;
  j["centroids"] = e.head.centroids;
  write_text(out_dir / "head.json", j.dump(2) + "\n");
  return j;
}

// --- optimize ---------------------------------------------------------------

inline std::string front_csv(const ParetoFront& f) {
  std::string s = "index,accuracy,gflops,flops,schedule\n";
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto& p = f.points[i];
    s += std::to_string(i) + "," + format_double(p.accuracy) + "," + format_double(static_cast<double>(p.flops) * 1e-9) +
         "," + std::to_string(p.flops) + "," + schedule_field(p.schedule) + "\n";
  }
  return s;
}

/// Writes history.jsonl (one line per evaluation, flushed as it happens),
/// front.json, front.csv and summary.json.
inline OptimizationResult run_optimize(const Experiment& e, const std::filesystem::path& out_dir,
                                       std::ostream* progress = nullptr) {
  std::filesystem::create_directories(out_dir);
  const auto history_path = out_dir / "history.jsonl";
  std::ofstream history(history_path, std::ios::binary | std::ios::trunc);
  if (!history) throw ConfigError("cannot write " + history_path.string());

  const TaskEvaluator ev = e.optimization_evaluator();
  std::optional<ChannelSpec> channel;
  if (e.config.optimize_snr_db) channel = e.channel(*e.config.optimize_snr_db);
  const ObjectiveFn objective = [&](const MergeSchedule& s) {
    const auto r = ev.evaluate(s, channel);
    return Objectives{r.accuracy, r.flops};
  };
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = run_optimization(objective, e.dims().layers, e.reference(), bo_settings(e.config),
                                       [&](const HistoryRecord& r) {
                                         history << history_line(r);
                                         history.flush();
                                         if (progress && (r.iteration + 1) % 10 == 0)
                                           *progress << "evaluation " << r.iteration + 1 << "/" << e.config.budget
                                                     << "  accuracy " << r.accuracy << "  flops " << r.flops << "\n";
                                       });
  if (!history) throw ConfigError("write failed: " + history_path.string());

  write_text(out_dir / "front.json", front_to_json(result.front).dump(2) + "\n");
  write_text(out_dir / "front.csv", front_csv(result.front));
  Json summary;
  summary["evaluations"] = result.history.size();
  summary["initial_design"] = bo_settings(e.config).initial_design_size(e.dims().layers);
  summary["objective_samples"] = ev.size();
  summary["objective_snr_db"] = e.config.optimize_snr_db ? Json(*e.config.optimize_snr_db) : Json(nullptr);
  summary["reference_point"] = {{"accuracy", e.reference().accuracy}, {"flops", e.reference().flops}};
  summary["front_size"] = result.front.size();
  summary["hypervolume"] = hypervolume_2d(result.front);
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  if (progress)
    *progress << "done: " << result.front.size() << " front points, hypervolume " << hypervolume_2d(result.front)
              << ", " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  return result;
}

// --- sweep ------------------------------------------------------------------

struct SweepConfig {
  std::string name;
  std::string kind;  // front | no_merge | uniform | random
  MergeSchedule schedule;
};

struct SweepRow {
  std::string name;
  std::string kind;
  MergeSchedule schedule;
  double snr_db = 0.0;
  double accuracy = 0.0;
  FlopCount flops = 0;
  std::size_t correct = 0;
  std::size_t samples = 0;
};

struct SweepOutput {
  std::vector<SweepRow> rows;
  std::vector<PolicyEntry> policy;
};

inline std::vector<SweepConfig> sweep_configurations(const Experiment& e, const ParetoFront& front) {
  const std::size_t layers = e.dims().layers;
  std::vector<SweepConfig> out;
  for (std::size_t i = 0; i < front.size(); ++i) {
    front.points[i].schedule.validate(layers);
    out.push_back({"front_" + std::to_string(i), "front", front.points[i].schedule});
  }
  out.push_back({"no_merge", "no_merge", MergeSchedule::uniform(layers, 0.0)});
  for (double p : e.config.uniform_baselines) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "uniform_%.3g", p);
    out.push_back({buf, "uniform", MergeSchedule::uniform(layers, p)});
  }
  std::mt19937_64 rng(mix_seed(e.config.bo_seed, 0xBA5E));
  std::uniform_real_distribution<double> unit(0.0, e.config.max_proportion);
  for (std::size_t k = 0; k < e.config.random_baselines; ++k) {
    MergeSchedule s;
    for (std::size_t l = 0; l < layers; ++l) s.proportions.push_back(unit(rng));
    out.push_back({"random_" + std::to_string(k), "random", s});
  }
  return out;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string s = "config,kind,snr_db,accuracy,gflops,flops,correct,samples,schedule\n";
  for (const auto& r : rows)
    s += r.name + "," + r.kind + "," + format_double(r.snr_db) + "," + format_double(r.accuracy) + "," +
         format_double(static_cast<double>(r.flops) * 1e-9) + "," + std::to_string(r.flops) + "," +
         std::to_string(r.correct) + "," + std::to_string(r.samples) + "," + schedule_field(r.schedule) + "\n";
  return s;
}

inline std::string policy_csv(const std::vector<PolicyEntry>& policy) {
  std::string s = "snr_db,front_index,gflops,accuracy,best_accuracy,schedule\n";
  for (const auto& p : policy)
    s += format_double(p.snr_db) + "," + std::to_string(p.front_index) + "," +
         format_double(static_cast<double>(p.point.flops) * 1e-9) + "," + format_double(p.noisy_accuracy) + "," +
         format_double(p.best_noisy_accuracy) + "," + schedule_field(p.point.schedule) + "\n";
  return s;
}

/// Evaluates front members and baselines on the full evaluation split at every
/// SNR, then builds the SNR-adaptive policy from the front members' results.
/// Writes sweep.csv, sweep.json, policy.json and policy.csv.
inline SweepOutput run_sweep(const Experiment& e, const ParetoFront& front, std::span<const double> snrs,
                             const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
  if (snrs.empty()) throw ConfigError("sweep needs at least one SNR");
  const TaskEvaluator ev = e.evaluator();
  SweepOutput out;
  std::map<std::vector<double>, std::vector<double>> cache;
  for (const auto& cfg : sweep_configurations(e, front)) {
    const auto results = ev.evaluate_sweep(cfg.schedule, snrs, e.channel(0.0));
    std::vector<double> acc;
    for (const auto& r : results) {
      out.rows.push_back({cfg.name, cfg.kind, cfg.schedule, *r.snr_db, r.accuracy, r.flops, r.correct, r.n_samples});
      acc.push_back(r.accuracy);
    }
    cache.emplace(cfg.schedule.proportions, acc);
    if (progress) *progress << "swept " << cfg.name << "\n";
  }
  if (!front.empty()) {
    out.policy = build_adaptive_policy(
        front, snrs, [&](const MergeSchedule& s, std::span<const double>) { return cache.at(s.proportions); },
        e.config.accuracy_drop);
  }

  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "sweep.csv", sweep_csv(out.rows));
  Json j = Json::array();
  for (const auto& r : out.rows) {
    Json k;
    k["config"] = r.name;
    k["kind"] = r.kind;
    k["schedule"] = schedule_to_json(r.schedule);
    k["snr_db"] = r.snr_db;
    k["accuracy"] = r.accuracy;
    k["flops"] = r.flops;
    k["correct"] = r.correct;
    k["samples"] = r.samples;
    j.push_back(k);
  }
  write_text(out_dir / "sweep.json", j.dump(2) + "\n");
  if (!out.policy.empty()) {
    write_text(out_dir / "policy.json", policy_to_json(out.policy, e.config.accuracy_drop).dump(2) + "\n");
    write_text(out_dir / "policy.csv", policy_csv(out.policy));
  }
  return out;
}

// --- select -----------------------------------------------------------------

inline Json selection_to_json(const ScenarioResult& r, const ScenarioConstraint& c) {
  Json j;
  switch (c.kind) {
    case ScenarioConstraint::Kind::MaxAccuracy: j["scenario"] = "max_accuracy"; break;
    case ScenarioConstraint::Kind::MinFlopsWithAccuracy: j["scenario"] = "min_flops_with_accuracy"; break;
    case ScenarioConstraint::Kind::MaxThroughputWithinFlops: j["scenario"] = "max_throughput_within_flops"; break;
  }
  if (c.kind != ScenarioConstraint::Kind::MaxAccuracy) j["threshold"] = c.threshold;
  j["feasible"] = r.feasible();
  if (r.feasible()) {
    j["index"] = r.index;
    j["point"] = point_to_json(*r.point);
  } else {
    j["reason"] = r.reason;
  }
  return j;
}

// --- export-trace -----------------------------------------------------------

/// Merge assignments of one evaluation sample under `schedule`, as CSV.
inline MergeTrace run_export_trace(const Experiment& e, const MergeSchedule& schedule, std::size_t sample,
                                   const std::filesystem::path& out_file) {
  schedule.validate(e.dims().layers);
  if (sample >= e.evaluation.size())
    throw ConfigError("sample index " + std::to_string(sample) + " out of range (evaluation split has " +
                      std::to_string(e.evaluation.size()) + " samples)");
  MergeTrace trace;
  encode(e.evaluation.examples[sample].image, *e.weights, schedule, &trace);
  std::ostringstream os;
  write_merge_trace_csv(os, trace);
  write_text(out_file, os.str());
  return trace;
}

}  // namespace tokmerge
