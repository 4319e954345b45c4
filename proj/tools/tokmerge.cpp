// tokmerge: command-line front end.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tokmerge/experiment.hpp"

namespace {

using namespace tokmerge;

struct Options {
  std::string config;
  std::size_t threads = default_threads();
  std::optional<double> snr;
  std::string front;
  std::vector<double> snr_list;
  bool max_accuracy = false;
  bool min_flops = false;
  std::optional<double> acc_at_least;
  std::optional<double> flops_at_most;
  std::string schedule;
  std::size_t sample = 0;
  std::string out;
};

Experiment load(const Options& o) { return prepare_experiment(load_config(o.config), std::max<std::size_t>(1, o.threads)); }

int cmd_gen_data(const Options& o) {
  const auto e = load(o);
  run_gen_data(e, e.config.output_dir);
  std::cerr << "wrote calibration.bin, evaluation.bin and weights.bin to " << e.config.output_dir.string() << "\n";
  return 0;
}

int cmd_calibrate(const Options& o) {
  const auto e = load(o);
  Json j = run_calibrate(e, e.config.output_dir);
  j.erase("centroids");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_optimize(const Options& o) {
  RunConfig c = load_config(o.config);
  if (o.snr) c.optimize_snr_db = *o.snr;
  const auto e = prepare_experiment(c, std::max<std::size_t>(1, o.threads));
  run_optimize(e, e.config.output_dir, &std::cerr);
  return 0;
}

int cmd_sweep(const Options& o) {
  const auto e = load(o);
  const auto front_path = o.front.empty() ? e.config.output_dir / "front.json" : std::filesystem::path(o.front);
  const auto front = read_front(front_path);
  const auto& snrs = o.snr_list.empty() ? e.config.snr_list : o.snr_list;
  const auto out = run_sweep(e, front, snrs, e.config.output_dir, &std::cerr);
  std::cerr << out.rows.size() << " rows written to " << (e.config.output_dir / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_select(const Options& o) {
  const int chosen = int(o.max_accuracy) + int(o.min_flops) + int(o.flops_at_most.has_value());
  if (chosen != 1) throw ConfigError("select: give exactly one of --max-accuracy, --min-flops, --flops-at-most");
  if (o.min_flops != o.acc_at_least.has_value())
    throw ConfigError("select: --min-flops and --acc-at-least go together");
  const auto front = read_front(o.front);
  ScenarioConstraint c = ScenarioConstraint::max_accuracy();
  if (o.min_flops) c = ScenarioConstraint::min_flops_with_accuracy(*o.acc_at_least);
  if (o.flops_at_most) c = ScenarioConstraint::max_throughput_within_flops(*o.flops_at_most);
  const auto r = select_scenario(front, c);
  std::cout << selection_to_json(r, c).dump(2) << "\n";
  return 0;
}

int cmd_export_trace(const Options& o) {
  const auto e = load(o);
  const auto schedule = parse_schedule(o.schedule);
  const auto out = o.out.empty() ? e.config.output_dir / "merge_trace.csv" : std::filesystem::path(o.out);
  const auto trace = run_export_trace(e, schedule, o.sample, out);
  std::cerr << trace.size() << " merges written to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-layer token merging: schedule search and channel evaluation"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "run configuration file")->required();
    sub->add_option("--threads", o.threads, "worker threads (results do not depend on this)");
  };

  auto* gen = app.add_subcommand("gen-data", "write the calibration/evaluation datasets and model weights");
  add_common(gen);
  auto* cal = app.add_subcommand("calibrate", "fit the prototype head and report clean accuracy");
  add_common(cal);
  auto* opt = app.add_subcommand("optimize", "search for Pareto-optimal merge schedules");
  add_common(opt);
  opt->add_option("--snr", o.snr, "optimize under a fixed channel SNR (dB) instead of noiselessly");
  auto* sweep = app.add_subcommand("sweep", "evaluate the front and baselines across SNRs; build the adaptive policy");
  add_common(sweep);
  sweep->add_option("--front", o.front, "front file (default: <output_dir>/front.json)");
  sweep->add_option("--snr", o.snr_list, "SNR list in dB, comma separated")->delimiter(',');
  auto* sel = app.add_subcommand("select", "pick a front member for a deployment scenario");
  sel->add_option("--front", o.front, "front file")->required();
  sel->add_flag("--max-accuracy", o.max_accuracy, "highest-accuracy member");
  sel->add_flag("--min-flops", o.min_flops, "cheapest member meeting --acc-at-least");
  sel->add_option("--acc-at-least", o.acc_at_least, "accuracy floor for --min-flops");
  sel->add_option("--flops-at-most", o.flops_at_most, "cheapest member within this FLOPs budget");
  auto* trace = app.add_subcommand("export-trace", "write the merge assignments of one sample as CSV");
  add_common(trace);
  trace->add_option("--schedule", o.schedule, "merge proportions, comma separated")->required();
  trace->add_option("--sample", o.sample, "evaluation sample index");
  trace->add_option("--out", o.out, "CSV path (default: <output_dir>/merge_trace.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*cal) return cmd_calibrate(o);
    if (*opt) return cmd_optimize(o);
    if (*sweep) return cmd_sweep(o);
    if (*sel) return cmd_select(o);
    if (*trace) return cmd_export_trace(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
