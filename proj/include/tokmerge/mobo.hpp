#pragma once

// Multi-objective Bayesian optimization of merge schedules.
//
// One GP per objective (accuracy, FLOPs) on inputs scaled to [0, 1]^L and
// standardized targets; candidates maximize log-EHVI over the box.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "tokmerge/ehvi.hpp"
#include "tokmerge/gp_surrogate.hpp"
#include "tokmerge/pareto.hpp"
#include "tokmerge/token_merging.hpp"

namespace tokmerge {

/// Halton sequence with a seeded digit permutation per dimension (0 stays
/// fixed). Index 0 maps to the origin, so callers usually start at 1.
class ScrambledHalton {
 public:
  ScrambledHalton(std::size_t dims, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uint64_t candidate = 2;
    while (bases_.size() < dims) {
      bool prime = true;
      for (std::uint64_t f = 2; f * f <= candidate; ++f)
        if (candidate % f == 0) prime = false;
      if (prime) {
        std::vector<std::uint64_t> perm(candidate);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = candidate - 1; i > 1; --i) std::swap(perm[i], perm[1 + rng() % i]);
        bases_.push_back(candidate);
        perms_.push_back(std::move(perm));
      }
      ++candidate;
    }
  }

  std::vector<double> point(std::uint64_t index) const {
    std::vector<double> x(bases_.size());
    for (std::size_t d = 0; d < bases_.size(); ++d) {
      const std::uint64_t b = bases_[d];
      double f = 1.0, v = 0.0;
      for (std::uint64_t i = index; i > 0; i /= b) {
        f /= static_cast<double>(b);
        v += f * static_cast<double>(perms_[d][i % b]);
      }
      x[d] = v;
    }
    return x;
  }

 private:
  std::vector<std::uint64_t> bases_;
  std::vector<std::vector<std::uint64_t>> perms_;
};

/// `count` schedules in [0, max_p]^layers from the scrambled Halton sequence.
inline std::vector<MergeSchedule> quasi_random_design(std::size_t count, std::size_t layers, double max_p,
                                                      std::uint64_t seed) {
  const ScrambledHalton seq(layers, seed);
  std::vector<MergeSchedule> out;
  for (std::size_t i = 0; i < count; ++i) {
    auto x = seq.point(i + 1);
    for (auto& v : x) v *= max_p;
    out.push_back({std::move(x)});
  }
  return out;
}

/// GP on one objective with scaled inputs (p / max_p) and standardized targets.
class ObjectiveSurrogate {
 public:
  static ObjectiveSurrogate fit(std::span<const MergeSchedule> schedules, std::span<const double> targets,
                                double max_p, const GPPriors& priors, const FitOptions& options) {
    ObjectiveSurrogate s;
    s.max_p_ = max_p;
    const double n = static_cast<double>(targets.size());
    s.offset_ = std::accumulate(targets.begin(), targets.end(), 0.0) / n;
    double var = 0.0;
    for (double t : targets) var += (t - s.offset_) * (t - s.offset_);
    var /= n;
    s.scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;

    ObservationSet obs;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      obs.inputs.push_back(s.normalize(schedules[i]));
      obs.targets.push_back((targets[i] - s.offset_) / s.scale_);
    }
    const auto res = fit_map_detailed(obs, priors, options);
    s.model_ = GPModel::fit(std::move(obs), res.hyper);
    return s;
  }

  std::vector<double> normalize(const MergeSchedule& s) const {
    std::vector<double> x(s.proportions);
    for (auto& v : x) v /= max_p_;
    return x;
  }

  GaussianMarginal predict(const MergeSchedule& s) const {
    const auto p = model_.predict(normalize(s));
    return {offset_ + scale_ * p.mean, scale_ * scale_ * p.variance};
  }

  /// Hyperparameters in standardized units.
  const GPHyperparams& hyperparams() const { return model_.hyperparams(); }
  double target_offset() const { return offset_; }
  double target_scale() const { return scale_; }

 private:
  GPModel model_;
  double max_p_ = MergeSchedule::kMaxProportion;
  double offset_ = 0.0;
  double scale_ = 1.0;
};

struct ProposalOptions {
  std::size_t samples = 1024;
  std::size_t refine_starts = 4;
  std::size_t refine_budget = 200;  // acquisition calls per refinement start
};

struct Proposal {
  MergeSchedule schedule;
  double log_acquisition = kNegInf;
  double best_sample_log_acquisition = kNegInf;
};

using Acquisition = std::function<double(const MergeSchedule&)>;

/// Maximizes `acquisition` over [0, max_p]^layers: quasi-random samples, then
/// coordinate-wise pattern search from the best few. Strict improvement is
/// required to move, so an all -inf landscape returns the first sample.
inline Proposal propose_candidate(const Acquisition& acquisition, std::size_t layers, double max_p, std::uint64_t seed,
                                  const ProposalOptions& options = {}) {
  const auto samples = quasi_random_design(options.samples, layers, max_p, seed);
  std::vector<double> values(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) values[i] = acquisition(samples[i]);

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });

  Proposal best{samples[order.front()], values[order.front()], values[order.front()]};
  for (std::size_t k = 0; k < std::min(options.refine_starts, order.size()); ++k) {
    MergeSchedule x = samples[order[k]];
    double fx = values[order[k]];
    if (fx == kNegInf) continue;
    double step = 0.25 * max_p;
    std::size_t calls = 0;
    while (step > 1e-3 * max_p && calls < options.refine_budget) {
      bool moved = false;
      for (std::size_t d = 0; d < layers && !moved; ++d)
        for (double sign : {1.0, -1.0}) {
          MergeSchedule y = x;
          y.proportions[d] = std::clamp(x[d] + sign * step, 0.0, max_p);
          if (y.proportions[d] == x[d]) continue;
          const double fy = acquisition(y);
          ++calls;
          if (fy > fx) {
            x = std::move(y);
            fx = fy;
            moved = true;
            break;
          }
        }
      if (!moved) step *= 0.5;
    }
    if (fx > best.log_acquisition) {
      best.schedule = std::move(x);
      best.log_acquisition = fx;
    }
  }
  return best;
}

/// log-EHVI acquisition over two fitted surrogates.
inline Proposal propose_candidate(const ObjectiveSurrogate& accuracy, const ObjectiveSurrogate& flops,
                                  const ParetoFront& front, std::size_t layers, double max_p, std::uint64_t seed,
                                  const ProposalOptions& options = {}) {
  return propose_candidate(
      [&](const MergeSchedule& s) { return log_ehvi(accuracy.predict(s), flops.predict(s), front); }, layers, max_p,
      seed, options);
}

struct Objectives {
  double accuracy = 0.0;
  FlopCount flops = 0;
};

using ObjectiveFn = std::function<Objectives(const MergeSchedule&)>;

struct BOSettings {
  std::size_t budget = 150;
  std::size_t n_init = 0;  // 0 = max(2L, 16)
  std::size_t restarts = 8;
  std::uint64_t seed = 0;
  double max_proportion = MergeSchedule::kMaxProportion;
  GPPriors priors;
  ProposalOptions proposal;

  std::size_t initial_design_size(std::size_t layers) const {
    return n_init != 0 ? n_init : std::max<std::size_t>(2 * layers, 16);
  }
};

struct HistoryRecord {
  std::size_t iteration = 0;
  MergeSchedule schedule;
  double accuracy = 0.0;
  FlopCount flops = 0;
  std::optional<GPHyperparams> accuracy_hyper;  // set for BO-proposed points
  std::optional<GPHyperparams> flops_hyper;
  std::optional<double> acquisition;
};

struct OptimizationResult {
  ParetoFront front;
  std::vector<HistoryRecord> history;
};

inline std::vector<ParetoPoint> history_points(std::span<const HistoryRecord> history) {
  std::vector<ParetoPoint> pts;
  for (const auto& h : history) pts.push_back({h.schedule, h.accuracy, h.flops});
  return pts;
}

/// Evaluates a quasi-random initial design, then iterates fit -> propose ->
/// evaluate until `budget` evaluations. `sink` sees every record as soon as it
/// exists, so an evaluator failure leaves the partial history persisted.
inline OptimizationResult run_optimization(const ObjectiveFn& evaluate, std::size_t layers, ReferencePoint reference,
                                           const BOSettings& settings,
                                           const std::function<void(const HistoryRecord&)>& sink = {}) {
  const std::size_t n_init = settings.initial_design_size(layers);
  if (n_init < 2 * layers) throw ConfigError("bo.n_init must be at least 2 * layers");
  if (settings.budget < n_init) throw ConfigError("bo.budget must be at least bo.n_init");

  OptimizationResult result;
  auto record = [&](HistoryRecord r) {
    result.history.push_back(std::move(r));
    if (sink) sink(result.history.back());
  };

  const auto design = quasi_random_design(n_init, layers, settings.max_proportion, mix_seed(settings.seed, 0));
  for (std::size_t i = 0; i < design.size(); ++i) {
    const auto obj = evaluate(design[i]);
    record({i, design[i], obj.accuracy, obj.flops, std::nullopt, std::nullopt, std::nullopt});
  }

  std::optional<GPHyperparams> warm_acc, warm_flops;
  for (std::size_t it = n_init; it < settings.budget; ++it) {
    std::vector<MergeSchedule> xs;
    std::vector<double> acc, fl;
    for (const auto& h : result.history) {
      xs.push_back(h.schedule);
      acc.push_back(h.accuracy);
      fl.push_back(static_cast<double>(h.flops));
    }
    FitOptions fo;
    fo.restarts = settings.restarts;
    fo.seed = mix_seed(settings.seed, 2 * it + 1);
    fo.warm_start = warm_acc;
    const auto acc_model = ObjectiveSurrogate::fit(xs, acc, settings.max_proportion, settings.priors, fo);
    fo.seed = mix_seed(settings.seed, 2 * it + 2);
    fo.warm_start = warm_flops;
    const auto flops_model = ObjectiveSurrogate::fit(xs, fl, settings.max_proportion, settings.priors, fo);
    warm_acc = acc_model.hyperparams();
    warm_flops = flops_model.hyperparams();

    const auto pts = history_points(result.history);
    const auto front = pareto_filter(pts, reference);
    const auto proposal = propose_candidate(acc_model, flops_model, front, layers, settings.max_proportion,
                                            mix_seed(settings.seed, 1'000'000 + it), settings.proposal);
    const auto obj = evaluate(proposal.schedule);
    record({it, proposal.schedule, obj.accuracy, obj.flops, acc_model.hyperparams(), flops_model.hyperparams(),
            proposal.log_acquisition});
  }

  const auto pts = history_points(result.history);
  result.front = pareto_filter(pts, reference);
  return result;
}

struct PolicyEntry {
  double snr_db = 0.0;
  std::size_t front_index = 0;
  ParetoPoint point;             // noiseless objectives from the front
  double noisy_accuracy = 0.0;
  double best_noisy_accuracy = 0.0;
};

/// Accuracy of one schedule at each SNR in the grid.
using SweepFn = std::function<std::vector<double>(const MergeSchedule&, std::span<const double>)>;

/// For each SNR, the minimum-FLOPs front member whose accuracy at that SNR is
/// within `accuracy_drop` of the best member there.
inline std::vector<PolicyEntry> build_adaptive_policy(const ParetoFront& front, std::span<const double> snr_grid,
                                                      const SweepFn& sweep, double accuracy_drop) {
  if (front.empty()) throw ConfigError("adaptive policy needs a nonempty front");
  if (snr_grid.empty()) throw ConfigError("adaptive policy needs at least one SNR");
  std::vector<std::vector<double>> acc;  // [member][snr]
  for (const auto& p : front.points) {
    acc.push_back(sweep(p.schedule, snr_grid));
    if (acc.back().size() != snr_grid.size()) throw ConfigError("sweep returned the wrong number of accuracies");
  }
  std::vector<PolicyEntry> policy;
  for (std::size_t s = 0; s < snr_grid.size(); ++s) {
    double best = -1.0;
    for (const auto& a : acc) best = std::max(best, a[s]);
    std::optional<std::size_t> pick;
    for (std::size_t m = 0; m < front.points.size(); ++m)
      if (acc[m][s] >= best - accuracy_drop - 1e-12 && (!pick || front.points[m].flops < front.points[*pick].flops))
        pick = m;
    policy.push_back({snr_grid[s], *pick, front.points[*pick], acc[*pick][s], best});
  }
  return policy;
}

}  // namespace tokmerge
