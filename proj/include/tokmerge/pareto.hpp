#pragma once

// Pareto fronts over (accuracy, FLOPs): accuracy is maximized, FLOPs minimized.

#include <algorithm>
#include <iostream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tokmerge/flops_model.hpp"
#include "tokmerge/token_merging.hpp"

namespace tokmerge {

struct ParetoPoint {
  MergeSchedule schedule;
  double accuracy = 0.0;
  FlopCount flops = 0;

  bool operator==(const ParetoPoint&) const = default;
};

struct ReferencePoint {
  double accuracy = 0.0;
  double flops = 0.0;

  bool operator==(const ReferencePoint&) const = default;
};

struct ParetoFront {
  std::vector<ParetoPoint> points;  // ascending flops, ascending accuracy
  ReferencePoint reference;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

/// True when a is at least as good in both objectives and strictly better in one.
inline bool dominates(double acc_a, double flops_a, double acc_b, double flops_b) {
  return acc_a >= acc_b && flops_a <= flops_b && (acc_a > acc_b || flops_a < flops_b);
}

/// Non-dominated subset. Among exact (accuracy, flops) duplicates the first
/// one seen is kept.
inline ParetoFront pareto_filter(std::span<const ParetoPoint> points, ReferencePoint reference = {}) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].flops != points[b].flops) return points[a].flops < points[b].flops;
    return points[a].accuracy > points[b].accuracy;
  });
  ParetoFront front;
  front.reference = reference;
  for (std::size_t i : order)
    if (front.points.empty() || points[i].accuracy > front.points.back().accuracy) front.points.push_back(points[i]);
  return front;
}

/// Area dominated by `points` and bounded by the reference point. Points that
/// do not strictly dominate the reference are skipped with a warning.
inline double hypervolume_2d(std::span<const ParetoPoint> points, ReferencePoint reference) {
  std::vector<ParetoPoint> usable;
  for (const auto& p : points) {
    if (p.accuracy > reference.accuracy && static_cast<double>(p.flops) < reference.flops)
      usable.push_back(p);
    else
      std::clog << "hypervolume: skipping point (" << p.accuracy << ", " << p.flops
                << ") that does not dominate the reference point\n";
  }
  const auto front = pareto_filter(usable, reference);
  double hv = 0.0;
  double prev_acc = reference.accuracy;
  for (const auto& p : front.points) {
    hv += (reference.flops - static_cast<double>(p.flops)) * (p.accuracy - prev_acc);
    prev_acc = p.accuracy;
  }
  return hv;
}

inline double hypervolume_2d(const ParetoFront& front) { return hypervolume_2d(front.points, front.reference); }

struct ScenarioConstraint {
  enum class Kind { MaxAccuracy, MinFlopsWithAccuracy, MaxThroughputWithinFlops };
  Kind kind = Kind::MaxAccuracy;
  double threshold = 0.0;  // accuracy floor tau, or FLOPs budget

  static ScenarioConstraint max_accuracy() { return {Kind::MaxAccuracy, 0.0}; }
  static ScenarioConstraint min_flops_with_accuracy(double tau) { return {Kind::MinFlopsWithAccuracy, tau}; }
  static ScenarioConstraint max_throughput_within_flops(double budget) {
    return {Kind::MaxThroughputWithinFlops, budget};
  }
};

struct ScenarioResult {
  std::optional<ParetoPoint> point;  // empty when infeasible
  std::size_t index = 0;             // position in the front
  std::string reason;                // set when infeasible
  bool feasible() const { return point.has_value(); }
};

/// max accuracy | min FLOPs with accuracy >= tau | min FLOPs (max 1/F) with FLOPs <= budget.
/// Infeasible constraints are reported, never silently relaxed.
inline ScenarioResult select_scenario(const ParetoFront& front, const ScenarioConstraint& c) {
  ScenarioResult res;
  if (front.empty()) {
    res.reason = "front is empty";
    return res;
  }
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < front.points.size(); ++i) {
    const auto& p = front.points[i];
    switch (c.kind) {
      case ScenarioConstraint::Kind::MaxAccuracy:
        if (!best || p.accuracy > front.points[*best].accuracy) best = i;
        break;
      case ScenarioConstraint::Kind::MinFlopsWithAccuracy:
        if (p.accuracy >= c.threshold && (!best || p.flops < front.points[*best].flops)) best = i;
        break;
      case ScenarioConstraint::Kind::MaxThroughputWithinFlops:
        if (static_cast<double>(p.flops) <= c.threshold && (!best || p.flops < front.points[*best].flops)) best = i;
        break;
    }
  }
  if (!best) {
    res.reason = c.kind == ScenarioConstraint::Kind::MinFlopsWithAccuracy
                     ? "no front member reaches accuracy " + std::to_string(c.threshold)
                     : "no front member within FLOPs budget " + std::to_string(c.threshold);
    return res;
  }
  res.index = *best;
  res.point = front.points[*best];
  return res;
}

}  // namespace tokmerge
