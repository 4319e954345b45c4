#pragma once

// Training-free bipartite token merging.
//
// Tokens outside the protected prefix are split alternately into sources and
// destinations. Every source is matched to its most cosine-similar destination
// (on Value vectors), the r best-scoring sources are merged, and each touched
// destination becomes the norm-weighted mean of itself and its sources.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tokmerge/common.hpp"

namespace tokmerge {

/// Per-layer merge proportions p_1..p_L, each in [0, kMaxProportion].
struct MergeSchedule {
  static constexpr double kMaxProportion = 0.3;

  std::vector<double> proportions;

  std::size_t size() const { return proportions.size(); }
  double operator[](std::size_t i) const { return proportions[i]; }

  /// Throws ConfigError on a length mismatch or an out-of-range entry.
  void validate(std::size_t layers) const {
    if (proportions.size() != layers)
      throw ConfigError("merge schedule has " + std::to_string(proportions.size()) + " entries, expected " +
                        std::to_string(layers));
    for (std::size_t i = 0; i < proportions.size(); ++i) {
      const double p = proportions[i];
      if (!std::isfinite(p) || p < 0.0 || p > kMaxProportion)
        throw ConfigError("merge proportion " + std::to_string(p) + " at layer " + std::to_string(i) +
                          " outside [0, 0.3]");
    }
  }

  static MergeSchedule uniform(std::size_t layers, double p) { return {std::vector<double>(layers, p)}; }

  bool operator==(const MergeSchedule&) const = default;
};

inline constexpr double kMergeEpsilon = 1e-6;
inline constexpr double kZeroNormThreshold = 1e-12;

struct BipartiteSplit {
  std::vector<std::size_t> sources;
  std::vector<std::size_t> destinations;
};

/// Over [protected_count, n): 1st, 3rd, ... positions are sources, 2nd, 4th, ...
/// are destinations.
inline BipartiteSplit alternating_split(std::size_t n, std::size_t protected_count) {
  BipartiteSplit split;
  for (std::size_t i = protected_count; i < n; ++i)
    ((i - protected_count) % 2 == 0 ? split.sources : split.destinations).push_back(i);
  return split;
}

/// Number of tokens merged at one layer: floor(p * n), capped at the source count.
inline std::size_t merge_count(double p, std::size_t n, std::size_t protected_count) {
  // A needs at least one destination partner to merge into.
  const std::size_t free = n > protected_count ? n - protected_count : 0;
  const std::size_t available = free >= 2 ? (free + 1) / 2 : 0;
  const auto requested = static_cast<std::size_t>(std::floor(p * static_cast<double>(n) + 1e-9));
  return std::min(requested, available);
}

struct SourceMatch {
  std::size_t source = 0;
  std::size_t destination = 0;
  double score = 0.0;

  bool operator==(const SourceMatch&) const = default;
};

/// Cosine similarity with the zero-norm convention (0 when either side is ~0).
inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += static_cast<double>(a[k]) * b[k];
    na += static_cast<double>(a[k]) * a[k];
    nb += static_cast<double>(b[k]) * b[k];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kZeroNormThreshold || nb < kZeroNormThreshold) return 0.0;
  return dot / (na * nb);
}

/// Best destination per source; ties go to the smallest destination index.
/// Returns an empty list when there are no destinations.
inline std::vector<SourceMatch> best_match_scores(const Matrix& values, const BipartiteSplit& split) {
  std::vector<SourceMatch> best;
  if (split.destinations.empty()) return best;
  best.reserve(split.sources.size());
  for (std::size_t a : split.sources) {
    SourceMatch m{a, split.destinations.front(), -2.0};
    for (std::size_t b : split.destinations) {
      const double s = cosine_similarity(values.row(a), values.row(b));
      if (s > m.score) {
        m.score = s;
        m.destination = b;
      }
    }
    best.push_back(m);
  }
  return best;
}

/// Which tokens merge where at one layer. Indices refer to the layer's input
/// sequence.
struct MergeAssignment {
  std::size_t input_count = 0;
  std::vector<SourceMatch> pairs;                           // selected, in selection order
  std::vector<std::size_t> retained;                        // R: untouched, ascending
  std::vector<std::size_t> destinations;                    // M: receiving a merge, ascending
  std::map<std::size_t, std::vector<std::size_t>> groups;   // m -> S_m, ascending

  std::size_t output_count() const { return retained.size() + destinations.size(); }
};

/// Picks the r = min(floor(p * n_prev), |A|) sources with the highest best-match
/// scores; equal scores go to the smaller source index.
inline MergeAssignment select_merges(std::span<const SourceMatch> best, double p, std::size_t n_prev,
                                     std::size_t protected_count) {
  MergeAssignment out;
  out.input_count = n_prev;
  const std::size_t r = std::min(merge_count(p, n_prev, protected_count), best.size());

  std::vector<SourceMatch> ranked(best.begin(), best.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const SourceMatch& x, const SourceMatch& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.source < y.source;
  });
  ranked.resize(r);
  out.pairs = ranked;

  std::vector<char> consumed(n_prev, 0);
  for (const auto& m : out.pairs) {
    out.groups[m.destination].push_back(m.source);
    consumed[m.source] = 1;
    consumed[m.destination] = 1;
  }
  for (auto& [dst, srcs] : out.groups) {
    std::sort(srcs.begin(), srcs.end());
    out.destinations.push_back(dst);
  }
  for (std::size_t i = 0; i < n_prev; ++i)
    if (!consumed[i]) out.retained.push_back(i);
  return out;
}

/// Replaces each destination by (|z_m| z_m + sum |z_s| z_s) / (|z_m| + sum |z_s| + eps).
/// Output order: retained tokens in original order, then merged destinations
/// in ascending index.
inline TokenMatrix apply_norm_weighted_merge(const TokenMatrix& z, const MergeAssignment& assignment) {
  const std::size_t d = z.dim();
  TokenMatrix out;
  out.protected_count = z.protected_count;
  out.tokens = Matrix(assignment.output_count(), d);

  std::size_t row = 0;
  for (std::size_t r : assignment.retained) {
    std::copy_n(z.tokens.row(r).begin(), d, out.tokens.row(row).begin());
    ++row;
  }

  std::vector<double> acc(d);
  auto accumulate = [&](std::size_t idx, double& weight_sum) {
    const auto v = z.tokens.row(idx);
    double n2 = 0.0;
    for (float x : v) n2 += static_cast<double>(x) * x;
    const double norm = std::sqrt(n2);
    for (std::size_t k = 0; k < d; ++k) acc[k] += norm * v[k];
    weight_sum += norm;
  };
  for (std::size_t m : assignment.destinations) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double weight_sum = 0.0;
    accumulate(m, weight_sum);
    for (std::size_t s : assignment.groups.at(m)) accumulate(s, weight_sum);
    const double denom = weight_sum + kMergeEpsilon;
    auto dst = out.tokens.row(row);
    for (std::size_t k = 0; k < d; ++k) dst[k] = static_cast<float>(acc[k] / denom);
    ++row;
  }
  return out;
}

struct MergeResult {
  TokenMatrix tokens;
  MergeAssignment assignment;
};

/// One layer of merging. `values` supplies the similarity rows (one per token).
/// With r = 0 the tokens are returned untouched.
inline MergeResult merge_layer(const TokenMatrix& z, const Matrix& values, double p) {
  if (values.rows != z.size()) throw ConfigError("value matrix rows do not match token count");
  const auto split = alternating_split(z.size(), z.protected_count);
  if (merge_count(p, z.size(), z.protected_count) == 0 || split.destinations.empty()) {
    MergeResult res{z, {}};
    res.assignment.input_count = z.size();
    for (std::size_t i = 0; i < z.size(); ++i) res.assignment.retained.push_back(i);
    return res;
  }
  const auto best = best_match_scores(values, split);
  auto assignment = select_merges(best, p, z.size(), z.protected_count);
  auto merged = apply_norm_weighted_merge(z, assignment);
  return {std::move(merged), std::move(assignment)};
}

/// One row of the merge-trace CSV.
struct MergeTraceRow {
  std::size_t layer = 0;
  std::size_t source = 0;
  std::size_t destination = 0;
  double similarity = 0.0;
};

using MergeTrace = std::vector<MergeTraceRow>;

inline void write_merge_trace_csv(std::ostream& os, const MergeTrace& trace) {
  os << "layer,source_index,destination_index,similarity\n";
  char buf[64];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof buf, "%.17g", row.similarity);
    os << row.layer << ',' << row.source << ',' << row.destination << ',' << buf << '\n';
  }
}

}  // namespace tokmerge
