#pragma once

// Analytic FLOP count of the encoder under a merge schedule.
// Convention: one multiply-accumulate = 2 FLOPs.

#include <cstdint>
#include <vector>

#include "tokmerge/token_merging.hpp"
#include "tokmerge/vit_encoder.hpp"

namespace tokmerge {

using FlopCount = std::int64_t;

/// One encoder block over n tokens:
///   8 n d^2        Q, K, V, O projections
///   4 n^2 d        attention scores + weighted sum
///   4 n d d_ff     MLP
///   10 n d         layer norms, softmax, residuals, activation
inline FlopCount block_flops(std::size_t n, const ModelDims& dims) {
  const auto N = static_cast<FlopCount>(n);
  const auto d = static_cast<FlopCount>(dims.dim);
  const auto f = static_cast<FlopCount>(dims.mlp_dim);
  return 8 * N * d * d + 4 * N * N * d + 4 * N * d * f + 10 * N * d;
}

/// Patch projection plus positional-embedding add.
inline FlopCount embed_flops(const ModelDims& dims) {
  const auto patches = static_cast<FlopCount>(dims.tokens - 1);
  const auto d = static_cast<FlopCount>(dims.dim);
  return 2 * patches * static_cast<FlopCount>(dims.patch_size()) * d + static_cast<FlopCount>(dims.tokens) * d;
}

/// Similarity cost of one merge step (|A| |B| cosine scores of width d).
inline FlopCount merge_similarity_flops(std::size_t n, std::size_t protected_count, const ModelDims& dims) {
  const auto split = alternating_split(n, protected_count);
  return 2 * static_cast<FlopCount>(split.sources.size() * split.destinations.size() * dims.dim);
}

struct LayerFlops {
  std::size_t tokens_in = 0;
  FlopCount flops = 0;
  FlopCount merge_flops = 0;  // informational, not part of `total`
};

struct FlopsReport {
  std::vector<LayerFlops> per_layer;
  FlopCount embed = 0;
  FlopCount total = 0;        // embed + sum of per-layer block flops
  FlopCount merge_total = 0;  // sum of per-layer merge_flops
  MergeSchedule schedule;
  std::size_t final_tokens = 0;
};

/// Token count entering each layer, plus the count after the last layer.
inline std::vector<std::size_t> token_counts(const MergeSchedule& schedule, const ModelDims& dims,
                                             std::size_t protected_count = 1) {
  schedule.validate(dims.layers);
  std::vector<std::size_t> counts{dims.tokens};
  for (std::size_t l = 0; l < dims.layers; ++l) {
    const std::size_t n = counts.back();
    counts.push_back(n - merge_count(schedule[l], n, protected_count));
  }
  return counts;
}

inline FlopsReport schedule_flops(const MergeSchedule& schedule, const ModelDims& dims,
                                  std::size_t protected_count = 1) {
  const auto counts = token_counts(schedule, dims, protected_count);
  FlopsReport rep;
  rep.schedule = schedule;
  rep.embed = embed_flops(dims);
  rep.total = rep.embed;
  for (std::size_t l = 0; l < dims.layers; ++l) {
    LayerFlops lf;
    lf.tokens_in = counts[l];
    lf.flops = block_flops(counts[l], dims);
    if (counts[l + 1] < counts[l]) lf.merge_flops = merge_similarity_flops(counts[l], protected_count, dims);
    rep.total += lf.flops;
    rep.merge_total += lf.merge_flops;
    rep.per_layer.push_back(lf);
  }
  rep.final_tokens = counts.back();
  return rep;
}

}  // namespace tokmerge
