#pragma once

// Synthetic classification task, nearest-centroid head and the objective
// evaluator (accuracy, FLOPs) consumed by the optimizer.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "tokmerge/channel.hpp"
#include "tokmerge/common.hpp"
#include "tokmerge/flops_model.hpp"
#include "tokmerge/token_merging.hpp"
#include "tokmerge/vit_encoder.hpp"

namespace tokmerge {

struct DatasetSpec {
  std::size_t num_classes = 8;
  std::size_t samples_per_class = 64;
  std::size_t height = 12;
  std::size_t width = 20;
  std::size_t channels = 3;
  double noise_level = 0.25;
};

enum class Split : std::uint64_t { Calibration = 1, Evaluation = 2 };

struct LabeledExample {
  Image image;
  std::size_t label = 0;

  bool operator==(const LabeledExample&) const = default;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<LabeledExample> examples;

  std::size_t size() const { return examples.size(); }
};

namespace detail {

// Oriented grating plus a bright rectangle; all parameters drawn from the
// class's own seeded stream.
inline Image class_template(const DatasetSpec& spec, std::uint64_t seed, std::size_t cls) {
  std::mt19937_64 rng(mix_seed(seed, 0x7E3000 + cls));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double theta = std::numbers::pi * unit(rng);
  const double freq = 1.0 + 2.5 * unit(rng);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  std::vector<double> color(spec.channels);
  for (auto& c : color) c = 2.0 * unit(rng) - 1.0;
  const std::size_t bh = 1 + static_cast<std::size_t>(unit(rng) * spec.height / 2);
  const std::size_t bw = 1 + static_cast<std::size_t>(unit(rng) * spec.width / 2);
  const std::size_t by = static_cast<std::size_t>(unit(rng) * (spec.height - bh + 1));
  const std::size_t bx = static_cast<std::size_t>(unit(rng) * (spec.width - bw + 1));
  const double block = 2.0 * unit(rng) - 1.0;

  Image img(spec.height, spec.width, spec.channels);
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double u = static_cast<double>(x) / spec.width, v = static_cast<double>(y) / spec.height;
      const double wave = std::sin(2.0 * std::numbers::pi * freq * (u * std::cos(theta) + v * std::sin(theta)) + phase);
      const bool in_block = y >= by && y < by + bh && x >= bx && x < bx + bw;
      for (std::size_t c = 0; c < spec.channels; ++c)
        img.at(y, x, c) = static_cast<float>(color[c] * wave + (in_block ? block : 0.0));
    }
  return img;
}

}  // namespace detail

/// Class-balanced synthetic images: a fixed per-class template (depends only on
/// `seed`) plus per-sample Gaussian pixel noise (depends on seed and split).
/// Labels cycle 0, 1, ..., num_classes-1 so any prefix stays near-balanced.
inline Dataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed, Split split = Split::Calibration) {
  if (spec.num_classes == 0 || spec.height == 0 || spec.width == 0 || spec.channels == 0)
    throw ConfigError("dataset spec must have positive classes and image shape");
  std::vector<Image> templates;
  for (std::size_t c = 0; c < spec.num_classes; ++c) templates.push_back(detail::class_template(spec, seed, c));

  Dataset ds;
  ds.spec = spec;
  const std::size_t n = spec.num_classes * spec.samples_per_class;
  ds.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledExample ex{templates[i % spec.num_classes], i % spec.num_classes};
    if (spec.noise_level > 0.0) {
      std::mt19937_64 rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(split)), i));
      std::normal_distribution<double> gauss(0.0, spec.noise_level);
      for (auto& p : ex.image.pixels) p = static_cast<float>(p + gauss(rng));
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

/// `count` examples chosen by a seeded partial Fisher-Yates shuffle, kept in
/// their original order. Returns everything when count >= size.
inline std::vector<LabeledExample> seeded_subset(const std::vector<LabeledExample>& examples, std::size_t count,
                                                 std::uint64_t seed) {
  if (count >= examples.size()) return examples;
  std::vector<std::size_t> idx(examples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  std::vector<LabeledExample> out;
  out.reserve(count);
  for (auto i : idx) out.push_back(examples[i]);
  return out;
}

inline std::vector<double> mean_pool(const TokenMatrix& z) {
  std::vector<double> pooled(z.dim(), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t j = 0; j < z.dim(); ++j) pooled[j] += z.tokens(i, j);
  for (auto& v : pooled) v /= static_cast<double>(std::max<std::size_t>(1, z.size()));
  return pooled;
}

struct PrototypeHead {
  std::vector<std::vector<double>> centroids;  // num_classes x d

  std::size_t num_classes() const { return centroids.size(); }
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Argmax cosine similarity to the centroids; ties go to the lowest class id.
inline std::size_t classify_pooled(std::span<const double> pooled, const PrototypeHead& head) {
  std::size_t best = 0;
  double best_score = -INFINITY;
  for (std::size_t c = 0; c < head.centroids.size(); ++c) {
    const double s = cosine(pooled, head.centroids[c]);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

inline std::size_t classify(const TokenMatrix& z_hat, const PrototypeHead& head) {
  return classify_pooled(mean_pool(z_hat), head);
}

/// Class means of mean-pooled final tokens from an unmerged, noiseless pass.
inline PrototypeHead fit_prototypes(const ModelWeights& weights, const std::vector<LabeledExample>& calibration,
                                    std::size_t threads = 1) {
  const std::size_t classes = weights.dims.num_classes;
  std::vector<std::vector<double>> pooled(calibration.size());
  parallel_for(calibration.size(), threads,
               [&](std::size_t i) { pooled[i] = mean_pool(forward(calibration[i].image, weights)); });

  PrototypeHead head;
  head.centroids.assign(classes, std::vector<double>(weights.dims.dim, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    const std::size_t c = calibration[i].label;
    if (c >= classes) throw ConfigError("calibration label " + std::to_string(c) + " >= num_classes");
    for (std::size_t j = 0; j < pooled[i].size(); ++j) head.centroids[c][j] += pooled[i][j];
    ++counts[c];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw ConfigError("calibration set has no samples of class " + std::to_string(c));
    double norm = 0.0;
    for (auto& v : head.centroids[c]) {
      v /= static_cast<double>(counts[c]);
      norm += v * v;
    }
    if (!std::isfinite(norm) || norm == 0.0)
      throw NumericError("centroid of class " + std::to_string(c) + " is zero or non-finite");
  }
  return head;
}

struct EvalResult {
  double accuracy = 0.0;
  FlopCount flops = 0;
  MergeSchedule schedule;
  std::optional<double> snr_db;  // empty = noiseless
  std::size_t n_samples = 0;
  std::size_t correct = 0;
};

/// Holds the immutable model, head and evaluation examples. Per-sample work runs
/// in parallel; sample i always uses channel seed mix_seed(channel.seed, i), so
/// SNR and schedule comparisons share noise realizations.
class TaskEvaluator {
 public:
  TaskEvaluator(std::shared_ptr<const ModelWeights> weights, PrototypeHead head,
                std::vector<LabeledExample> examples, std::size_t threads = 1)
      : weights_(std::move(weights)), head_(std::move(head)), examples_(std::move(examples)), threads_(threads) {}

  const ModelWeights& weights() const { return *weights_; }
  const PrototypeHead& head() const { return head_; }
  std::size_t size() const { return examples_.size(); }

  /// Per-sample correctness, one entry per channel (nullopt = noiseless).
  std::vector<std::vector<char>> correctness(const MergeSchedule& schedule,
                                             std::span<const std::optional<ChannelSpec>> channels) const {
    schedule.validate(weights_->dims.layers);
    std::vector<std::vector<char>> out(channels.size(), std::vector<char>(examples_.size(), 0));
    parallel_for(examples_.size(), threads_, [&](std::size_t i) {
      const TokenMatrix z = encode(examples_[i].image, *weights_, schedule);
      for (std::size_t c = 0; c < channels.size(); ++c) {
        std::size_t label;
        if (channels[c]) {
          ChannelSpec spec = *channels[c];
          spec.seed = mix_seed(spec.seed, i);
          label = classify(transmit_tokens(z, spec), head_);
        } else {
          label = classify(z, head_);
        }
        out[c][i] = label == examples_[i].label ? 1 : 0;
      }
    });
    return out;
  }

  EvalResult evaluate(const MergeSchedule& schedule, const std::optional<ChannelSpec>& channel = std::nullopt) const {
    const std::optional<ChannelSpec> channels[] = {channel};
    return summarize(schedule, channel, correctness(schedule, channels).front());
  }

  /// Encodes once, then runs every SNR with `base` as the channel template.
  std::vector<EvalResult> evaluate_sweep(const MergeSchedule& schedule, std::span<const double> snrs,
                                         const ChannelSpec& base) const {
    std::vector<std::optional<ChannelSpec>> channels;
    for (double snr : snrs) {
      ChannelSpec spec = base;
      spec.snr_db = snr;
      channels.emplace_back(spec);
    }
    const auto hits = correctness(schedule, channels);
    std::vector<EvalResult> out;
    for (std::size_t c = 0; c < channels.size(); ++c) out.push_back(summarize(schedule, channels[c], hits[c]));
    return out;
  }

 private:
  EvalResult summarize(const MergeSchedule& schedule, const std::optional<ChannelSpec>& channel,
                       const std::vector<char>& hits) const {
    EvalResult r;
    r.schedule = schedule;
    r.flops = schedule_flops(schedule, weights_->dims).total;
    r.n_samples = hits.size();
    for (char h : hits) r.correct += static_cast<std::size_t>(h);
    r.accuracy = hits.empty() ? 0.0 : static_cast<double>(r.correct) / static_cast<double>(hits.size());
    if (channel) r.snr_db = channel->snr_db;
    return r;
  }

  std::shared_ptr<const ModelWeights> weights_;
  PrototypeHead head_;
  std::vector<LabeledExample> examples_;
  std::size_t threads_;
};

/// One-shot form of TaskEvaluator::evaluate.
inline EvalResult evaluate_objectives(const MergeSchedule& schedule, const ModelWeights& weights,
                                      const PrototypeHead& head, const std::vector<LabeledExample>& examples,
                                      const std::optional<ChannelSpec>& channel, std::size_t threads = 1) {
  TaskEvaluator ev(std::make_shared<const ModelWeights>(weights), head, examples, threads);
  return ev.evaluate(schedule, channel);
}

}  // namespace tokmerge
