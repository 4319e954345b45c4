#pragma once

// Flat, typed key-value run configuration.
//
//   # comment
//   key = value
//
// Every key is listed in kConfigKeys with its type; unknown keys, bad values
// and missing seeds are rejected with a ConfigError naming the key. Relative
// paths resolve against the directory holding the config file. Environment
// variables are never consulted.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tokmerge/channel.hpp"
#include "tokmerge/common.hpp"
#include "tokmerge/flops_model.hpp"
#include "tokmerge/gp_surrogate.hpp"
#include "tokmerge/task_eval.hpp"
#include "tokmerge/vit_encoder.hpp"

namespace tokmerge {

struct RunConfig {
  ModelDims model;
  std::optional<std::filesystem::path> weights_file;
  std::size_t image_height = 12;
  std::size_t image_width = 20;

  std::size_t calib_per_class = 32;
  std::size_t eval_per_class = 128;
  double noise_level = 0.25;

  std::uint64_t dataset_seed = 0;
  std::uint64_t weights_seed = 0;
  std::uint64_t channel_seed = 0;
  std::uint64_t bo_seed = 0;

  double max_proportion = MergeSchedule::kMaxProportion;

  CodecSpec codec;
  std::optional<double> optimize_snr_db;  // empty = optimize noiseless

  std::size_t budget = 150;
  std::size_t n_init = 0;
  std::size_t restarts = 8;
  std::size_t eval_subset = 256;
  std::size_t acquisition_samples = 1024;
  GPPriors priors;

  std::vector<double> snr_list{-10, -5, 0, 5, 10, 15, 20, 25};
  std::vector<double> uniform_baselines{0.1, 0.2, 0.3};
  std::size_t random_baselines = 20;
  double accuracy_drop = 0.02;

  std::filesystem::path output_dir = "out";

  DatasetSpec dataset_spec(Split split) const {
    DatasetSpec s;
    s.num_classes = model.num_classes;
    s.samples_per_class = split == Split::Calibration ? calib_per_class : eval_per_class;
    s.height = image_height;
    s.width = image_width;
    s.channels = model.channels;
    s.noise_level = noise_level;
    return s;
  }
};

namespace detail {

enum class KeyType { Size, Seed, Real, OptReal, Text, Path, RealList };

inline const std::map<std::string, KeyType>& config_keys() {
  static const std::map<std::string, KeyType> keys = {
      {"model.layers", KeyType::Size},
      {"model.dim", KeyType::Size},
      {"model.heads", KeyType::Size},
      {"model.mlp_dim", KeyType::Size},
      {"model.patch", KeyType::Size},
      {"model.channels", KeyType::Size},
      {"model.num_classes", KeyType::Size},
      {"model.weights_file", KeyType::Path},
      {"image.height", KeyType::Size},
      {"image.width", KeyType::Size},
      {"dataset.calib_per_class", KeyType::Size},
      {"dataset.eval_per_class", KeyType::Size},
      {"dataset.noise_level", KeyType::Real},
      {"seed.dataset", KeyType::Seed},
      {"seed.weights", KeyType::Seed},
      {"seed.channel", KeyType::Seed},
      {"seed.bo", KeyType::Seed},
      {"merge.max_proportion", KeyType::Real},
      {"channel.codec", KeyType::Text},
      {"channel.codec_dim", KeyType::Size},
      {"channel.codec_seed", KeyType::Seed},
      {"channel.optimize_snr_db", KeyType::OptReal},
      {"bo.budget", KeyType::Size},
      {"bo.n_init", KeyType::Size},
      {"bo.restarts", KeyType::Size},
      {"bo.eval_subset", KeyType::Size},
      {"bo.acquisition_samples", KeyType::Size},
      {"bo.prior.signal_shape", KeyType::Real},
      {"bo.prior.signal_rate", KeyType::Real},
      {"bo.prior.noise_shape", KeyType::Real},
      {"bo.prior.noise_rate", KeyType::Real},
      {"bo.prior.lengthscale_shape", KeyType::Real},
      {"bo.prior.lengthscale_rate", KeyType::Real},
      {"sweep.snr_list", KeyType::RealList},
      {"sweep.uniform_baselines", KeyType::RealList},
      {"sweep.random_baselines", KeyType::Size},
      {"policy.accuracy_drop", KeyType::Real},
      {"output_dir", KeyType::Path},
  };
  return keys;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(x)) throw ConfigError(key + ": expected a real number, got '" + v + "'");
  return x;
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range: '" + v + "'");
  }
}

inline std::vector<double> parse_real_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_real(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list of reals");
  return out;
}

}  // namespace detail

/// Parses config text. `base_dir` anchors relative paths.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".") {
  using detail::KeyType;
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!detail::config_keys().contains(key)) throw ConfigError(key + ": unknown config key");
    if (kv.contains(key)) throw ConfigError(key + ": key given twice");
    kv[key] = value;
  }

  RunConfig c;
  auto size = [&](const std::string& key, std::size_t& dst) {
    if (auto it = kv.find(key); it != kv.end()) dst = detail::parse_unsigned(key, it->second);
  };
  auto real = [&](const std::string& key, double& dst) {
    if (auto it = kv.find(key); it != kv.end()) dst = detail::parse_real(key, it->second);
  };
  auto seed = [&](const std::string& key, std::uint64_t& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(key + ": required seed is missing");
    dst = detail::parse_unsigned(key, it->second);
  };
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };

  size("model.layers", c.model.layers);
  size("model.dim", c.model.dim);
  size("model.heads", c.model.heads);
  size("model.mlp_dim", c.model.mlp_dim);
  size("model.patch", c.model.patch);
  size("model.channels", c.model.channels);
  size("model.num_classes", c.model.num_classes);
  size("image.height", c.image_height);
  size("image.width", c.image_width);
  size("dataset.calib_per_class", c.calib_per_class);
  size("dataset.eval_per_class", c.eval_per_class);
  real("dataset.noise_level", c.noise_level);
  seed("seed.dataset", c.dataset_seed);
  seed("seed.weights", c.weights_seed);
  seed("seed.channel", c.channel_seed);
  seed("seed.bo", c.bo_seed);
  real("merge.max_proportion", c.max_proportion);
  size("bo.budget", c.budget);
  size("bo.n_init", c.n_init);
  size("bo.restarts", c.restarts);
  size("bo.eval_subset", c.eval_subset);
  size("bo.acquisition_samples", c.acquisition_samples);
  real("bo.prior.signal_shape", c.priors.signal_variance.shape);
  real("bo.prior.signal_rate", c.priors.signal_variance.rate);
  real("bo.prior.noise_shape", c.priors.noise_variance.shape);
  real("bo.prior.noise_rate", c.priors.noise_variance.rate);
  real("bo.prior.lengthscale_shape", c.priors.inverse_sq_lengthscale.shape);
  real("bo.prior.lengthscale_rate", c.priors.inverse_sq_lengthscale.rate);
  size("sweep.random_baselines", c.random_baselines);
  real("policy.accuracy_drop", c.accuracy_drop);
  if (auto it = kv.find("sweep.snr_list"); it != kv.end()) c.snr_list = detail::parse_real_list(it->first, it->second);
  if (auto it = kv.find("sweep.uniform_baselines"); it != kv.end())
    c.uniform_baselines = detail::parse_real_list(it->first, it->second);
  if (auto it = kv.find("model.weights_file"); it != kv.end()) c.weights_file = path(it->second);
  if (auto it = kv.find("output_dir"); it != kv.end()) c.output_dir = path(it->second);
  else c.output_dir = base_dir / c.output_dir;
  if (auto it = kv.find("channel.optimize_snr_db"); it != kv.end() && it->second != "none")
    c.optimize_snr_db = detail::parse_real(it->first, it->second);
  if (auto it = kv.find("channel.codec"); it != kv.end()) {
    if (it->second == "identity") c.codec.kind = CodecSpec::Kind::Identity;
    else if (it->second == "linear") c.codec.kind = CodecSpec::Kind::Linear;
    else throw ConfigError("channel.codec: expected 'identity' or 'linear', got '" + it->second + "'");
  }
  size("channel.codec_dim", c.codec.dim);
  if (auto it = kv.find("channel.codec_seed"); it != kv.end())
    c.codec.seed = detail::parse_unsigned(it->first, it->second);

  // Semantic checks.
  if (c.model.patch == 0 || c.image_height % c.model.patch != 0 || c.image_width % c.model.patch != 0)
    throw ConfigError("image.height: image size must be divisible by model.patch");
  c.model.tokens = (c.image_height / c.model.patch) * (c.image_width / c.model.patch) + 1;
  try {
    c.model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model.dim: ") + e.what());
  }
  if (!(c.max_proportion > 0.0 && c.max_proportion <= MergeSchedule::kMaxProportion))
    throw ConfigError("merge.max_proportion: must be in (0, 0.3]");
  if (c.noise_level < 0.0) throw ConfigError("dataset.noise_level: must be non-negative");
  if (c.calib_per_class == 0) throw ConfigError("dataset.calib_per_class: must be positive");
  if (c.eval_per_class == 0) throw ConfigError("dataset.eval_per_class: must be positive");
  if (c.codec.kind == CodecSpec::Kind::Linear && c.codec.dim == 0)
    throw ConfigError("channel.codec_dim: linear codec needs a positive dimension");
  if (c.codec.kind == CodecSpec::Kind::Linear) {
    // The most aggressive schedule leaves the fewest tokens to transmit.
    const auto counts = token_counts(MergeSchedule::uniform(c.model.layers, c.max_proportion), c.model);
    const std::size_t reals = counts.back() * c.model.dim;
    if (c.codec.dim > reals)
      throw ConfigError("channel.codec_dim: exceeds the " + std::to_string(reals) +
                        " reals left by the most aggressive schedule");
  }
  const std::size_t n_init = c.n_init != 0 ? c.n_init : std::max<std::size_t>(2 * c.model.layers, 16);
  if (c.n_init != 0 && c.n_init < 2 * c.model.layers) throw ConfigError("bo.n_init: must be at least 2 * model.layers");
  if (c.budget < n_init) throw ConfigError("bo.budget: must be at least bo.n_init");
  if (c.restarts == 0) throw ConfigError("bo.restarts: must be positive");
  if (c.acquisition_samples == 0) throw ConfigError("bo.acquisition_samples: must be positive");
  for (double p : c.uniform_baselines)
    if (p < 0.0 || p > c.max_proportion) throw ConfigError("sweep.uniform_baselines: entries must lie in the merge bounds");
  if (c.accuracy_drop < 0.0) throw ConfigError("policy.accuracy_drop: must be non-negative");
  for (const auto& [key, prior] : {std::pair{"bo.prior.signal_shape", c.priors.signal_variance},
                                   std::pair{"bo.prior.noise_shape", c.priors.noise_variance},
                                   std::pair{"bo.prior.lengthscale_shape", c.priors.inverse_sq_lengthscale}})
    if (!(prior.shape > 0.0 && prior.rate > 0.0)) throw ConfigError(std::string(key) + ": Gamma prior needs positive shape and rate");
  if (c.weights_file && !std::filesystem::exists(*c.weights_file))
    throw ConfigError("model.weights_file: file not found: " + c.weights_file->string());
  return c;
}

inline RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("config file not found: " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), file.parent_path().empty() ? std::filesystem::path(".") : file.parent_path());
}

}  // namespace tokmerge
