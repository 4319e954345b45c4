#pragma once

// Tensor container shared by weight files and dataset dumps:
//
//   magic      8 bytes ("TMVIT001" for weights, "TMDSET01" for datasets)
//   hdr_len    uint64 little-endian
//   header     hdr_len bytes of UTF-8 JSON:
//                {"dims": {...}, "tensors": [{"name", "shape", "offset"}, ...], ...}
//              offset is in bytes from the start of the payload section
//   payload    little-endian float32 tensors, back to back in manifest order

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tokmerge/common.hpp"
#include "tokmerge/task_eval.hpp"
#include "tokmerge/vit_encoder.hpp"

namespace tokmerge {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

inline constexpr std::string_view kWeightsMagic = "TMVIT001";
inline constexpr std::string_view kDatasetMagic = "TMDSET01";

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

struct Container {
  nlohmann::ordered_json header;                 // everything except the tensor manifest
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw ConfigError("container has no tensor '" + name + "'");
  }
};

inline void write_container(const std::string& path, std::string_view magic, const Container& c) {
  nlohmann::ordered_json header = c.header;
  auto manifest = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    std::size_t count = 1;
    for (auto s : t.shape) count *= s;
    if (count != t.values.size()) throw ConfigError("tensor '" + name + "' shape does not match its data");
    manifest.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.values.size() * sizeof(float);
  }
  header["tensors"] = manifest;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : c.tensors)
    os.write(reinterpret_cast<const char*>(t.values.data()),
             static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  if (!os) throw ConfigError("failed writing '" + path + "'");
}

inline Container read_container(const std::string& path, std::string_view magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open '" + path + "'");
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic) throw ConfigError("'" + path + "' is not a " + std::string(magic) + " file");
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || len > (1ULL << 30)) throw ConfigError("'" + path + "' has a corrupt header length");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw ConfigError("'" + path + "' is truncated in its header");

  Container c;
  try {
    c.header = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "' header is not valid JSON: " + e.what());
  }
  const auto manifest = c.header.at("tensors");
  c.header.erase("tensors");

  const auto payload_start = is.tellg();
  for (const auto& entry : manifest) {
    Tensor t;
    t.shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::size_t count = 1;
    for (auto s : t.shape) count *= s;
    t.values.resize(count);
    is.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw ConfigError("'" + path + "' is truncated in tensor '" + entry.at("name").get<std::string>() + "'");
    c.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return c;
}

inline nlohmann::ordered_json dims_to_json(const ModelDims& d) {
  return {{"layers", d.layers},     {"dim", d.dim},       {"heads", d.heads},
          {"mlp_dim", d.mlp_dim},   {"tokens", d.tokens}, {"patch", d.patch},
          {"channels", d.channels}, {"num_classes", d.num_classes}};
}

inline ModelDims dims_from_json(const nlohmann::ordered_json& j) {
  ModelDims d;
  d.layers = j.at("layers").get<std::size_t>();
  d.dim = j.at("dim").get<std::size_t>();
  d.heads = j.at("heads").get<std::size_t>();
  d.mlp_dim = j.at("mlp_dim").get<std::size_t>();
  d.tokens = j.at("tokens").get<std::size_t>();
  d.patch = j.at("patch").get<std::size_t>();
  d.channels = j.at("channels").get<std::size_t>();
  d.num_classes = j.at("num_classes").get<std::size_t>();
  d.validate();
  return d;
}

namespace detail {

inline Tensor as_tensor(const Matrix& m) { return {{m.rows, m.cols}, m.data}; }
inline Tensor as_tensor(const std::vector<float>& v) { return {{v.size()}, v}; }

inline void take(const Container& c, const std::string& name, Matrix& m, std::size_t rows, std::size_t cols) {
  const auto& t = c.at(name);
  if (t.shape != std::vector<std::size_t>{rows, cols})
    throw ConfigError("tensor '" + name + "' has the wrong shape");
  m = Matrix(rows, cols);
  m.data = t.values;
  if (!all_finite(m.data)) throw ConfigError("tensor '" + name + "' has non-finite entries");
}

inline void take(const Container& c, const std::string& name, std::vector<float>& v, std::size_t len) {
  const auto& t = c.at(name);
  if (t.shape != std::vector<std::size_t>{len}) throw ConfigError("tensor '" + name + "' has the wrong shape");
  v = t.values;
  if (!all_finite(v)) throw ConfigError("tensor '" + name + "' has non-finite entries");
}

}  // namespace detail

/// Tensor names, in manifest order:
///   patch_projection [P*P*C, d], positional_embeddings [N, d], class_token [d],
///   layers.{i}.{wq,wk,wv,wo} [d, d], layers.{i}.mlp_in [d, d_ff],
///   layers.{i}.mlp_in_bias [d_ff], layers.{i}.mlp_out [d_ff, d],
///   layers.{i}.mlp_out_bias [d], layers.{i}.norm{1,2}_{scale,shift} [d],
///   final_norm_scale [d], final_norm_shift [d].
/// Matrices multiply row vectors from the right (y = x W).
inline void save_weights(const std::string& path, const ModelWeights& w) {
  using detail::as_tensor;
  Container c;
  c.header["dims"] = dims_to_json(w.dims);
  c.tensors.emplace_back("patch_projection", as_tensor(w.patch_projection));
  c.tensors.emplace_back("positional_embeddings", as_tensor(w.positional));
  c.tensors.emplace_back("class_token", as_tensor(w.class_token));
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& l = w.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    c.tensors.emplace_back(p + "wq", as_tensor(l.wq));
    c.tensors.emplace_back(p + "wk", as_tensor(l.wk));
    c.tensors.emplace_back(p + "wv", as_tensor(l.wv));
    c.tensors.emplace_back(p + "wo", as_tensor(l.wo));
    c.tensors.emplace_back(p + "mlp_in", as_tensor(l.mlp_in));
    c.tensors.emplace_back(p + "mlp_in_bias", as_tensor(l.mlp_in_bias));
    c.tensors.emplace_back(p + "mlp_out", as_tensor(l.mlp_out));
    c.tensors.emplace_back(p + "mlp_out_bias", as_tensor(l.mlp_out_bias));
    c.tensors.emplace_back(p + "norm1_scale", as_tensor(l.norm1_scale));
    c.tensors.emplace_back(p + "norm1_shift", as_tensor(l.norm1_shift));
    c.tensors.emplace_back(p + "norm2_scale", as_tensor(l.norm2_scale));
    c.tensors.emplace_back(p + "norm2_shift", as_tensor(l.norm2_shift));
  }
  c.tensors.emplace_back("final_norm_scale", as_tensor(w.final_norm_scale));
  c.tensors.emplace_back("final_norm_shift", as_tensor(w.final_norm_shift));
  write_container(path, kWeightsMagic, c);
}

inline ModelWeights load_weights(const std::string& path) {
  using detail::take;
  const Container c = read_container(path, kWeightsMagic);
  ModelWeights w = zero_weights(dims_from_json(c.header.at("dims")));
  const auto& dims = w.dims;
  const std::size_t d = dims.dim, f = dims.mlp_dim;
  take(c, "patch_projection", w.patch_projection, dims.patch_size(), d);
  take(c, "positional_embeddings", w.positional, dims.tokens, d);
  take(c, "class_token", w.class_token, d);
  for (std::size_t i = 0; i < dims.layers; ++i) {
    auto& l = w.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    take(c, p + "wq", l.wq, d, d);
    take(c, p + "wk", l.wk, d, d);
    take(c, p + "wv", l.wv, d, d);
    take(c, p + "wo", l.wo, d, d);
    take(c, p + "mlp_in", l.mlp_in, d, f);
    take(c, p + "mlp_in_bias", l.mlp_in_bias, f);
    take(c, p + "mlp_out", l.mlp_out, f, d);
    take(c, p + "mlp_out_bias", l.mlp_out_bias, d);
    take(c, p + "norm1_scale", l.norm1_scale, d);
    take(c, p + "norm1_shift", l.norm1_shift, d);
    take(c, p + "norm2_scale", l.norm2_scale, d);
    take(c, p + "norm2_shift", l.norm2_shift, d);
  }
  take(c, "final_norm_scale", w.final_norm_scale, d);
  take(c, "final_norm_shift", w.final_norm_shift, d);
  return w;
}

/// Dataset dump: tensors "images" [n, H, W, C] and "labels" [n]; the header
/// carries the generating spec.
inline void save_dataset(const std::string& path, const Dataset& ds) {
  Container c;
  const auto& sp = ds.spec;
  c.header["spec"] = {{"num_classes", sp.num_classes}, {"samples_per_class", sp.samples_per_class},
                      {"height", sp.height},           {"width", sp.width},
                      {"channels", sp.channels},       {"noise_level", sp.noise_level}};
  Tensor images{{ds.size(), sp.height, sp.width, sp.channels}, {}};
  Tensor labels{{ds.size()}, {}};
  for (const auto& e : ds.examples) {
    images.values.insert(images.values.end(), e.image.pixels.begin(), e.image.pixels.end());
    labels.values.push_back(static_cast<float>(e.label));
  }
  c.tensors.emplace_back("images", std::move(images));
  c.tensors.emplace_back("labels", std::move(labels));
  write_container(path, kDatasetMagic, c);
}

inline Dataset load_dataset(const std::string& path) {
  const Container c = read_container(path, kDatasetMagic);
  Dataset ds;
  try {
    const auto& j = c.header.at("spec");
    ds.spec.num_classes = j.at("num_classes").get<std::size_t>();
    ds.spec.samples_per_class = j.at("samples_per_class").get<std::size_t>();
    ds.spec.height = j.at("height").get<std::size_t>();
    ds.spec.width = j.at("width").get<std::size_t>();
    ds.spec.channels = j.at("channels").get<std::size_t>();
    ds.spec.noise_level = j.at("noise_level").get<double>();
  } catch (const nlohmann::ordered_json::exception& e) {
    throw ConfigError(path + ": bad dataset header: " + e.what());
  }
  const Tensor& images = c.at("images");
  const Tensor& labels = c.at("labels");
  const std::size_t n = labels.values.size();
  const std::size_t px = ds.spec.height * ds.spec.width * ds.spec.channels;
  if (images.values.size() != n * px) throw ConfigError(path + ": image tensor size does not match labels");
  for (std::size_t i = 0; i < n; ++i) {
    LabeledExample e;
    e.image = Image(ds.spec.height, ds.spec.width, ds.spec.channels);
    std::copy_n(images.values.begin() + static_cast<std::ptrdiff_t>(i * px), px, e.image.pixels.begin());
    e.label = static_cast<std::size_t>(labels.values[i]);
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

}  // namespace tokmerge
