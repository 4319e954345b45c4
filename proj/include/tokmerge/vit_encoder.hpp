#pragma once

// Small pre-norm transformer encoder (ViT style) with a post-layer
// token-reduction hook.
//
// Block: Z1 = Z + MHSA(LN1(Z)), Z2 = Z1 + MLP(LN2(Z1)), GELU activation.
// Storage is float; reductions (dot products, softmax, norms) accumulate in
// double.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tokmerge/common.hpp"
#include "tokmerge/token_merging.hpp"

namespace tokmerge {

struct ModelDims {
  std::size_t layers = 4;       // L
  std::size_t dim = 32;         // d
  std::size_t heads = 4;        // h
  std::size_t mlp_dim = 128;    // d_ff
  std::size_t tokens = 16;      // N, patches + class token
  std::size_t patch = 4;        // P
  std::size_t channels = 3;     // C
  std::size_t num_classes = 8;

  std::size_t patch_size() const { return patch * patch * channels; }
  std::size_t head_dim() const { return dim / heads; }

  void validate() const {
    if (layers < 1 || dim < 1 || heads < 1 || mlp_dim < 1 || patch < 1 || channels < 1 || num_classes < 1)
      throw ConfigError("model dims must all be positive");
    if (tokens < 2) throw ConfigError("model needs at least 2 tokens (class token + one patch)");
    if (dim % heads != 0) throw ConfigError("model dim must be divisible by head count");
  }

  bool operator==(const ModelDims&) const = default;
};

struct LayerWeights {
  Matrix wq, wk, wv, wo;            // d x d
  Matrix mlp_in;                    // d x d_ff
  std::vector<float> mlp_in_bias;   // d_ff
  Matrix mlp_out;                   // d_ff x d
  std::vector<float> mlp_out_bias;  // d
  std::vector<float> norm1_scale, norm1_shift;
  std::vector<float> norm2_scale, norm2_shift;

  bool operator==(const LayerWeights&) const = default;
};

struct ModelWeights {
  ModelDims dims;
  Matrix patch_projection;      // P*P*C x d
  Matrix positional;            // N x d
  std::vector<float> class_token;
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm_scale, final_norm_shift;

  bool operator==(const ModelWeights&) const = default;
};

/// All-zero parameters, layer norms included (scale 0). Useful as a base for
/// hand-built test models.
inline ModelWeights zero_weights(const ModelDims& dims) {
  dims.validate();
  const std::size_t d = dims.dim;
  ModelWeights w;
  w.dims = dims;
  w.patch_projection = Matrix(dims.patch_size(), d);
  w.positional = Matrix(dims.tokens, d);
  w.class_token.assign(d, 0.0f);
  w.layers.resize(dims.layers);
  for (auto& l : w.layers) {
    l.wq = l.wk = l.wv = l.wo = Matrix(d, d);
    l.mlp_in = Matrix(d, dims.mlp_dim);
    l.mlp_in_bias.assign(dims.mlp_dim, 0.0f);
    l.mlp_out = Matrix(dims.mlp_dim, d);
    l.mlp_out_bias.assign(d, 0.0f);
    l.norm1_scale = l.norm1_shift = l.norm2_scale = l.norm2_shift = std::vector<float>(d, 0.0f);
  }
  w.final_norm_scale = w.final_norm_shift = std::vector<float>(d, 0.0f);
  return w;
}

/// Seeded initializer: every matrix and embedding entry ~ N(0, 1/d); layer
/// norms start at scale 1, shift 0; biases are zero.
inline ModelWeights random_weights(const ModelDims& dims, std::uint64_t seed) {
  ModelWeights w = zero_weights(dims);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, static_cast<float>(1.0 / std::sqrt(static_cast<double>(dims.dim))));
  auto fill = [&](std::vector<float>& v) {
    for (auto& x : v) x = gauss(rng);
  };
  fill(w.patch_projection.data);
  fill(w.positional.data);
  fill(w.class_token);
  for (auto& l : w.layers) {
    fill(l.wq.data);
    fill(l.wk.data);
    fill(l.wv.data);
    fill(l.wo.data);
    fill(l.mlp_in.data);
    fill(l.mlp_out.data);
    std::fill(l.norm1_scale.begin(), l.norm1_scale.end(), 1.0f);
    std::fill(l.norm2_scale.begin(), l.norm2_scale.end(), 1.0f);
  }
  std::fill(w.final_norm_scale.begin(), w.final_norm_scale.end(), 1.0f);
  return w;
}

namespace detail {

// x (n x k) times w (k x m), double accumulation.
inline Matrix matmul(const Matrix& x, const Matrix& w) {
  Matrix out(x.rows, w.cols);
  std::vector<double> acc(w.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < x.cols; ++p) {
      const double xv = x(i, p);
      if (xv == 0.0) continue;
      const float* wr = &w.data[p * w.cols];
      for (std::size_t j = 0; j < w.cols; ++j) acc[j] += xv * wr[j];
    }
    for (std::size_t j = 0; j < w.cols; ++j) out(i, j) = static_cast<float>(acc[j]);
  }
  return out;
}

inline Matrix layer_norm(const Matrix& x, const std::vector<float>& scale, const std::vector<float>& shift) {
  constexpr double kEps = 1e-6;
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto r = x.row(i);
    double mean = 0.0;
    for (float v : r) mean += v;
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (float v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.cols);
    const double inv = 1.0 / std::sqrt(var + kEps);
    for (std::size_t j = 0; j < x.cols; ++j)
      out(i, j) = static_cast<float>((r[j] - mean) * inv * scale[j] + shift[j]);
  }
  return out;
}

inline float gelu(float x) {
  return static_cast<float>(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))));
}

inline void check_finite(const Matrix& m, std::size_t layer, const char* what) {
  if (!all_finite(m.data))
    throw NumericError(std::string("non-finite values in ") + what + " at layer " + std::to_string(layer),
                       static_cast<int>(layer));
}

}  // namespace detail

/// Class token followed by raster-ordered patch projections, plus positional
/// embeddings. Patch pixels are flattened (row, col, channel).
inline TokenMatrix patch_embed(const Image& image, const ModelWeights& weights) {
  const auto& dims = weights.dims;
  const std::size_t p = dims.patch;
  if (image.channels != dims.channels)
    throw ConfigError("image has " + std::to_string(image.channels) + " channels, model expects " +
                      std::to_string(dims.channels));
  if (image.height % p != 0 || image.width % p != 0)
    throw ConfigError("image size " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                      " not divisible by patch size " + std::to_string(p));
  const std::size_t gh = image.height / p, gw = image.width / p;
  if (gh * gw + 1 != dims.tokens)
    throw ConfigError("image yields " + std::to_string(gh * gw + 1) + " tokens, model expects " +
                      std::to_string(dims.tokens));

  Matrix patches(gh * gw, dims.patch_size());
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      auto dst = patches.row(py * gw + px);
      std::size_t k = 0;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t c = 0; c < dims.channels; ++c) dst[k++] = image.at(py * p + y, px * p + x, c);
    }
  const Matrix projected = detail::matmul(patches, weights.patch_projection);

  TokenMatrix z;
  z.protected_count = 1;
  z.tokens = Matrix(dims.tokens, dims.dim);
  for (std::size_t j = 0; j < dims.dim; ++j) z.tokens(0, j) = weights.class_token[j] + weights.positional(0, j);
  for (std::size_t i = 1; i < dims.tokens; ++i)
    for (std::size_t j = 0; j < dims.dim; ++j) z.tokens(i, j) = projected(i - 1, j) + weights.positional(i, j);
  return z;
}

struct BlockOutput {
  TokenMatrix tokens;
  Matrix values;  // LN1(Z) W_V from the block input; the merge similarity source
};

inline BlockOutput block_forward(const TokenMatrix& z, std::size_t layer_index, const ModelWeights& weights) {
  const auto& dims = weights.dims;
  const auto& lw = weights.layers.at(layer_index);
  const std::size_t n = z.size(), d = dims.dim, hd = dims.head_dim();
  detail::check_finite(z.tokens, layer_index, "block input");

  const Matrix x = detail::layer_norm(z.tokens, lw.norm1_scale, lw.norm1_shift);
  const Matrix q = detail::matmul(x, lw.wq);
  const Matrix k = detail::matmul(x, lw.wk);
  Matrix v = detail::matmul(x, lw.wv);

  Matrix heads_out(n, d);
  std::vector<double> scores(n);
  std::vector<double> acc(hd);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t h = 0; h < dims.heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < n; ++i) {
      double max_s = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += static_cast<double>(q(i, off + c)) * k(j, off + c);
        scores[j] = s * inv_sqrt;
        max_s = std::max(max_s, scores[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        scores[j] = std::exp(scores[j] - max_s);
        total += scores[j];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double a = scores[j] / total;
        for (std::size_t c = 0; c < hd; ++c) acc[c] += a * v(j, off + c);
      }
      for (std::size_t c = 0; c < hd; ++c) heads_out(i, off + c) = static_cast<float>(acc[c]);
    }
  }
  const Matrix attn = detail::matmul(heads_out, lw.wo);

  BlockOutput out;
  out.tokens.protected_count = z.protected_count;
  Matrix& z1 = out.tokens.tokens;
  z1 = Matrix(n, d);
  for (std::size_t i = 0; i < z1.data.size(); ++i) z1.data[i] = z.tokens.data[i] + attn.data[i];

  const Matrix y = detail::layer_norm(z1, lw.norm2_scale, lw.norm2_shift);
  Matrix hidden = detail::matmul(y, lw.mlp_in);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dims.mlp_dim; ++j) hidden(i, j) = detail::gelu(hidden(i, j) + lw.mlp_in_bias[j]);
  const Matrix mlp = detail::matmul(hidden, lw.mlp_out);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) z1(i, j) += mlp(i, j) + lw.mlp_out_bias[j];

  detail::check_finite(z1, layer_index, "block output");
  out.values = std::move(v);
  return out;
}

/// Post-layer reduction hook: (block output, values from block input, layer) -> reduced tokens.
using TokenReducer = std::function<TokenMatrix(TokenMatrix, const Matrix&, std::size_t)>;

/// Runs all blocks, applying `reduce` after each one when set, then the final
/// layer norm.
inline TokenMatrix run_encoder(const Image& image, const ModelWeights& weights, const TokenReducer& reduce) {
  TokenMatrix z = patch_embed(image, weights);
  for (std::size_t l = 0; l < weights.dims.layers; ++l) {
    auto block = block_forward(z, l, weights);
    z = reduce ? reduce(std::move(block.tokens), block.values, l) : std::move(block.tokens);
  }
  z.tokens = detail::layer_norm(z.tokens, weights.final_norm_scale, weights.final_norm_shift);
  return z;
}

/// Plain forward pass, no merge hooks installed.
inline TokenMatrix forward(const Image& image, const ModelWeights& weights) {
  return run_encoder(image, weights, {});
}

/// Forward pass with per-layer token merging. Appends selected pairs to
/// `trace` when given.
inline TokenMatrix encode(const Image& image, const ModelWeights& weights, const MergeSchedule& schedule,
                          MergeTrace* trace = nullptr) {
  schedule.validate(weights.dims.layers);
  return run_encoder(image, weights, [&](TokenMatrix z, const Matrix& values, std::size_t layer) {
    auto merged = merge_layer(z, values, schedule[layer]);
    if (trace)
      for (const auto& m : merged.assignment.pairs) trace->push_back({layer, m.source, m.destination, m.score});
    return std::move(merged.tokens);
  });
}

}  // namespace tokmerge
