#pragma once

// Linear JSCC over a power-normalized AWGN channel.
//
// encode: flatten tokens row-major -> optional orthonormal projection ->
//         pack real pairs into complex symbols (zero-pad odd length) ->
//         divide by sqrt(sum |s|^2 / q) so the average symbol power is 1.
// decode: the inverse, with the scale carried as side information.

#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "tokmerge/common.hpp"

namespace tokmerge {

struct CodecSpec {
  enum class Kind { Identity, Linear };
  Kind kind = Kind::Identity;
  std::size_t dim = 0;         // q', linear codec only
  std::uint64_t seed = 0;      // fixes the orthonormal map

  bool operator==(const CodecSpec&) const = default;
};

struct ChannelSpec {
  double snr_db = 20.0;
  std::uint64_t seed = 0;      // noise stream
  CodecSpec codec;
};

struct SymbolVector {
  std::vector<std::complex<double>> symbols;
  double scale = 1.0;          // power normalization factor, sent as side information
  std::size_t real_count = 0;  // reals before padding (N_L d, or q')
};

inline constexpr double kScaleFloor = 1e-12;

inline double snr_to_sigma2(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

/// q' x D matrix with orthonormal rows, drawn from a seeded Gaussian through QR.
/// Cached per (seed, q', D); the map is immutable once built.
inline std::shared_ptr<const Eigen::MatrixXd> orthonormal_map(std::uint64_t seed, std::size_t rows, std::size_t cols) {
  static std::mutex mu;
  static std::map<std::tuple<std::uint64_t, std::size_t, std::size_t>, std::shared_ptr<const Eigen::MatrixXd>> cache;
  const auto key = std::make_tuple(seed, rows, cols);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  if (rows == 0 || rows > cols) throw ConfigError("codec dimension must satisfy 0 < q' <= token dimension");
  std::mt19937_64 rng(mix_seed(seed, cols));
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd g(cols, rows);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(cols),
                                                                    static_cast<Eigen::Index>(rows));
  auto map = std::make_shared<const Eigen::MatrixXd>(q.transpose());
  std::lock_guard lock(mu);
  return cache.emplace(key, std::move(map)).first->second;
}

inline SymbolVector jscc_encode(const TokenMatrix& z, const ChannelSpec& spec) {
  if (!all_finite(z.tokens.data)) throw NumericError("non-finite tokens passed to the JSCC encoder");
  std::vector<double> reals(z.tokens.data.begin(), z.tokens.data.end());
  if (spec.codec.kind == CodecSpec::Kind::Linear) {
    const auto map = orthonormal_map(spec.codec.seed, spec.codec.dim, reals.size());
    const Eigen::Map<const Eigen::VectorXd> x(reals.data(), static_cast<Eigen::Index>(reals.size()));
    const Eigen::VectorXd y = (*map) * x;
    reals.assign(y.data(), y.data() + y.size());
  }
  SymbolVector s;
  s.real_count = reals.size();
  if (reals.size() % 2 != 0) reals.push_back(0.0);
  s.symbols.resize(reals.size() / 2);
  double power = 0.0;
  for (std::size_t i = 0; i < s.symbols.size(); ++i) {
    s.symbols[i] = {reals[2 * i], reals[2 * i + 1]};
    power += std::norm(s.symbols[i]);
  }
  const double q = static_cast<double>(std::max<std::size_t>(1, s.symbols.size()));
  s.scale = std::max(std::sqrt(power / q), kScaleFloor);
  for (auto& v : s.symbols) v /= s.scale;
  return s;
}

/// s' = s + n, n ~ CN(0, sigma^2 I): real and imaginary parts each N(0, sigma^2 / 2).
inline SymbolVector awgn_transmit(const SymbolVector& s, const ChannelSpec& spec) {
  SymbolVector out = s;
  const double sd = std::sqrt(snr_to_sigma2(spec.snr_db) / 2.0);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& v : out.symbols) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    v += std::complex<double>(sd * re, sd * im);
  }
  return out;
}

inline TokenMatrix jscc_decode(const SymbolVector& s, const ChannelSpec& spec, std::size_t rows, std::size_t cols,
                               std::size_t protected_count = 1) {
  const std::size_t flat = rows * cols;
  const std::size_t expected = spec.codec.kind == CodecSpec::Kind::Linear ? spec.codec.dim : flat;
  if (s.real_count != expected || s.symbols.size() != (expected + 1) / 2)
    throw ConfigError("symbol vector does not match the decoder shape");

  std::vector<double> reals(2 * s.symbols.size());
  for (std::size_t i = 0; i < s.symbols.size(); ++i) {
    reals[2 * i] = s.symbols[i].real() * s.scale;
    reals[2 * i + 1] = s.symbols[i].imag() * s.scale;
  }
  reals.resize(s.real_count);
  if (spec.codec.kind == CodecSpec::Kind::Linear) {
    const auto map = orthonormal_map(spec.codec.seed, spec.codec.dim, flat);
    const Eigen::Map<const Eigen::VectorXd> y(reals.data(), static_cast<Eigen::Index>(reals.size()));
    const Eigen::VectorXd x = map->transpose() * y;
    reals.assign(x.data(), x.data() + x.size());
  }
  TokenMatrix z;
  z.protected_count = protected_count;
  z.tokens = Matrix(rows, cols);
  for (std::size_t i = 0; i < flat; ++i) z.tokens.data[i] = static_cast<float>(reals[i]);
  return z;
}

/// encode -> AWGN -> decode.
inline TokenMatrix transmit_tokens(const TokenMatrix& z, const ChannelSpec& spec) {
  return jscc_decode(awgn_transmit(jscc_encode(z, spec), spec), spec, z.size(), z.dim(), z.protected_count);
}

}  // namespace tokmerge
