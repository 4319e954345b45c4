#pragma once

#include <random>
#include <vector>

#include "tokmerge/common.hpp"

namespace tokmerge::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<float> g(0.0f, static_cast<float>(sd));
  Matrix m(rows, cols);
  for (auto& v : m.data) v = g(rng);
  return m;
}

inline Image random_image(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Image img(h, w, c);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - b.data[i]));
  return m;
}

}  // namespace tokmerge::testing
