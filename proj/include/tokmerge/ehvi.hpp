#pragma once

// Exact 2-D expected hypervolume improvement, evaluated in log space.
//
// In the maximize-both orientation y = (accuracy, -flops) with the front
// sorted by ascending accuracy, the non-dominated region splits into vertical
// strips (a_j, a_{j+1}] above heights b_j. The improvement of a candidate
// (u, v) is sum_j clip(u; a_j, a_{j+1}) * (v - b_j)^+, and with independent
// Gaussian marginals each strip factorizes:
//
//   EHVI = sum_j (psi(a_j) - psi(a_{j+1}))_u * psi(b_j)_v,   psi(c) = E[(Y - c)^+]

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "tokmerge/pareto.hpp"

namespace tokmerge {

struct GaussianMarginal {
  double mean = 0.0;
  double variance = 0.0;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// log(1 - exp(x)) for x <= 0.
inline double log1mexp(double x) {
  if (x == kNegInf) return 0.0;
  if (x >= 0.0) return kNegInf;
  return x > -std::numbers::ln2 ? std::log(-std::expm1(x)) : std::log1p(-std::exp(x));
}

// log h(z), h(z) = z Phi(z) + phi(z) = E[(Z + z)^+] for standard normal Z.
inline double log_h(double z) {
  constexpr double kLogSqrt2Pi = 0.91893853320467274178;
  if (z > -1.0) {
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * z * z - kLogSqrt2Pi);
    return std::log(z * cdf + pdf);
  }
  // h(z) = phi(z) (1 - x Q(x)/phi(x)) with x = -z.
  const double x = -z;
  const double log_pdf = -0.5 * x * x - kLogSqrt2Pi;
  double tail;
  if (x < 25.0) {
    const double q_over_pdf = 0.5 * std::erfc(x / std::numbers::sqrt2) / std::exp(log_pdf);
    tail = 1.0 - x * q_over_pdf;
  } else {
    const double ix2 = 1.0 / (x * x);
    tail = ix2 * (1.0 - 3.0 * ix2 * (1.0 - 5.0 * ix2 * (1.0 - 7.0 * ix2)));
  }
  return log_pdf + std::log(tail);
}

// log E[(Y - c)^+] for Y ~ N(mean, var).
inline double log_psi(const GaussianMarginal& y, double c) {
  if (c == std::numeric_limits<double>::infinity()) return kNegInf;
  const double sd = std::sqrt(std::max(0.0, y.variance));
  if (sd < 1e-300 || (sd < 1e-12 * std::max(1.0, std::abs(y.mean - c)))) {
    const double gap = y.mean - c;
    return gap > 0.0 ? std::log(gap) : kNegInf;
  }
  return std::log(sd) + log_h((y.mean - c) / sd);
}

}  // namespace detail

/// log EHVI of a candidate with independent posteriors over accuracy and FLOPs.
/// Returns -inf when no improvement is possible.
inline double log_ehvi(const GaussianMarginal& accuracy, const GaussianMarginal& flops,
                       std::span<const ParetoPoint> front_points, ReferencePoint reference) {
  std::vector<ParetoPoint> usable;
  for (const auto& p : front_points)
    if (p.accuracy > reference.accuracy && static_cast<double>(p.flops) < reference.flops) usable.push_back(p);
  const auto front = pareto_filter(usable, reference);
  const auto& pts = front.points;
  const std::size_t k = pts.size();

  const GaussianMarginal neg_flops{-flops.mean, flops.variance};
  double total = kNegInf;
  for (std::size_t j = 0; j <= k; ++j) {
    const double a_lo = j == 0 ? reference.accuracy : pts[j - 1].accuracy;
    const double a_hi = j == k ? std::numeric_limits<double>::infinity() : pts[j].accuracy;
    const double b = j == k ? -reference.flops : -static_cast<double>(pts[j].flops);
    const double lw = detail::log_psi(accuracy, a_lo);
    if (lw == kNegInf) continue;
    const double width = lw + detail::log1mexp(std::min(0.0, detail::log_psi(accuracy, a_hi) - lw));
    const double height = detail::log_psi(neg_flops, b);
    if (width == kNegInf || height == kNegInf) continue;
    total = detail::log_add(total, width + height);
  }
  return total;
}

inline double log_ehvi(const GaussianMarginal& accuracy, const GaussianMarginal& flops, const ParetoFront& front) {
  return log_ehvi(accuracy, flops, front.points, front.reference);
}

}  // namespace tokmerge
