#pragma once

// Gaussian-process regression with a Matern-5/2 ARD kernel and constant mean.
//
// Hyperparameters are fitted by maximizing the log marginal likelihood plus
// Gamma log-priors on the signal variance, the noise variance and each inverse
// squared lengthscale. The constant mean has no prior and is profiled out in
// closed form (its generalized-least-squares estimate).

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "tokmerge/common.hpp"

namespace tokmerge {

struct GammaPrior {
  double shape = 1.0;
  double rate = 1.0;

  double log_density(double x) const {
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
  }
  /// d log_density / d log x
  double dlog_dlogx(double x) const { return (shape - 1.0) - rate * x; }
};

struct GPPriors {
  GammaPrior signal_variance{2.0, 0.5};
  GammaPrior noise_variance{1.1, 10.0};
  GammaPrior inverse_sq_lengthscale{3.0, 6.0};
};

struct GPHyperparams {
  double signal_variance = 1.0;
  std::vector<double> lengthscales;
  double noise_variance = 1e-2;
  double constant_mean = 0.0;

  bool operator==(const GPHyperparams&) const = default;
};

struct ObservationSet {
  std::vector<std::vector<double>> inputs;
  std::vector<double> targets;

  std::size_t size() const { return targets.size(); }
  std::size_t dim() const { return inputs.empty() ? 0 : inputs.front().size(); }
};

inline constexpr double kSqrt5 = 2.2360679774997896964;

inline double matern52_from_distance(double r, double signal_variance) {
  return signal_variance * (1.0 + kSqrt5 * r + (5.0 / 3.0) * r * r) * std::exp(-kSqrt5 * r);
}

inline double scaled_distance(std::span<const double> a, std::span<const double> b,
                              std::span<const double> lengthscales) {
  double r2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = (a[i] - b[i]) / lengthscales[i];
    r2 += t * t;
  }
  return std::sqrt(r2);
}

/// k(p, p') = sf2 (1 + sqrt5 r + 5/3 r^2) exp(-sqrt5 r), r^2 = sum (p_i - p'_i)^2 / l_i^2
inline double matern52_ard(std::span<const double> a, std::span<const double> b, const GPHyperparams& h) {
  if (a.size() != b.size() || a.size() != h.lengthscales.size())
    throw ConfigError("kernel input dimension does not match the lengthscales");
  return matern52_from_distance(scaled_distance(a, b, h.lengthscales), h.signal_variance);
}

inline double log_prior(const GPHyperparams& h, const GPPriors& priors) {
  double lp = priors.signal_variance.log_density(h.signal_variance) + priors.noise_variance.log_density(h.noise_variance);
  for (double l : h.lengthscales) lp += priors.inverse_sq_lengthscale.log_density(1.0 / (l * l));
  return lp;
}

namespace detail {

inline Eigen::MatrixXd gram(const std::vector<std::vector<double>>& x, const GPHyperparams& h) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = h.signal_variance;
    for (Eigen::Index j = 0; j < i; ++j) k(i, j) = k(j, i) = matern52_ard(x[i], x[j], h);
  }
  return k;
}

struct Factor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

// Cholesky of K + noise I; on failure adds jitter from 1e-8 sf2, doubling up to 1e-4 sf2.
inline Factor factorize(const Eigen::MatrixXd& kernel, double noise_variance, double signal_variance) {
  Factor f;
  Eigen::MatrixXd a = kernel;
  a.diagonal().array() += noise_variance;
  f.llt.compute(a);
  if (f.llt.info() == Eigen::Success) return f;
  for (double jitter = 1e-8 * signal_variance; jitter <= 1e-4 * signal_variance * (1 + 1e-12); jitter *= 2.0) {
    Eigen::MatrixXd b = a;
    b.diagonal().array() += jitter;
    f.llt.compute(b);
    if (f.llt.info() == Eigen::Success) {
      f.jitter = jitter;
      return f;
    }
  }
  throw NumericError("GP covariance is not positive definite after maximum jitter");
}

inline Eigen::VectorXd as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// Gaussian log marginal likelihood of (y - mu0) under K + sn2 I, plus the Gamma log-priors.
inline double log_marginal_posterior(const ObservationSet& obs, const GPHyperparams& h, const GPPriors& priors) {
  if (obs.size() == 0) throw ConfigError("log marginal posterior needs at least one observation");
  const auto f = detail::factorize(detail::gram(obs.inputs, h), h.noise_variance, h.signal_variance);
  const Eigen::VectorXd r = detail::as_vector(obs.targets).array() - h.constant_mean;
  const Eigen::VectorXd alpha = f.llt.solve(r);
  const double n = static_cast<double>(obs.size());
  return -0.5 * r.dot(alpha) - 0.5 * detail::log_det(f.llt) - 0.5 * n * std::log(2.0 * std::numbers::pi) +
         log_prior(h, priors);
}

struct GPPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// A fitted GP: hyperparameters plus the cached Cholesky factor and weights.
class GPModel {
 public:
  GPModel() = default;

  static GPModel fit(ObservationSet obs, GPHyperparams h) {
    if (obs.size() == 0) throw ConfigError("GP needs at least one observation");
    GPModel m;
    auto f = detail::factorize(detail::gram(obs.inputs, h), h.noise_variance, h.signal_variance);
    m.llt_ = std::move(f.llt);
    m.jitter_ = f.jitter;
    m.alpha_ = m.llt_.solve(Eigen::VectorXd(detail::as_vector(obs.targets).array() - h.constant_mean));
    m.obs_ = std::move(obs);
    m.hyper_ = std::move(h);
    return m;
  }

  /// Posterior of the latent function; variance clamped at 0.
  GPPrediction predict(std::span<const double> x) const {
    const auto n = static_cast<Eigen::Index>(obs_.size());
    Eigen::VectorXd ks(n);
    for (Eigen::Index i = 0; i < n; ++i) ks(i) = matern52_ard(x, obs_.inputs[static_cast<std::size_t>(i)], hyper_);
    GPPrediction p;
    p.mean = hyper_.constant_mean + ks.dot(alpha_);
    const Eigen::VectorXd v = llt_.matrixL().solve(ks);
    p.variance = std::max(0.0, hyper_.signal_variance - v.squaredNorm());
    return p;
  }

  const GPHyperparams& hyperparams() const { return hyper_; }
  const ObservationSet& observations() const { return obs_; }
  double jitter() const { return jitter_; }

 private:
  ObservationSet obs_;
  GPHyperparams hyper_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double jitter_ = 0.0;
};

struct FitOptions {
  std::size_t restarts = 8;
  std::uint64_t seed = 0;
  // Natural-log boxes.
  double log_lower = -4.0;
  double log_upper = 4.0;
  double log_noise_lower = std::log(1e-8);
  double log_noise_upper = 4.0;
  std::size_t max_iterations = 100;
  std::optional<GPHyperparams> warm_start;  // replaces the first random start
};

struct FitResult {
  GPHyperparams hyper;
  double objective = -std::numeric_limits<double>::infinity();
  std::vector<GPHyperparams> starts;
  std::vector<double> start_objectives;  // -inf where the start failed to factorize
};

namespace detail {

// Parameter vector: [log sf2, log l_1..l_D, log sn2].
class MapObjective {
 public:
  MapObjective(const ObservationSet& obs, const GPPriors& priors) : obs_(obs), priors_(priors) {
    y_ = as_vector(obs.targets);
  }

  std::size_t dim() const { return obs_.dim(); }

  GPHyperparams unpack(const Eigen::VectorXd& theta) const {
    GPHyperparams h;
    h.signal_variance = std::exp(theta(0));
    for (std::size_t i = 0; i < dim(); ++i) h.lengthscales.push_back(std::exp(theta(static_cast<Eigen::Index>(i + 1))));
    h.noise_variance = std::exp(theta(static_cast<Eigen::Index>(dim() + 1)));
    return h;
  }

  Eigen::VectorXd pack(const GPHyperparams& h) const {
    Eigen::VectorXd t(static_cast<Eigen::Index>(dim() + 2));
    t(0) = std::log(h.signal_variance);
    for (std::size_t i = 0; i < dim(); ++i) t(static_cast<Eigen::Index>(i + 1)) = std::log(h.lengthscales[i]);
    t(static_cast<Eigen::Index>(dim() + 1)) = std::log(h.noise_variance);
    return t;
  }

  /// Objective with mu0 profiled out; fills grad (d/dtheta) when non-null.
  /// Throws NumericError when the covariance cannot be factorized.
  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, double* mean_out = nullptr) const {
    GPHyperparams h = unpack(theta);
    const Eigen::MatrixXd k = gram(obs_.inputs, h);
    const auto f = factorize(k, h.noise_variance, h.signal_variance);
    const auto n = static_cast<Eigen::Index>(obs_.size());
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd kinv_one = f.llt.solve(ones);
    const double mu0 = kinv_one.dot(y_) / kinv_one.sum();
    h.constant_mean = mu0;
    if (mean_out) *mean_out = mu0;
    const Eigen::VectorXd r = y_.array() - mu0;
    const Eigen::VectorXd alpha = f.llt.solve(r);
    const double value = -0.5 * r.dot(alpha) - 0.5 * log_det(f.llt) -
                         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + log_prior(h, priors_);
    if (!std::isfinite(value)) throw NumericError("non-finite GP objective");
    if (!grad) return value;

    // d lml / d theta_j = 1/2 tr((alpha alpha^T - K^-1) dK/dtheta_j)
    Eigen::MatrixXd w = alpha * alpha.transpose() - f.llt.solve(Eigen::MatrixXd::Identity(n, n));
    const std::size_t dims = dim();
    grad->setZero(static_cast<Eigen::Index>(dims + 2));
    double g_signal = 0.0;
    std::vector<double> g_len(dims, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      g_signal += 0.5 * w(i, i) * k(i, i);
      const auto& xi = obs_.inputs[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < i; ++j) {
        const auto& xj = obs_.inputs[static_cast<std::size_t>(j)];
        const double wij = w(i, j);  // symmetric pair counted twice below
        g_signal += wij * k(i, j);
        const double rr = scaled_distance(xi, xj, h.lengthscales);
        const double common = h.signal_variance * (5.0 / 3.0) * (1.0 + kSqrt5 * rr) * std::exp(-kSqrt5 * rr);
        for (std::size_t d = 0; d < dims; ++d) {
          const double t = (xi[d] - xj[d]) / h.lengthscales[d];
          g_len[d] += wij * common * t * t;
        }
      }
    }
    (*grad)(0) = g_signal + priors_.signal_variance.dlog_dlogx(h.signal_variance);
    for (std::size_t d = 0; d < dims; ++d) {
      const double lam = 1.0 / (h.lengthscales[d] * h.lengthscales[d]);
      (*grad)(static_cast<Eigen::Index>(d + 1)) = g_len[d] - 2.0 * priors_.inverse_sq_lengthscale.dlog_dlogx(lam);
    }
    (*grad)(static_cast<Eigen::Index>(dims + 1)) =
        0.5 * h.noise_variance * w.trace() + priors_.noise_variance.dlog_dlogx(h.noise_variance);
    return value;
  }

 private:
  const ObservationSet& obs_;
  const GPPriors& priors_;
  Eigen::VectorXd y_;
};

inline double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// BFGS ascent in u-space where theta = lo + (hi - lo) sigmoid(u). Returns the
// best (theta, value); never returns a point worse than the start.
inline std::pair<Eigen::VectorXd, double> maximize_boxed(const MapObjective& objective, const Eigen::VectorXd& start,
                                                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                                         std::size_t max_iterations) {
  const Eigen::Index m = start.size();
  auto to_theta = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd t(m);
    for (Eigen::Index i = 0; i < m; ++i) t(i) = lo(i) + (hi(i) - lo(i)) * sigmoid(u(i));
    return t;
  };
  // Minimizes the negated objective in u.
  auto eval = [&](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    const Eigen::VectorXd theta = to_theta(u);
    Eigen::VectorXd gt;
    double v;
    try {
      v = objective(theta, &gt);
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
    g.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = sigmoid(u(i));
      g(i) = -gt(i) * (hi(i) - lo(i)) * s * (1.0 - s);
    }
    return -v;
  };

  Eigen::VectorXd u(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double frac = std::clamp((start(i) - lo(i)) / (hi(i) - lo(i)), 1e-3, 1.0 - 1e-3);
    u(i) = std::log(frac / (1.0 - frac));
  }
  Eigen::VectorXd g;
  double fx = eval(u, g);
  if (!std::isfinite(fx)) return {to_theta(u), -std::numeric_limits<double>::infinity()};

  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(m, m);
  bool scaled = false;
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < 1e-6) break;
    Eigen::VectorXd dir = -hinv * g;
    double slope = g.dot(dir);
    if (slope >= 0.0) {
      hinv.setIdentity();
      dir = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    Eigen::VectorXd u_new, g_new;
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      u_new = u + step * dir;
      f_new = eval(u_new, g_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const Eigen::VectorXd s = u_new - u;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    const double improvement = fx - f_new;
    u = u_new;
    g = g_new;
    fx = f_new;
    if (sy > 1e-12) {
      if (!scaled) {
        hinv *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(m, m) - rho * s * y.transpose();
      hinv = e * hinv * e.transpose() + rho * s * s.transpose();
    }
    if (improvement < 1e-10 * (1.0 + std::abs(fx))) break;
  }
  return {to_theta(u), -fx};
}

}  // namespace detail

/// Multi-start MAP fit. Deterministic given options.seed.
inline FitResult fit_map_detailed(const ObservationSet& obs, const GPPriors& priors, const FitOptions& options) {
  if (obs.size() < 2) throw ConfigError("MAP fit needs at least 2 observations");
  const std::size_t dims = obs.dim();
  const detail::MapObjective objective(obs, priors);
  const auto m = static_cast<Eigen::Index>(dims + 2);
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(m, options.log_lower);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(m, options.log_upper);
  lo(m - 1) = options.log_noise_lower;
  hi(m - 1) = options.log_noise_upper;

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  FitResult result;
  Eigen::VectorXd best_theta;
  double best_mean = 0.0;
  for (std::size_t k = 0; k < std::max<std::size_t>(1, options.restarts); ++k) {
    Eigen::VectorXd start(m);
    for (Eigen::Index i = 0; i < m; ++i) start(i) = lo(i) + (hi(i) - lo(i)) * unit(rng);
    if (k == 0 && options.warm_start) {
      start = objective.pack(*options.warm_start);
      for (Eigen::Index i = 0; i < m; ++i) start(i) = std::clamp(start(i), lo(i), hi(i));
    }
    GPHyperparams start_h = objective.unpack(start);
    double start_value = -std::numeric_limits<double>::infinity();
    try {
      start_value = objective(start, nullptr, &start_h.constant_mean);
    } catch (const NumericError&) {
    }
    result.starts.push_back(start_h);
    result.start_objectives.push_back(start_value);
    if (!std::isfinite(start_value)) continue;

    auto [theta, value] = detail::maximize_boxed(objective, start, lo, hi, options.max_iterations);
    if (value < start_value) {
      theta = start;
      value = start_value;
    }
    if (value > result.objective) {
      result.objective = value;
      best_theta = theta;
    }
  }
  if (!std::isfinite(result.objective)) throw NumericError("every MAP restart failed to factorize");
  objective(best_theta, nullptr, &best_mean);
  result.hyper = objective.unpack(best_theta);
  result.hyper.constant_mean = best_mean;
  return result;
}

inline GPHyperparams fit_map(const ObservationSet& obs, const GPPriors& priors, std::size_t restarts,
                             std::uint64_t seed) {
  FitOptions options;
  options.restarts = restarts;
  options.seed = seed;
  return fit_map_detailed(obs, priors, options).hyper;
}

}  // namespace tokmerge
