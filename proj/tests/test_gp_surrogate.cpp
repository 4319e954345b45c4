#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "tokmerge/gp_surrogate.hpp"

using namespace tokmerge;

namespace {

using Mat = std::vector<std::vector<long double>>;

// Gauss-Jordan inverse with partial pivoting; also returns log|det|.
Mat invert(Mat a, long double* log_det = nullptr) {
  const std::size_t n = a.size();
  Mat inv(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0L;
  long double ld = 0.0L;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(inv[c], inv[piv]);
    const long double p = a[c][c];
    ld += std::log(std::fabs(p));
    for (std::size_t k = 0; k < n; ++k) a[c][k] /= p, inv[c][k] /= p;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const long double f = a[r][c];
      for (std::size_t k = 0; k < n; ++k) a[r][k] -= f * a[c][k], inv[r][k] -= f * inv[c][k];
    }
  }
  if (log_det) *log_det = ld;
  return inv;
}

long double kernel_oracle(const std::vector<double>& a, const std::vector<double>& b, const GPHyperparams& h) {
  long double r2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double t = (a[i] - b[i]) / h.lengthscales[i];
    r2 += t * t;
  }
  const long double r = std::sqrt(r2), s5 = std::sqrt(5.0L);
  return h.signal_variance * (1 + s5 * r + 5.0L / 3.0L * r2) * std::exp(-s5 * r);
}

struct Problem {
  ObservationSet obs;
  GPHyperparams hyper;
};

Problem random_problem(std::mt19937_64& rng, std::size_t n = 10, std::size_t d = 3) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Problem p;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(d);
    for (auto& v : x) v = u(rng);
    p.obs.inputs.push_back(x);
    p.obs.targets.push_back(std::sin(3 * x[0]) + x[d - 1] * x[d - 1] + 0.1 * u(rng));
  }
  p.hyper.signal_variance = 0.5 + 2 * u(rng);
  for (std::size_t i = 0; i < d; ++i) p.hyper.lengthscales.push_back(0.2 + u(rng));
  p.hyper.noise_variance = 1e-3 + 0.1 * u(rng);
  p.hyper.constant_mean = u(rng) - 0.5;
  return p;
}

Mat cov_oracle(const Problem& p) {
  const std::size_t n = p.obs.size();
  Mat a(n, std::vector<long double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a[i][j] = kernel_oracle(p.obs.inputs[i], p.obs.inputs[j], p.hyper) + (i == j ? p.hyper.noise_variance : 0.0);
  return a;
}

GPPrediction predict_oracle(const Problem& p, const std::vector<double>& x) {
  const Mat inv = invert(cov_oracle(p));
  const std::size_t n = p.obs.size();
  std::vector<long double> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = kernel_oracle(x, p.obs.inputs[i], p.hyper);
  long double mean = p.hyper.constant_mean, quad = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      mean += k[i] * inv[i][j] * (p.obs.targets[j] - p.hyper.constant_mean);
      quad += k[i] * inv[i][j] * k[j];
    }
  return {double(mean), double(p.hyper.signal_variance - quad)};
}

// (data-fit, complexity) terms of the log marginal likelihood.
std::pair<long double, long double> lml_terms(const Problem& p) {
  long double ld = 0;
  const Mat inv = invert(cov_oracle(p), &ld);
  long double fit = 0;
  for (std::size_t i = 0; i < p.obs.size(); ++i)
    for (std::size_t j = 0; j < p.obs.size(); ++j)
      fit += (p.obs.targets[i] - p.hyper.constant_mean) * inv[i][j] * (p.obs.targets[j] - p.hyper.constant_mean);
  return {-0.5L * fit, -0.5L * ld};
}

}  // namespace

TEST(Matern52, KnownValues) {
  GPHyperparams h;
  h.signal_variance = 1.0;
  h.lengthscales = {1.0};
  const std::vector<double> a{0.0}, b{1.0};
  const double s5 = std::sqrt(5.0);
  EXPECT_NEAR(matern52_ard(a, b, h), (1 + s5 + 5.0 / 3.0) * std::exp(-s5), 1e-10);
  EXPECT_NEAR(matern52_ard(a, b, h), 0.52399, 1e-5);
  h.signal_variance = 2.5;
  EXPECT_EQ(matern52_ard(a, a, h), 2.5);
}

TEST(Matern52, SymmetryAndArdIrrelevance) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GPHyperparams h;
  h.lengthscales = {0.3, 1e12};
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> a{u(rng), u(rng)}, b{u(rng), u(rng)}, c{a[0], u(rng)};
    EXPECT_EQ(matern52_ard(a, b, h), matern52_ard(b, a, h));
    EXPECT_NEAR(matern52_ard(a, b, h), matern52_ard(c, b, h), 1e-10);
  }
}

TEST(Matern52, GramIsPositiveSemidefinite) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_problem(rng, 40, 4);
    const Eigen::MatrixXd k = detail::gram(p.obs.inputs, p.hyper);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k).eigenvalues().minCoeff();
    EXPECT_GE(min_eig, -1e-8 * p.hyper.signal_variance);
  }
}

TEST(LogMarginal, SingleObservationClosedForm) {
  GPHyperparams h;
  h.signal_variance = 1.7;
  h.noise_variance = 0.2;
  h.lengthscales = {0.5, 0.5};
  h.constant_mean = 0.8;
  ObservationSet obs{{{0.1, 0.9}}, {0.8}};
  const GPPriors priors;
  const double expected = -0.5 * std::log(1.7 + 0.2) - 0.5 * std::log(2 * std::numbers::pi) + log_prior(h, priors);
  EXPECT_NEAR(log_marginal_posterior(obs, h, priors), expected, 1e-12);
}

TEST(LogMarginal, NoiseTradeOffOnPureNoise) {
  Problem p;
  p.obs = {{{0.2}, {0.7}}, {0.9, -1.1}};
  p.hyper.signal_variance = 1.0;
  p.hyper.lengthscales = {0.3};
  p.hyper.noise_variance = 0.05;
  const auto before = lml_terms(p);
  Problem q = p;
  q.hyper.noise_variance *= 2;
  const auto after = lml_terms(q);
  EXPECT_GT(after.first, before.first);   // data fit improves
  EXPECT_LT(after.second, before.second);  // complexity penalty grows
  for (const auto* prob : {&p, &q}) {
    const auto t = lml_terms(*prob);
    const double ours = log_marginal_posterior(prob->obs, prob->hyper, GPPriors{}) - log_prior(prob->hyper, GPPriors{});
    EXPECT_NEAR(ours, double(t.first + t.second) - std::log(2 * std::numbers::pi), 1e-10);
  }
}

TEST(LogMarginal, MatchesDenseOracle) {
  std::mt19937_64 rng(3);
  const GPPriors priors;
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_problem(rng);
    const auto t = lml_terms(p);
    const double oracle = double(t.first + t.second) - 5.0 * std::log(2 * std::numbers::pi) + log_prior(p.hyper, priors);
    EXPECT_NEAR(log_marginal_posterior(p.obs, p.hyper, priors), oracle, 1e-8);
  }
}

TEST(GPModel, PredictionMatchesDenseOracle) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_problem(rng);
    const auto model = GPModel::fit(p.obs, p.hyper);
    for (int k = 0; k < 5; ++k) {
      const std::vector<double> x{u(rng), u(rng), u(rng)};
      const auto ours = model.predict(x);
      const auto oracle = predict_oracle(p, x);
      EXPECT_NEAR(ours.mean, oracle.mean, 1e-8);
      EXPECT_NEAR(ours.variance, oracle.variance, 1e-8);
      EXPECT_LE(ours.variance, p.hyper.signal_variance + p.hyper.noise_variance + 1e-8);
    }
  }
}

TEST(GPModel, PriorReversionFarFromData) {
  std::mt19937_64 rng(5);
  const auto p = random_problem(rng);
  const auto model = GPModel::fit(p.obs, p.hyper);
  const auto far = model.predict(std::vector<double>{1e3, -1e3, 1e3});
  EXPECT_NEAR(far.mean, p.hyper.constant_mean, 1e-10);
  EXPECT_NEAR(far.variance, p.hyper.signal_variance, 1e-10);
}

TEST(GPModel, InterpolatesWithVanishingNoise) {
  std::mt19937_64 rng(6);
  auto p = random_problem(rng);
  p.hyper.noise_variance = 1e-10;
  const auto model = GPModel::fit(p.obs, p.hyper);
  for (std::size_t i = 0; i < p.obs.size(); ++i) {
    const auto pr = model.predict(p.obs.inputs[i]);
    EXPECT_NEAR(pr.mean, p.obs.targets[i], 1e-6);
    EXPECT_LT(pr.variance, 1e-6);
  }
}

TEST(GPModel, MoreDataNeverRaisesVariance) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    auto p = random_problem(rng, 11);
    Problem smaller = p;
    smaller.obs.inputs.pop_back();
    smaller.obs.targets.pop_back();
    const auto big = GPModel::fit(p.obs, p.hyper);
    const auto small = GPModel::fit(smaller.obs, smaller.hyper);
    for (int k = 0; k < 10; ++k) {
      const std::vector<double> x{u(rng), u(rng), u(rng)};
      EXPECT_LE(big.predict(x).variance, small.predict(x).variance + 1e-10);
    }
  }
}

TEST(GPModel, JitterLadderRescuesDuplicateInputs) {
  GPHyperparams h;
  h.lengthscales = {0.5};
  h.noise_variance = 0.0;
  ObservationSet obs{{{0.3}, {0.3}, {0.6}}, {1.0, 1.0, 0.0}};
  const auto model = GPModel::fit(obs, h);
  EXPECT_GT(model.jitter(), 0.0);
  EXPECT_LE(model.jitter(), 1e-4 * h.signal_variance);
  EXPECT_NEAR(model.predict(std::vector<double>{0.3}).mean, 1.0, 1e-3);
}

TEST(FitMap, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const GPPriors priors;
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_problem(rng, 12, 3);
    const detail::MapObjective obj(p.obs, priors);
    const Eigen::VectorXd theta = obj.pack(p.hyper);
    Eigen::VectorXd g;
    obj(theta, &g);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd a = theta, b = theta;
      a(i) += 1e-5;
      b(i) -= 1e-5;
      const double fd = (obj(a, nullptr) - obj(b, nullptr)) / 2e-5;
      EXPECT_NEAR(g(i), fd, 1e-4 * (1 + std::abs(fd)));
    }
  }
}

TEST(FitMap, NoiseFreeDataIsInterpolated) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ObservationSet obs;
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> x{u(rng), u(rng)};
    obs.inputs.push_back(x);
    obs.targets.push_back(std::sin(3 * x[0]) * std::cos(2 * x[1]));
  }
  FitOptions opt;
  opt.seed = 1;
  const auto res = fit_map_detailed(obs, GPPriors{}, opt);
  EXPECT_LT(res.hyper.noise_variance, 1e-4);
  const auto model = GPModel::fit(obs, res.hyper);
  for (std::size_t i = 0; i < obs.size(); ++i) EXPECT_NEAR(model.predict(obs.inputs[i]).mean, obs.targets[i], 1e-4);
}

TEST(FitMap, ConstantTargets) {
  ObservationSet obs;
  for (int i = 0; i < 8; ++i) {
    obs.inputs.push_back({0.125 * i, 1.0 - 0.1 * i});
    obs.targets.push_back(0.37);
  }
  const auto res = fit_map_detailed(obs, GPPriors{}, {});
  EXPECT_NEAR(res.hyper.constant_mean, 0.37, 1e-6);
  EXPECT_LE(res.hyper.signal_variance, 2.0 + 1e-6);  // at or below the prior mode
}

TEST(FitMap, NeverWorseThanAnyStart) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_problem(rng, 15, 2);
    FitOptions opt;
    opt.seed = trial;
    const auto res = fit_map_detailed(p.obs, GPPriors{}, opt);
    ASSERT_EQ(res.start_objectives.size(), opt.restarts);
    for (double s : res.start_objectives) EXPECT_GE(res.objective, s);
    GPHyperparams h = res.hyper;
    EXPECT_NEAR(log_marginal_posterior(p.obs, h, GPPriors{}), res.objective, 1e-8);
  }
}

TEST(FitMap, DeterministicGivenSeed) {
  std::mt19937_64 rng(11);
  const auto p = random_problem(rng, 15, 2);
  FitOptions opt;
  opt.seed = 4;
  EXPECT_EQ(fit_map_detailed(p.obs, GPPriors{}, opt).hyper, fit_map_detailed(p.obs, GPPriors{}, opt).hyper);
}

TEST(FitMap, WarmStartReplacesFirstStart) {
  std::mt19937_64 rng(12);
  const auto p = random_problem(rng, 15, 2);
  FitOptions opt;
  opt.warm_start = p.hyper;
  const auto res = fit_map_detailed(p.obs, GPPriors{}, opt);
  EXPECT_EQ(res.starts.front().lengthscales, p.hyper.lengthscales);
  EXPECT_EQ(res.starts.front().signal_variance, p.hyper.signal_variance);
}

TEST(GammaPrior, LogDensity) {
  const GammaPrior g{2.0, 0.5};
  // Gamma(2, rate 0.5) at x = 3: 0.25 * 3 * exp(-1.5)
  EXPECT_NEAR(g.log_density(3.0), std::log(0.25 * 3.0 * std::exp(-1.5)), 1e-12);
}
