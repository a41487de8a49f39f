#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "abcd/gp.hpp"
#include "oracles.hpp"

using abcd::GpDataset;
using abcd::GpHyperparams;

namespace {

GpHyperparams hyper(double lambda, std::vector<double> nu, double noise) {
  GpHyperparams h;
  h.signal_variance = lambda;
  h.inverse_lengthscales = std::move(nu);
  h.noise_variance = noise;
  return h;
}

GpDataset tanh_data(int n, double noise_sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = -2.5 + 5.0 * i / (n - 1);
    y(i) = 2.0 * std::tanh(x(i, 0)) + noise_sd * z(rng);
  }
  return {x, y};
}

}  // namespace

TEST(Kernel, SquaredExponential) {
  const auto h = hyper(2.0, {0.5, 3.0}, 0.1);
  const double a[] = {1.0, 0.0};
  const double b[] = {0.0, 0.5};
  EXPECT_NEAR(abcd::kernel_se(a, b, h), 2.0 * std::exp(-(0.5 * 1.0 + 3.0 * 0.25)), 1e-15);
  EXPECT_DOUBLE_EQ(abcd::kernel_se(a, a, h), 2.0);
  const double c[] = {1.0};
  EXPECT_THROW(abcd::kernel_se(a, c, h), std::invalid_argument);
}

TEST(Kernel, GramSymmetricAndMatchesFormula) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto data = oracle::random_dataset(rng, 9, 2);
    const auto h = oracle::random_hyperparams(rng, 2);
    const Eigen::MatrixXd k = abcd::gram_matrix(data.inputs, h);
    EXPECT_LE((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((k - oracle::direct_gram(data.inputs, h)).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::MatrixXd ks = k;
    ks.diagonal().array() += h.noise_variance;
    EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(ks).info(), Eigen::Success);
  }
}

TEST(Evidence, SinglePointAtZero) {
  Eigen::MatrixXd x(1, 1);
  x << 0.3;
  Eigen::VectorXd y(1);
  y << 0.0;
  const double lml = abcd::log_marginal_likelihood({x, y}, hyper(1.0, {1.0}, 1.0));
  EXPECT_NEAR(lml, -0.5 * std::log(2.0) - 0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
  EXPECT_NEAR(lml, -1.26551, 1e-5);
}

TEST(Evidence, MatchesDenseMvnOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    const int p = 1 + static_cast<int>(rng() % 3);
    const auto data = oracle::random_dataset(rng, n, p);
    const auto h = oracle::random_hyperparams(rng, p);
    EXPECT_NEAR(abcd::log_marginal_likelihood(data, h), oracle::gp_evidence(data, h), 1e-10);
  }
}

TEST(Evidence, DuplicatedInputsNeedNoJitter) {
  Eigen::MatrixXd x(3, 1);
  x << 0.5, 0.5, 0.5;
  Eigen::VectorXd y(3);
  y << 1.0, 1.0, 1.0;
  abcd::GpPosterior post({x, y}, hyper(1.0, {1.0}, 0.01));
  EXPECT_TRUE(std::isfinite(post.log_marginal_likelihood()));
  EXPECT_EQ(post.jitter(), 0.0);
}

TEST(Evidence, JitterLadderRescuesSingularNoiseFree) {
  Eigen::MatrixXd x(2, 1);
  x << 0.5, 0.5;
  Eigen::VectorXd y(2);
  y << 1.0, 1.0;
  abcd::GpPosterior post({x, y}, hyper(1.0, {1.0}, 1e-300));
  EXPECT_GT(post.jitter(), 0.0);
  EXPECT_TRUE(std::isfinite(post.log_marginal_likelihood()));
}

TEST(Evidence, FactorizationErrorReportsLadder) {
  // Huge signal variance over closely spaced inputs: rounding in the Gram
  // matrix dwarfs every jitter level.
  const int n = 40;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) x(i, 0) = 1e-3 * i;
  try {
    abcd::GpPosterior post({x, y}, hyper(1e12, {1.0}, 1e-300));
    FAIL() << "expected a factorization failure";
  } catch (const abcd::FactorizationError& e) {
    EXPECT_EQ(e.jitter_tried(), (std::vector<double>{0.0, 1e-10, 1e-8, 1e-6}));
  }
}

TEST(Predictive, MatchesPartitionedGaussian) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    const int p = 1 + static_cast<int>(rng() % 3);
    const auto data = oracle::random_dataset(rng, n, p);
    const auto h = oracle::random_hyperparams(rng, p);
    const auto star = oracle::random_dataset(rng, 1, p).inputs.row(0).transpose().eval();
    const auto mine = abcd::predictive(data, h, std::span<const double>(star.data(), static_cast<std::size_t>(p)));
    const auto ref = oracle::partitioned_conditional(data, h, star);
    EXPECT_NEAR(mine.mean, ref.mean, 1e-8);
    EXPECT_NEAR(mine.variance_f, ref.variance_f, 1e-8);
    EXPECT_GE(mine.variance_f, -1e-10);
    EXPECT_LE(mine.variance_f, h.signal_variance + 1e-10);
  }
}

TEST(Predictive, EmptyDataIsPrior) {
  const auto h = hyper(2.5, {1.0}, 0.1);
  const double x[] = {0.7};
  const auto p = abcd::predictive(GpDataset(Eigen::MatrixXd(0, 1), Eigen::VectorXd(0)), h, x);
  EXPECT_EQ(p.mean, 0.0);
  EXPECT_DOUBLE_EQ(p.variance_f, 2.5);
}

TEST(Predictive, InterpolatesAsNoiseVanishes) {
  const auto data = tanh_data(6, 0.0, 1);
  const double x[] = {data.inputs(2, 0)};
  const auto p = abcd::predictive(data, hyper(1.0, {0.5}, 1e-9), x);
  EXPECT_NEAR(p.mean, data.targets(2), 1e-5);
  EXPECT_NEAR(p.variance_f, 0.0, 1e-6);
}

TEST(Posterior, BorderExtensionMatchesRefactor) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int p = 1 + static_cast<int>(rng() % 2);
    const auto all = oracle::random_dataset(rng, 12, p);
    const auto h = oracle::random_hyperparams(rng, p);
    abcd::GpPosterior post(GpDataset(Eigen::MatrixXd(0, p), Eigen::VectorXd(0)), h);
    EXPECT_EQ(post.log_marginal_likelihood(), 0.0);
    for (int i = 0; i < 12; ++i) {
      const Eigen::VectorXd row = all.inputs.row(i).transpose();
      const std::span<const double> xs(row.data(), static_cast<std::size_t>(p));
      const double predicted = post.extended_log_marginal_likelihood(xs, all.targets(i));
      post = post.extended(xs, all.targets(i));
      EXPECT_DOUBLE_EQ(predicted, post.log_marginal_likelihood());
      const GpDataset prefix(all.inputs.topRows(i + 1), all.targets.head(i + 1));
      EXPECT_NEAR(post.log_marginal_likelihood(), abcd::log_marginal_likelihood(prefix, h), 1e-8);
    }
  }
}

TEST(Posterior, ExtensionLeavesReceiverUntouched) {
  const auto data = tanh_data(5, 0.1, 2);
  const auto h = hyper(1.0, {1.0}, 0.05);
  abcd::GpPosterior post(data, h);
  const double before = post.log_marginal_likelihood();
  const double x[] = {0.1};
  (void)post.extended(x, 0.3);
  EXPECT_EQ(post.log_marginal_likelihood(), before);
  EXPECT_EQ(post.size(), 5);
}

TEST(Hyperparams, ValidateRejectsBadValues) {
  EXPECT_THROW(hyper(0.0, {1.0}, 0.1).validate(1), std::invalid_argument);
  EXPECT_THROW(hyper(1.0, {-1.0}, 0.1).validate(1), std::invalid_argument);
  EXPECT_THROW(hyper(1.0, {1.0}, std::nan("")).validate(1), std::invalid_argument);
  EXPECT_THROW(hyper(1.0, {1.0}, 0.1).validate(2), std::invalid_argument);
  EXPECT_NO_THROW(GpHyperparams::defaults(3).validate(3));
}

TEST(Fit, RequiresThreePoints) {
  EXPECT_THROW(abcd::fit_hyperparams(tanh_data(2, 0.1, 1), {}), std::invalid_argument);
}

TEST(Fit, WithinHalfNatOfGridSearch) {
  const auto data = tanh_data(20, 0.1, 42);
  abcd::FitOptions options;
  options.seed = 9;
  const auto fitted = abcd::fit_hyperparams(data, options);
  const double mine = abcd::log_marginal_likelihood(data, fitted);

  const auto& b = options.bounds;
  auto log_grid = [](const abcd::Interval& iv, int k) {
    return std::exp(std::log(iv.lo) + (std::log(iv.hi) - std::log(iv.lo)) * k / 19.0);
  };
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < 20; ++a)
    for (int c = 0; c < 20; ++c)
      for (int e = 0; e < 20; ++e) {
        const auto h = hyper(log_grid(b.signal_variance, a), {log_grid(b.inverse_lengthscale, c)},
                             log_grid(b.noise_variance, e));
        try {
          best = std::max(best, abcd::log_marginal_likelihood(data, h));
        } catch (const abcd::FactorizationError&) {
        }
      }
  EXPECT_GE(mine, best - 0.5);
}

TEST(Fit, InsideBoundsAndNoWorseThanDefaultStart) {
  std::mt19937_64 rng(8);
  abcd::FitOptions options;
  options.bounds.noise_variance = {1e-3, 10.0};
  options.bounds.signal_variance = {0.1, 10.0};
  for (int trial = 0; trial < 10; ++trial) {
    const auto data = oracle::random_dataset(rng, 8, 2);
    options.seed = trial;
    const auto h = abcd::fit_hyperparams(data, options);
    EXPECT_TRUE(options.bounds.signal_variance.contains(h.signal_variance));
    EXPECT_TRUE(options.bounds.noise_variance.contains(h.noise_variance));
    for (double nu : h.inverse_lengthscales) EXPECT_TRUE(options.bounds.inverse_lengthscale.contains(nu));
    auto start = GpHyperparams::defaults(2);
    start.noise_variance = std::clamp(start.noise_variance, 1e-3, 10.0);
    EXPECT_GE(abcd::log_marginal_likelihood(data, h), abcd::log_marginal_likelihood(data, start) - 1e-12);
  }
}

TEST(Fit, DeterministicGivenSeed) {
  const auto data = tanh_data(10, 0.2, 4);
  abcd::FitOptions options;
  options.seed = 77;
  EXPECT_EQ(abcd::fit_hyperparams(data, options), abcd::fit_hyperparams(data, options));
}

// Central differences in log-parameter space vanish at an interior optimum.
TEST(Fit, StationaryOrOnBound) {
  const auto data = tanh_data(15, 0.2, 6);
  abcd::FitOptions options;
  options.seed = 1;
  const auto h = abcd::fit_hyperparams(data, options);
  const auto& b = options.bounds;
  auto on_bound = [](const abcd::Interval& iv, double v) {
    return std::abs(std::log(v / iv.lo)) < 1e-3 || std::abs(std::log(v / iv.hi)) < 1e-3;
  };
  if (on_bound(b.signal_variance, h.signal_variance) || on_bound(b.noise_variance, h.noise_variance) ||
      on_bound(b.inverse_lengthscale, h.inverse_lengthscales[0])) {
    SUCCEED();
    return;
  }
  const double step = 1e-4;
  double norm2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    auto shifted = [&](double s) {
      GpHyperparams g = h;
      double* slot = k == 0 ? &g.signal_variance : k == 1 ? &g.inverse_lengthscales[0] : &g.noise_variance;
      *slot *= std::exp(s);
      return abcd::log_marginal_likelihood(data, g);
    };
    const double grad = (shifted(step) - shifted(-step)) / (2.0 * step);
    norm2 += grad * grad;
  }
  EXPECT_LT(std::sqrt(norm2), 1e-3);
}

TEST(Fit, RecoversNoiseLevelWithEnoughData) {
  const auto data = tanh_data(60, 0.1, 12);
  abcd::FitOptions options;
  const auto h = abcd::fit_hyperparams(data, options);
  EXPECT_GT(h.noise_variance, 0.003);
  EXPECT_LT(h.noise_variance, 0.03);
}
