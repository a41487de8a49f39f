#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>
#include <random>
#include <thread>

#include "abcd/design.hpp"
#include "abcd/numeric.hpp"
#include "abcd/scm.hpp"
#include "oracles.hpp"

using namespace abcd;

namespace {

std::vector<Sample> observe(const GroundTruthScm& scm, int n, std::uint64_t seed) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(sample_truth(scm, InterventionSpec::observational(), derive_seed(seed, i)));
  return out;
}

DesignConfig config_for(const std::vector<Sample>& obs, int m, std::uint64_t seed) {
  DesignConfig cfg;
  cfg.domains = default_domains(obs);
  cfg.mc_samples = m;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(Utility, Examples) {
  EXPECT_NEAR(utility(std::vector<double>(3, -std::log(3.0))), -1.09861, 1e-5);
  EXPECT_EQ(utility(std::vector<double>{0.0, kLogZero, kLogZero}), 0.0);
  EXPECT_NEAR(utility(std::vector<double>{std::log(0.5), std::log(0.5)}), -0.69315, 1e-5);
  EXPECT_THROW(utility(std::vector<double>{0.0, 0.0}), std::invalid_argument);
}

TEST(Utility, NonPositiveAndZeroOnlyWhenDegenerate) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-5.0, 0.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> lp(5);
    for (double& v : lp) v = u(rng);
    const double z = log_sum_exp(lp);
    for (double& v : lp) v -= z;
    EXPECT_LT(utility(lp), 0.0);
  }
}

TEST(Domains, WidenedByHalfRange) {
  std::vector<Sample> obs = {{{0.0, 5.0}, {}}, {{2.0, 5.0}, {}}, {{1.0, 5.0}, {}}};
  const auto dom = default_domains(obs);
  EXPECT_EQ(dom[0], (Interval{-1.0, 3.0}));
  EXPECT_EQ(dom[1], (Interval{4.5, 5.5}));
}

TEST(Linspace, Endpoints) {
  const auto g = linspace({-1.0, 1.0}, 5);
  EXPECT_EQ(g, (std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0}));
  EXPECT_EQ(linspace({2.0, 2.0}, 512), (std::vector<double>{2.0}));
  EXPECT_EQ(linspace({0.0, 1.0}, 512).size(), 512u);
}

TEST(DesignConfig, Validation) {
  DesignConfig cfg;
  cfg.domains = {{0.0, 1.0}, {0.0, 1.0}};
  EXPECT_NO_THROW(cfg.validate(2));
  EXPECT_THROW(cfg.validate(3), std::invalid_argument);
  auto bad = cfg;
  bad.mc_samples = 0;
  EXPECT_THROW(bad.validate(2), std::invalid_argument);
  bad = cfg;
  bad.beta = -1.0;
  EXPECT_THROW(bad.validate(2), std::invalid_argument);
  bad = cfg;
  bad.bo_budget = 1;
  EXPECT_THROW(bad.validate(2), std::invalid_argument);
  bad = cfg;
  bad.domains[1] = {1.0, 0.0};
  EXPECT_THROW(bad.validate(2), std::invalid_argument);
}

TEST(Eig, SingleGraphUniverseIsZero) {
  const auto obs = observe(tanh_pair_scm(0.1), 6, 1);
  BeliefOptions options;
  options.universe = {Dag::from_edges(2, {{0, 1}})};
  const BeliefState b = initialize(obs, options);
  const auto cfg = config_for(obs, 16, 3);
  for (int j = 0; j < 2; ++j) {
    const EigEstimate e = mc_expected_info_gain(b, j, cfg.domains[j].lo, cfg);
    EXPECT_EQ(e.value, 0.0);
    EXPECT_EQ(e.std_error, 0.0);
  }
}

// {empty, Y->X} under do(X): Y is a root in both graphs and X is masked, so no
// outcome can move the posterior.
TEST(Eig, UninformativeExperimentEqualsCurrentUtility) {
  const auto obs = observe(tanh_pair_scm(0.1), 6, 1);
  BeliefOptions options;
  options.universe = {Dag(2), Dag::from_edges(2, {{1, 0}})};
  const BeliefState b = initialize(obs, options);
  const auto cfg = config_for(obs, 200, 5);
  const EigEstimate e = mc_expected_info_gain(b, 0, 0.3, cfg);
  EXPECT_NEAR(e.value, utility(b.log_posterior()), 1e-12);
}

TEST(Eig, DeterministicAndThreadInvariant) {
  const auto obs = observe(tanh_pair_scm(0.1), 6, 2);
  const BeliefState b = initialize(obs, {});
  auto cfg = config_for(obs, 32, 11);
  const EigEstimate a = mc_expected_info_gain(b, 0, 0.4, cfg);
  const EigEstimate again = mc_expected_info_gain(b, 0, 0.4, cfg);
  cfg.threads = 4;
  const EigEstimate threaded = mc_expected_info_gain(b, 0, 0.4, cfg);
  EXPECT_EQ(a.value, again.value);
  EXPECT_EQ(a.value, threaded.value);
  EXPECT_EQ(a.std_error, threaded.std_error);
  EXPECT_GT(a.std_error, 0.0);
}

TEST(Eig, RejectsOutOfDomain) {
  const auto obs = observe(tanh_pair_scm(0.1), 6, 2);
  const BeliefState b = initialize(obs, {});
  const auto cfg = config_for(obs, 4, 1);
  EXPECT_THROW(mc_expected_info_gain(b, 0, cfg.domains[0].hi + 1.0, cfg), std::invalid_argument);
  EXPECT_THROW(mc_expected_info_gain(b, 2, 0.0, cfg), std::invalid_argument);
}

TEST(Eig, InvariantUnderUniverseRelabeling) {
  const auto obs = observe(tanh_pair_scm(0.1), 6, 3);
  BeliefOptions forward, reversed;
  forward.universe = enumerate_dags(2);
  reversed.universe = {forward.universe[2], forward.universe[0], forward.universe[1]};
  const BeliefState a = initialize(obs, forward);
  const BeliefState b = initialize(obs, reversed);
  const auto cfg = config_for(obs, 3000, 7);
  const EigEstimate ea = mc_expected_info_gain(a, 1, 0.5, cfg);
  const EigEstimate eb = mc_expected_info_gain(b, 1, 0.5, cfg);
  EXPECT_NEAR(ea.value, eb.value, 3.0 * std::hypot(ea.std_error, eb.std_error));
}

TEST(Eig, InformationNeverHurtsOnAverage) {
  const auto scm = tanh_pair_scm(0.3);
  const auto obs = observe(scm, 6, 4);
  const BeliefState b = initialize(obs, {});
  const double current = utility(b.log_posterior());
  for (int j = 0; j < 2; ++j) {
    double sum = 0.0, var = 0.0;
    const int seeds = 50;
    for (int s = 0; s < seeds; ++s) {
      const auto cfg = config_for(obs, 16, static_cast<std::uint64_t>(s));
      const EigEstimate e = mc_expected_info_gain(b, j, 0.7, cfg);
      sum += e.value;
      var += e.std_error * e.std_error;
    }
    const double mean = sum / seeds;
    const double se = std::sqrt(var) / seeds;
    EXPECT_GE(mean - current, -3.0 * se);
  }
}

TEST(Eig, AgreesWithQuadratureOracle) {
  const auto obs = observe(tanh_pair_scm(0.1), 6, 21);
  const BeliefState b = initialize(obs, {});
  const auto cfg = config_for(obs, 1000, 13);
  for (auto [j, x] : {std::pair{0, 0.5}, std::pair{1, -0.8}}) {
    const EigEstimate e = mc_expected_info_gain(b, j, x, cfg);
    EXPECT_NEAR(e.value, oracle::eig_quadrature(b, j, x), 3.0 * e.std_error) << "j=" << j << " x=" << x;
  }
}

TEST(Surrogate, HyperparameterRules) {
  BoSurrogate s({0.0, 4.0});
  EXPECT_EQ(s.hyperparams().signal_variance, 1.0);
  EXPECT_EQ(s.hyperparams().inverse_lengthscales[0], 4.0);
  EXPECT_EQ(s.hyperparams().noise_variance, 1e-4);
  s.add(0.0, 1.0, 0.1);
  s.add(4.0, 3.0, 0.3);
  EXPECT_DOUBLE_EQ(s.hyperparams().signal_variance, 1.0);
  EXPECT_DOUBLE_EQ(s.hyperparams().noise_variance, 0.05);
  EXPECT_THROW(s.add(5.0, 1.0, 0.1), std::invalid_argument);
}

TEST(Ucb, Examples) {
  BoSurrogate s({-1.0, 1.0});
  EXPECT_DOUBLE_EQ(ucb_acquisition(s, 0.2, 2.0), 2.0);
  s.add(-1.0, 0.5, 0.0);
  s.add(0.0, 2.0, 0.0);
  s.add(1.0, -1.0, 0.0);
  EXPECT_NEAR(ucb_acquisition(s, 0.0, 0.0), 2.0, 1e-3);
  const double sd = std::sqrt(std::max(s.predict(0.0).variance_f, 0.0));
  EXPECT_LT(sd, 0.05);
  EXPECT_NEAR(ucb_acquisition(s, 0.0, 2.0), 2.0 + 2.0 * sd, 1e-3);
  EXPECT_DOUBLE_EQ(ucb_acquisition(s, 0.4, 0.0), s.predict(0.4).mean);
}

TEST(Optimize, SeedsThenAcquisitions) {
  DesignConfig cfg;
  cfg.domains = {{-2.0, 2.0}, {0.0, 1.0}};
  cfg.bo_budget = 7;
  int calls = 0;
  const auto result = optimize_objective(2, [&](int j, double x) {
    ++calls;
    return EigEstimate{j == 0 ? -(x - 0.5) * (x - 0.5) : -5.0 + x, 0.0};
  }, cfg);
  ASSERT_GE(result.diagnostics.size(), 6u);
  EXPECT_EQ(result.diagnostics[0].x, -2.0);
  EXPECT_EQ(result.diagnostics[1].x, 2.0);
  EXPECT_EQ(result.diagnostics[2].x, 0.0);
  EXPECT_EQ(result.diagnostics[3].x, 0.0);
  EXPECT_EQ(result.diagnostics[3].target, 1);
  EXPECT_EQ(result.diagnostics.size(), 14u);
  EXPECT_LE(calls, 14);
  for (std::size_t k = 0; k < result.diagnostics.size(); ++k) {
    const auto& e = result.diagnostics[k];
    EXPECT_EQ(e.order, static_cast<int>(k));
    EXPECT_TRUE(cfg.domains[e.target].contains(e.x));
  }
  EXPECT_EQ(result.target, 0);
  EXPECT_NEAR(result.x, 0.5, 0.1);
}

TEST(Optimize, SinglePointDomain) {
  DesignConfig cfg;
  cfg.domains = {{1.5, 1.5}, {-0.5, -0.5}};
  cfg.bo_budget = 3;
  const auto r = optimize_objective(2, [](int j, double) { return EigEstimate{j == 1 ? 1.0 : 0.0, 0.0}; }, cfg);
  EXPECT_EQ(r.target, 1);
  EXPECT_EQ(r.x, -0.5);
}

TEST(Optimize, TieBreakLowestTargetThenLowestX) {
  DesignConfig cfg;
  cfg.domains = {{-1.0, 1.0}, {-3.0, 3.0}};
  cfg.bo_budget = 5;
  const auto r = optimize_objective(2, [](int, double) { return EigEstimate{0.0, 0.0}; }, cfg);
  EXPECT_EQ(r.target, 0);
  EXPECT_EQ(r.x, -1.0);
  EXPECT_EQ(r.eig, 0.0);
}

TEST(Optimize, RepeatedPointReusesValue) {
  DesignConfig cfg;
  cfg.domains = {{0.0, 1.0}};
  cfg.bo_budget = 12;
  std::map<double, int> calls;
  (void)optimize_objective(1, [&](int, double x) {
    ++calls[x];
    return EigEstimate{x == 1.0 ? 1.0 : 0.0, 0.01};
  }, cfg);
  for (auto [x, n] : calls) EXPECT_EQ(n, 1) << x;
}

TEST(Optimize, FailingTargetSkipped) {
  DesignConfig cfg;
  cfg.domains = {{0.0, 1.0}, {0.0, 1.0}};
  const auto r = optimize_objective(2, [](int j, double x) {
    if (j == 0) throw std::runtime_error("boom");
    return EigEstimate{x, 0.0};
  }, cfg);
  EXPECT_EQ(r.target, 1);
  EXPECT_EQ(r.x, 1.0);
  EXPECT_THROW(optimize_objective(2, [](int, double) -> EigEstimate { throw std::runtime_error("boom"); }, cfg),
               std::runtime_error);
}

TEST(Optimize, TimeBudgetFlag) {
  DesignConfig cfg;
  cfg.domains = {{0.0, 1.0}, {0.0, 1.0}};
  cfg.bo_budget = 50;
  cfg.time_budget = std::chrono::milliseconds(30);
  const auto r = optimize_objective(2, [](int, double x) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    return EigEstimate{x, 0.0};
  }, cfg);
  EXPECT_TRUE(r.budget_exhausted);
  EXPECT_LT(r.diagnostics.size(), 100u);
}

TEST(Optimize, InterventionDeterministicGivenSeed) {
  const auto obs = observe(tanh_pair_scm(0.1), 6, 9);
  const BeliefState b = initialize(obs, {});
  auto cfg = config_for(obs, 8, 5);
  cfg.bo_budget = 5;
  const auto a = optimize_intervention(b, cfg);
  const auto again = optimize_intervention(b, cfg);
  EXPECT_EQ(a.target, again.target);
  EXPECT_EQ(a.x, again.x);
  EXPECT_EQ(a.eig, again.eig);
  EXPECT_EQ(a.diagnostics.size(), 10u);
}

TEST(Optimize, DegenerateBeliefGivesZeroAndLowestX) {
  const auto obs = observe(tanh_pair_scm(0.1), 6, 9);
  BeliefOptions options;
  options.universe = {Dag::from_edges(2, {{0, 1}})};
  const BeliefState b = initialize(obs, options);
  auto cfg = config_for(obs, 4, 5);
  cfg.bo_budget = 4;
  const auto r = optimize_intervention(b, cfg);
  EXPECT_EQ(r.eig, 0.0);
  EXPECT_EQ(r.target, 0);
  EXPECT_EQ(r.x, cfg.domains[0].lo);
}

TEST(GridSearch, EvaluatesEveryPoint) {
  const auto obs = observe(tanh_pair_scm(0.1), 6, 9);
  const BeliefState b = initialize(obs, {});
  auto cfg = config_for(obs, 4, 5);
  const auto r = grid_search_intervention(b, cfg, 9);
  EXPECT_EQ(r.diagnostics.size(), 18u);
  for (const auto& e : r.diagnostics) EXPECT_LE(e.eig, r.eig);
}
