#include "abcd/agent.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

#include "abcd/numeric.hpp"

namespace abcd {
namespace {

enum Stream : std::uint64_t { kObservational = 1, kFit = 2, kDesign = 3, kEnvironment = 4, kStrategy = 5 };

DesignResult random_choice(int target, const DesignConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, kStrategy));
  const Interval& dom = cfg.domains[target];
  std::uniform_real_distribution<double> value(dom.lo, dom.hi);
  DesignResult out;
  out.target = target;
  out.x = dom.width() > 0.0 ? value(rng) : dom.lo;
  out.eig = std::nan("");
  return out;
}

class BoStrategy final : public Strategy {
 public:
  std::string_view name() const override { return "bo"; }
  DesignResult choose(const BeliefState& belief, const DesignConfig& cfg, int) const override {
    return optimize_intervention(belief, cfg);
  }
};

class RandomStrategy final : public Strategy {
 public:
  std::string_view name() const override { return "random"; }
  DesignResult choose(const BeliefState& belief, const DesignConfig& cfg, int) const override {
    std::mt19937_64 rng(derive_seed(cfg.seed, kStrategy, 1));
    std::uniform_int_distribution<int> target(0, belief.num_nodes() - 1);
    return random_choice(target(rng), cfg);
  }
};

// Targets cycle 0, 1, ..., d-1; values uniform over the target's domain.
class RoundRobinStrategy final : public Strategy {
 public:
  std::string_view name() const override { return "round_robin"; }
  DesignResult choose(const BeliefState& belief, const DesignConfig& cfg, int step) const override {
    return random_choice((step - 1) % belief.num_nodes(), cfg);
  }
};

class GridEigStrategy final : public Strategy {
 public:
  std::string_view name() const override { return "grid_eig"; }
  DesignResult choose(const BeliefState& belief, const DesignConfig& cfg, int) const override {
    return grid_search_intervention(belief, cfg);
  }
};

}  // namespace

std::unique_ptr<Strategy> make_strategy(std::string_view name) {
  if (name == "bo") return std::make_unique<BoStrategy>();
  if (name == "random") return std::make_unique<RandomStrategy>();
  if (name == "round_robin") return std::make_unique<RoundRobinStrategy>();
  if (name == "grid_eig") return std::make_unique<GridEigStrategy>();
  throw std::invalid_argument("unknown strategy '" + std::string(name) +
                              "' (expected one of: bo, random, round_robin, grid_eig)");
}

void EpisodeConfig::validate() const {
  if (n_obs < belief.n_min) {
    throw std::invalid_argument("n_obs=" + std::to_string(n_obs) + " is below n_min=" + std::to_string(belief.n_min));
  }
  if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
  if (!(confidence_stop > 0.5 && confidence_stop <= 1.0)) {
    throw std::invalid_argument("confidence_stop must lie in (0.5, 1]");
  }
  if (samples_per_step < 1) throw std::invalid_argument("samples_per_step must be >= 1");
  make_strategy(strategy);
  if (scm) {
    scm->validate();
    if (!design.domains.empty()) design.validate(scm->num_nodes());
  }
}

namespace seeds {
std::uint64_t observational(std::uint64_t seed, int index) {
  return derive_seed(seed, kObservational, static_cast<std::uint64_t>(index));
}
std::uint64_t fit(std::uint64_t seed) { return derive_seed(seed, kFit); }
std::uint64_t design(std::uint64_t seed, int step) { return derive_seed(seed, kDesign, static_cast<std::uint64_t>(step)); }
std::uint64_t environment(std::uint64_t seed, int step, int repeat) {
  return derive_seed(seed, kEnvironment, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(repeat));
}
}  // namespace seeds

EpisodeMetrics metrics(std::span<const double> posterior, const Dag& truth, const std::vector<Dag>& universe) {
  if (posterior.size() != universe.size()) throw std::invalid_argument("posterior and universe sizes differ");
  auto it = std::find(universe.begin(), universe.end(), truth);
  if (it == universe.end()) throw std::invalid_argument("true graph " + truth.to_string() + " is not in the universe");
  EpisodeMetrics m;
  m.p_true = posterior[static_cast<std::size_t>(it - universe.begin())];
  for (std::size_t g = 0; g < universe.size(); ++g) {
    if (posterior[g] > 0.0) {
      m.entropy -= posterior[g] * std::log(posterior[g]);
      m.expected_shd += posterior[g] * shd(universe[g], truth);
    }
  }
  return m;
}

bool confident(std::span<const double> log_posterior, double threshold) {
  const double best = *std::max_element(log_posterior.begin(), log_posterior.end());
  return std::exp(best) >= threshold;
}

EpisodeResult run_episode(const EpisodeConfig& cfg) {
  if (!cfg.scm) throw std::invalid_argument("run_episode needs a ground-truth SCM (simulated mode)");
  cfg.validate();
  const GroundTruthScm& scm = *cfg.scm;
  const auto strategy = make_strategy(cfg.strategy);

  EpisodeResult result;
  for (int k = 0; k < cfg.n_obs; ++k) {
    result.observational.push_back(sample_truth(scm, InterventionSpec::observational(), seeds::observational(cfg.seed, k)));
  }

  BeliefOptions options = cfg.belief;
  options.fit.seed = seeds::fit(cfg.seed);
  std::optional<BeliefState> belief;
  try {
    belief = initialize(result.observational, options);
  } catch (const std::exception& e) {
    throw EpisodeError(-1, e.what());
  }
  if (belief->fit_fallbacks() > 0) {
    spdlog::warn("{} hyperparameter fits fell back to defaults", belief->fit_fallbacks());
  }

  DesignConfig design = cfg.design;
  if (design.domains.empty()) design.domains = default_domains(result.observational);
  result.domains = design.domains;

  const auto& universe = belief->universe();
  result.initial_posterior = belief->posterior();
  result.initial_entropy = -utility(belief->log_posterior());
  result.initial_metrics = metrics(result.initial_posterior, scm.graph, universe);

  for (int t = 1; t <= cfg.max_steps; ++t) {
    if (confident(belief->log_posterior(), cfg.confidence_stop)) break;
    StepRecord record;
    record.t = t;
    try {
      DesignConfig step_cfg = design;
      step_cfg.seed = seeds::design(cfg.seed, t);
      DesignResult choice = strategy->choose(*belief, step_cfg, t);
      record.chosen = InterventionSpec::perform(choice.target, choice.x);
      if (std::isfinite(choice.eig)) record.eig = choice.eig;
      record.diagnostics = std::move(choice.diagnostics);
      record.budget_exhausted = choice.budget_exhausted;
      for (int r = 0; r < cfg.samples_per_step; ++r) {
        Sample s = sample_truth(scm, record.chosen, seeds::environment(cfg.seed, t, r));
        belief = belief->updated(s);
        record.outcomes.push_back(std::move(s));
      }
    } catch (const EpisodeError&) {
      throw;
    } catch (const std::exception& e) {
      throw EpisodeError(t, e.what());
    }
    record.posterior = belief->posterior();
    record.entropy = -utility(belief->log_posterior());
    const EpisodeMetrics m = metrics(record.posterior, scm.graph, universe);
    record.p_true = m.p_true;
    record.expected_shd = m.expected_shd;
    spdlog::debug("step {}: do(X{}={:.4f}) entropy {:.4f} p_true {:.4f}", t, *record.chosen.target,
                  record.chosen.value, record.entropy, m.p_true);
    result.steps.push_back(std::move(record));
  }
  return result;
}

}  // namespace abcd
