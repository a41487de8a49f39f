#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "abcd/belief.hpp"
#include "abcd/design.hpp"
#include "abcd/scm.hpp"

namespace abcd {

/// Chooses the next intervention from a belief snapshot.
class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual std::string_view name() const = 0;
  /// `cfg.seed` already carries the step's seed; `step` is the 1-based index.
  virtual DesignResult choose(const BeliefState& belief, const DesignConfig& cfg, int step) const = 0;
};

/// One of: bo, random, round_robin, grid_eig. Throws listing the options.
std::unique_ptr<Strategy> make_strategy(std::string_view name);

struct EpisodeConfig {
  /// Ground truth for simulated runs; unset in external-oracle mode.
  std::optional<GroundTruthScm> scm;
  int n_obs = kDefaultMinObservations;
  int max_steps = 10;
  double confidence_stop = 0.99;
  std::string strategy = "bo";
  int samples_per_step = 1;
  /// Domains left empty are derived from the observational samples.
  DesignConfig design;
  BeliefOptions belief;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpisodeMetrics {
  double p_true = 0.0;
  double entropy = 0.0;
  double expected_shd = 0.0;
};

/// Posterior mass on `truth`, entropy in nats and posterior-expected SHD.
EpisodeMetrics metrics(std::span<const double> posterior, const Dag& truth, const std::vector<Dag>& universe);

struct StepRecord {
  int t = 0;
  InterventionSpec chosen;
  /// Objective value of the chosen point; absent for strategies that do not
  /// evaluate it.
  std::optional<double> eig;
  std::vector<Sample> outcomes;
  std::vector<double> posterior;
  double entropy = 0.0;
  std::optional<double> p_true;
  std::optional<double> expected_shd;
  std::vector<EigEvaluation> diagnostics;
  bool budget_exhausted = false;
};

struct EpisodeResult {
  std::vector<Sample> observational;
  std::vector<double> initial_posterior;
  double initial_entropy = 0.0;
  std::optional<EpisodeMetrics> initial_metrics;
  std::vector<StepRecord> steps;
  std::vector<Interval> domains;
};

/// Failure inside an episode; step is -1 for initialization.
class EpisodeError : public std::runtime_error {
 public:
  EpisodeError(int step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Per-stream seed derivation shared by the CLI, the service and tests.
namespace seeds {
std::uint64_t observational(std::uint64_t seed, int index);
std::uint64_t fit(std::uint64_t seed);
std::uint64_t design(std::uint64_t seed, int step);
std::uint64_t environment(std::uint64_t seed, int step, int repeat);
}  // namespace seeds

/// Maximum posterior probability reached the stopping threshold.
bool confident(std::span<const double> log_posterior, double threshold);

/// Closed loop: observe n_obs samples, initialize, then design, intervene,
/// observe and update until max_steps or confidence_stop.
EpisodeResult run_episode(const EpisodeConfig& cfg);

}  // namespace abcd
