#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "abcd/belief.hpp"
#include "abcd/gp.hpp"

namespace abcd {

/// Points of the uniform grid the UCB acquisition is maximized over.
inline constexpr int kAcquisitionGridSize = 512;

struct DesignConfig {
  /// Monte-Carlo outcome draws per (graph, candidate) pair.
  int mc_samples = 64;
  /// UCB exploration coefficient.
  double beta = 2.0;
  /// Objective evaluations per target, including the three seed points.
  int bo_budget = 12;
  /// Closed interval of admissible intervention values, one per node.
  std::vector<Interval> domains;
  std::uint64_t seed = 0;
  /// Worker threads for the Monte-Carlo inner loop; results do not depend on it.
  int threads = 1;
  /// Wall-clock cap for one design step; unset means unbounded.
  std::optional<std::chrono::milliseconds> time_budget;

  void validate(int d) const;
};

/// [min, max] of each node's values widened by half the range on each side.
/// A node with zero observed range gets a unit-width interval around it.
std::vector<Interval> default_domains(std::span<const Sample> observational);

/// Negative Shannon entropy (nats) of a normalized log-probability vector,
/// with 0 log 0 = 0. Throws if the vector is not normalized within 1e-6.
double utility(std::span<const double> log_posterior);

struct EigEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo estimate of sum_G P(G) E_{outcome ~ G, do(X_j = x)} log P(G | data + outcome).
EigEstimate mc_expected_info_gain(const BeliefState& belief, int target, double x, const DesignConfig& cfg);

/// GP surrogate of a noisy 1-D objective over one target's domain.
///
/// Hyperparameters are recomputed from the evaluations on every query:
/// signal variance = variance of the values (1 if degenerate), inverse
/// squared lengthscale = (width / 8)^-2, noise = mean squared standard error
/// (1e-4 if none). The GP runs on values centered at their mean.
class BoSurrogate {
 public:
  explicit BoSurrogate(Interval domain) : domain_(domain) {}

  void add(double x, double value, double std_error);

  const Interval& domain() const { return domain_; }
  const std::vector<double>& points() const { return points_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return points_.size(); }

  GpHyperparams hyperparams() const;
  /// Posterior mean (in objective units) and latent variance at x.
  GpPrediction predict(double x) const;

 private:
  void refit();

  Interval domain_;
  std::vector<double> points_;
  std::vector<double> values_;
  std::vector<double> std_errors_;
  double offset_ = 0.0;
  std::optional<GpPosterior> posterior_;
};

/// mu(x) + beta * sigma(x) under the surrogate.
double ucb_acquisition(const BoSurrogate& surrogate, double x, double beta);

struct EigEvaluation {
  int target = 0;
  double x = 0.0;
  double eig = 0.0;
  double std_error = 0.0;
  /// Global evaluation index within the design step.
  int order = 0;
};

struct DesignResult {
  int target = 0;
  double x = 0.0;
  double eig = 0.0;
  std::vector<EigEvaluation> diagnostics;
  bool budget_exhausted = false;
};

/// Noisy objective over (target, value).
using DesignObjective = std::function<EigEstimate(int target, double x)>;

/// Per-target GP-UCB: seed at both endpoints and the midpoint, then
/// bo_budget - 3 acquisitions maximized over a 512-point grid. Returns the
/// best evaluated point; ties go to the lowest target, then the lowest x.
DesignResult optimize_objective(int num_targets, const DesignObjective& objective, const DesignConfig& cfg);

/// GP-UCB over the Monte-Carlo expected information gain.
DesignResult optimize_intervention(const BeliefState& belief, const DesignConfig& cfg);

/// Exhaustive evaluation on a uniform grid of `grid_points` per target.
DesignResult grid_search_intervention(const BeliefState& belief, const DesignConfig& cfg,
                                      int grid_points = kAcquisitionGridSize);

/// n uniformly spaced points from lo to hi inclusive (one point if lo == hi).
std::vector<double> linspace(const Interval& domain, int n);

}  // namespace abcd
