#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "abcd/dag.hpp"
#include "abcd/gp.hpp"

namespace abcd {

/// Either a purely observational draw or do(X_target = value).
struct InterventionSpec {
  std::optional<int> target;
  double value = 0.0;

  static InterventionSpec observational() { return {}; }
  static InterventionSpec perform(int target, double value) { return {target, value}; }

  bool is_observational() const { return !target.has_value(); }
  bool targets(int node) const { return target && *target == node; }
  void validate(int d) const;

  friend bool operator==(const InterventionSpec&, const InterventionSpec&) = default;
};

/// One observed d-vector together with the intervention that produced it.
struct Sample {
  std::vector<double> values;
  InterventionSpec intervention;

  /// Throws std::invalid_argument on wrong length, non-finite values or a
  /// clamped coordinate that differs from the intervention value.
  void validate(int d) const;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Normal-Inverse-Gamma prior for the Gaussian marginal of a root node.
struct RootModel {
  double mu0 = 0.0;
  double kappa0 = 1.0;
  double alpha0 = 2.0;
  double beta0 = 1.0;

  void validate() const;
  friend bool operator==(const RootModel&, const RootModel&) = default;
};

/// Location-scale Student-t.
struct StudentT {
  double dof = 1.0;
  double location = 0.0;
  double scale = 1.0;

  double log_density(double x) const;
};

/// Sufficient statistics of a root node's observations plus its conjugate
/// prior; evidence and predictive are closed form.
class RootPosterior {
 public:
  RootPosterior() = default;
  explicit RootPosterior(RootModel prior) : prior_(prior) {}

  std::int64_t count() const { return count_; }
  RootPosterior extended(double x) const;
  double log_evidence() const;
  /// Posterior predictive for the next observation.
  StudentT predictive() const;

 private:
  RootModel prior_;
  std::int64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;  // sum of squared deviations from mean_
};

/// A (node, parent set) pair; the unit the graph likelihood decomposes into.
struct ModelKey {
  int node = 0;
  NodeMask parents = 0;

  friend auto operator<=>(const ModelKey&, const ModelKey&) = default;
};

struct BeliefOptions {
  GraphPrior prior;
  RootModel root;
  FitOptions fit;
  /// Minimum number of observational samples for initialization.
  int n_min = 5;
  /// When false every GP uses GpHyperparams::defaults.
  bool fit_hyperparams = true;
  /// Restricts the hypothesis space; empty means all DAGs over d nodes.
  std::vector<Dag> universe;
};

inline constexpr int kDefaultMinObservations = 5;

/// Immutable snapshot of the joint posterior over graphs and mechanisms.
///
/// Evidence is cached per ModelKey, so graphs sharing a (node, parents) pair
/// share one value. `updated` returns a new snapshot; the receiver is never
/// modified, so any number of threads may read one snapshot concurrently.
class BeliefState {
 public:
  int num_nodes() const;
  const std::vector<Dag>& universe() const;
  std::size_t num_graphs() const { return log_posterior_.size(); }
  std::optional<std::size_t> graph_index(const Dag& g) const;

  const std::vector<double>& log_posterior() const { return log_posterior_; }
  std::vector<double> posterior() const;
  const std::vector<double>& log_prior() const;
  const std::vector<Sample>& data() const { return data_; }
  const std::vector<double>& centering() const;
  const RootModel& root_model(int node) const;

  const std::vector<ModelKey>& keys() const;
  std::optional<std::size_t> key_index(const ModelKey& key) const;
  /// Key indices of graph g, one per node in node order.
  std::span<const std::size_t> graph_keys(std::size_t g) const;
  /// Hyperparameters of a key with a nonempty parent set.
  const GpHyperparams& hyperparams(const ModelKey& key) const;
  /// Number of keys whose hyperparameters fell back to defaults.
  int fit_fallbacks() const;

  double cached_log_evidence(std::size_t key) const { return models_[key].log_evidence; }
  double cached_log_evidence(const ModelKey& key) const;

  /// Key's model input (centered parent values) and target for sample s.
  void model_input(const ModelKey& key, const Sample& s, std::vector<double>& x, double& y) const;

  /// New snapshot with s appended; caches extended in O(n^2) per key.
  BeliefState updated(const Sample& s) const;

  /// Normalized log posterior that `updated(s)` would have, computed without
  /// building the snapshot.
  std::vector<double> hypothetical_log_posterior(const Sample& s) const;

  /// Same structure and hyperparameters, every cache rebuilt by full
  /// factorization over data().
  BeliefState rebuilt_from_scratch() const;

  GpPrediction predict(const ModelKey& key, std::span<const double> centered_input) const;
  StudentT root_predictive(int node) const;

  friend BeliefState initialize(std::span<const Sample> observational, const BeliefOptions& options);

 private:
  struct Structure;
  struct NodeModel {
    std::variant<RootPosterior, GpPosterior> model;
    double log_evidence = 0.0;
  };

  BeliefState() = default;
  NodeModel fresh_model(std::size_t key) const;
  NodeModel extended_model(std::size_t key, const Sample& s) const;
  double extended_evidence(std::size_t key, const Sample& s) const;
  void renormalize(std::span<const double> key_evidence, std::vector<double>& out) const;

  std::shared_ptr<const Structure> structure_;
  std::vector<NodeModel> models_;
  std::vector<Sample> data_;
  std::vector<double> log_posterior_;
};

/// Fits centering offsets, per-key GP hyperparameters (once; fixed after)
/// and root posteriors from observational samples.
BeliefState initialize(std::span<const Sample> observational, const BeliefOptions& options);

/// Evidence of node `node` under `parents` computed from scratch over `data`.
/// Samples intervening on `node` are masked out; an empty parent set uses the
/// Normal-Inverse-Gamma marginal. Zero admitted samples gives 0.
double node_log_evidence(int node, NodeMask parents, std::span<const Sample> data, const BeliefState& belief);

/// Normalized per-graph log posterior under `prior` from the cached evidence.
std::vector<double> graph_log_posterior(const BeliefState& belief, const GraphPrior& prior);

inline BeliefState update(const BeliefState& belief, const Sample& s) { return belief.updated(s); }

/// Ancestral draw from graph `graph_index`'s interventional predictive.
Sample sample_interventional(std::size_t graph_index, const BeliefState& belief, const InterventionSpec& spec,
                             std::uint64_t seed);
Sample sample_interventional(const Dag& g, const BeliefState& belief, const InterventionSpec& spec,
                             std::uint64_t seed);

/// Entry (p, i) is the posterior probability of edge p -> i.
Eigen::MatrixXd edge_marginals(const BeliefState& belief);

}  // namespace abcd
