#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace abcd {

/// Largest node count for which the full DAG universe is enumerated.
inline constexpr int kMaxEnumerableNodes = 5;

/// Log of zero probability.
inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

/// Bitmask over node indices; bit p set means node p is a member.
using NodeMask = std::uint32_t;

/// Directed acyclic graph over `d` labelled nodes.
///
/// Stored as one parent mask per node. Construction validates acyclicity and
/// caches a topological order, so every live Dag is a valid DAG.
class Dag {
 public:
  Dag() = default;
  /// Graph with no edges.
  explicit Dag(int d);
  /// Throws std::invalid_argument on a cycle, self-loop or out-of-range parent.
  Dag(int d, std::vector<NodeMask> parent_masks);

  static Dag from_edges(int d, const std::vector<std::pair<int, int>>& edges);

  int num_nodes() const { return d_; }
  bool has_edge(int from, int to) const { return (parent_masks_[to] >> from) & 1U; }
  NodeMask parent_mask(int node) const { return parent_masks_[node]; }
  const std::vector<NodeMask>& parent_masks() const { return parent_masks_; }
  /// Ascending parent indices of `node`.
  std::vector<int> parents(int node) const;
  const std::vector<int>& topo_order() const { return topo_order_; }
  int num_edges() const;
  /// Edges (from, to) sorted lexicographically.
  std::vector<std::pair<int, int>> edges() const;

  std::string to_string() const;

  friend bool operator==(const Dag& a, const Dag& b) {
    return a.d_ == b.d_ && a.parent_masks_ == b.parent_masks_;
  }
  friend bool operator<(const Dag& a, const Dag& b);

 private:
  int d_ = 0;
  std::vector<NodeMask> parent_masks_;
  std::vector<int> topo_order_;
};

/// Returns every labelled DAG over d nodes, in lexicographic order of the
/// row-major flattened adjacency matrix (entry (p,i) set iff p->i).
std::vector<Dag> enumerate_dags(int d);

/// Structural Hamming distance: additions, deletions and reversals each
/// count one edit.
int shd(const Dag& a, const Dag& b);

struct GraphPrior {
  enum class Kind { kUniform, kSparsity, kReference, kExplicit };

  Kind kind = Kind::kUniform;
  std::optional<Dag> reference_graph;
  std::optional<int> max_edges;
  /// Unnormalized weights; must cover the whole universe for kExplicit.
  std::vector<std::pair<Dag, double>> explicit_table;

  static GraphPrior uniform() { return {}; }
  static GraphPrior sparsity() { return {Kind::kSparsity, std::nullopt, std::nullopt, {}}; }
  static GraphPrior reference(Dag ref) { return {Kind::kReference, std::move(ref), std::nullopt, {}}; }
};

std::string to_string(GraphPrior::Kind kind);
GraphPrior::Kind prior_kind_from_string(const std::string& name);

/// Normalized log prior for every graph of `universe`, aligned by index.
/// Capped-out graphs get kLogZero. Throws if every graph has zero weight.
std::vector<double> log_prior_vector(const GraphPrior& prior, const std::vector<Dag>& universe);

/// Normalized log prior of a single graph `g`, which must be in `universe`.
double log_prior(const Dag& g, const GraphPrior& prior, const std::vector<Dag>& universe);

}  // namespace abcd
