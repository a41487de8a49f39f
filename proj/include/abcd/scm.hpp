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
#include "abcd/dag.hpp"

namespace abcd {

class ExpressionError : public std::invalid_argument {
 public:
  ExpressionError(const std::string& what, std::size_t position)
      : std::invalid_argument(what + " at offset " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Closed-form mechanism over parent placeholders p0..pk.
///
/// Grammar: numeric constants, p<k>, binary + - *, unary -, parentheses and
/// the functions tanh, sin and pow2 (squaring). Placeholder p<k> refers to the
/// k-th parent in ascending node order.
class Expression {
 public:
  static Expression parse(std::string_view text);

  double evaluate(std::span<const double> parents) const;
  /// Highest placeholder index referenced, or -1 for a constant expression.
  int max_parent_index() const { return max_index_; }
  const std::string& text() const { return text_; }

  struct Node;

 private:
  std::shared_ptr<const Node> root_;
  std::string text_;
  int max_index_ = -1;
};

/// Structural equation of one node: for roots, mean + root_sd * N(0,1);
/// otherwise mechanism(parents) + noise_sd * N(0,1).
struct NodeEquation {
  std::optional<Expression> mechanism;
  double noise_sd = 0.0;
  double root_mean = 0.0;
  double root_sd = 1.0;
};

struct GroundTruthScm {
  Dag graph;
  std::vector<NodeEquation> equations;

  int num_nodes() const { return graph.num_nodes(); }
  /// Throws std::invalid_argument naming the offending node.
  void validate() const;
};

/// Ancestral draw in topological order with the intervention target clamped.
Sample sample_truth(const GroundTruthScm& scm, const InterventionSpec& spec, std::uint64_t seed);

/// X ~ N(0, 1), Y := 2 tanh(X) + N(0, noise_sd^2).
GroundTruthScm tanh_pair_scm(double noise_sd);

}  // namespace abcd
