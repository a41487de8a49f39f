#include "abcd/dag.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "abcd/numeric.hpp"

namespace abcd {
namespace {

// Kahn's algorithm; empty result means the masks contain a cycle.
std::vector<int> topological_order(int d, const std::vector<NodeMask>& parent_masks) {
  std::vector<int> order;
  order.reserve(d);
  NodeMask placed = 0;
  while (static_cast<int>(order.size()) < d) {
    bool progressed = false;
    for (int i = 0; i < d; ++i) {
      if ((placed >> i) & 1U) continue;
      if ((parent_masks[i] & ~placed) == 0) {
        order.push_back(i);
        placed |= NodeMask{1} << i;
        progressed = true;
      }
    }
    if (!progressed) return {};
  }
  return order;
}

void check_node_count(int d) {
  if (d < 1 || d > 31) throw std::invalid_argument("node count must be in [1, 31], got " + std::to_string(d));
}

}  // namespace

Dag::Dag(int d) : d_(d), parent_masks_(static_cast<std::size_t>(std::max(d, 0)), 0) {
  check_node_count(d);
  topo_order_.resize(d);
  for (int i = 0; i < d; ++i) topo_order_[i] = i;
}

Dag::Dag(int d, std::vector<NodeMask> parent_masks) : d_(d), parent_masks_(std::move(parent_masks)) {
  check_node_count(d);
  if (static_cast<int>(parent_masks_.size()) != d) {
    throw std::invalid_argument("expected " + std::to_string(d) + " parent masks, got " +
                                std::to_string(parent_masks_.size()));
  }
  const NodeMask all = d == 32 ? ~NodeMask{0} : (NodeMask{1} << d) - 1;
  for (int i = 0; i < d; ++i) {
    if (parent_masks_[i] & ~all) throw std::invalid_argument("parent index out of range for node " + std::to_string(i));
    if ((parent_masks_[i] >> i) & 1U) throw std::invalid_argument("self-loop on node " + std::to_string(i));
  }
  topo_order_ = topological_order(d, parent_masks_);
  if (topo_order_.empty()) throw std::invalid_argument("graph contains a directed cycle");
}

Dag Dag::from_edges(int d, const std::vector<std::pair<int, int>>& edges) {
  check_node_count(d);
  std::vector<NodeMask> masks(d, 0);
  for (auto [from, to] : edges) {
    if (from < 0 || from >= d || to < 0 || to >= d) {
      throw std::invalid_argument("edge [" + std::to_string(from) + "," + std::to_string(to) +
                                  "] out of range for d=" + std::to_string(d));
    }
    masks[to] |= NodeMask{1} << from;
  }
  return Dag(d, std::move(masks));
}

std::vector<int> Dag::parents(int node) const {
  std::vector<int> out;
  for (int p = 0; p < d_; ++p) {
    if ((parent_masks_[node] >> p) & 1U) out.push_back(p);
  }
  return out;
}

int Dag::num_edges() const {
  int count = 0;
  for (NodeMask m : parent_masks_) count += std::popcount(m);
  return count;
}

std::vector<std::pair<int, int>> Dag::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int p = 0; p < d_; ++p) {
    for (int i = 0; i < d_; ++i) {
      if (has_edge(p, i)) out.emplace_back(p, i);
    }
  }
  return out;
}

std::string Dag::to_string() const {
  std::ostringstream os;
  os << "{";
  bool first = true;
  for (auto [p, i] : edges()) {
    if (!first) os << ", ";
    os << p << "->" << i;
    first = false;
  }
  os << "}";
  return os.str();
}

bool operator<(const Dag& a, const Dag& b) {
  if (a.d_ != b.d_) return a.d_ < b.d_;
  // Row-major adjacency order: row p holds the children of p.
  for (int p = 0; p < a.d_; ++p) {
    for (int i = 0; i < a.d_; ++i) {
      bool ea = a.has_edge(p, i);
      bool eb = b.has_edge(p, i);
      if (ea != eb) return eb;
    }
  }
  return false;
}

std::vector<Dag> enumerate_dags(int d) {
  if (d < 1 || d > kMaxEnumerableNodes) {
    throw std::invalid_argument("DAG enumeration supports 1 <= d <= " + std::to_string(kMaxEnumerableNodes) +
                                ", got d=" + std::to_string(d));
  }
  // Off-diagonal slots in row-major order; slot 0 is the most significant bit
  // so that counting upward walks the flattened adjacency lexicographically.
  std::vector<std::pair<int, int>> slots;
  for (int p = 0; p < d; ++p) {
    for (int i = 0; i < d; ++i) {
      if (p != i) slots.emplace_back(p, i);
    }
  }
  const int num_slots = static_cast<int>(slots.size());
  std::vector<Dag> out;
  std::vector<NodeMask> masks(d);
  for (std::uint64_t code = 0; code < (std::uint64_t{1} << num_slots); ++code) {
    std::fill(masks.begin(), masks.end(), 0);
    for (int s = 0; s < num_slots; ++s) {
      if ((code >> (num_slots - 1 - s)) & 1U) masks[slots[s].second] |= NodeMask{1} << slots[s].first;
    }
    if (topological_order(d, masks).empty()) continue;
    out.emplace_back(d, masks);
  }
  return out;
}

int shd(const Dag& a, const Dag& b) {
  if (a.num_nodes() != b.num_nodes()) {
    throw std::invalid_argument("shd: dimension mismatch (" + std::to_string(a.num_nodes()) + " vs " +
                                std::to_string(b.num_nodes()) + ")");
  }
  int distance = 0;
  const int d = a.num_nodes();
  for (int p = 0; p < d; ++p) {
    for (int q = p + 1; q < d; ++q) {
      bool same = a.has_edge(p, q) == b.has_edge(p, q) && a.has_edge(q, p) == b.has_edge(q, p);
      if (!same) ++distance;
    }
  }
  return distance;
}

std::string to_string(GraphPrior::Kind kind) {
  switch (kind) {
    case GraphPrior::Kind::kUniform: return "uniform";
    case GraphPrior::Kind::kSparsity: return "sparsity";
    case GraphPrior::Kind::kReference: return "reference";
    case GraphPrior::Kind::kExplicit: return "explicit";
  }
  return "unknown";
}

GraphPrior::Kind prior_kind_from_string(const std::string& name) {
  if (name == "uniform") return GraphPrior::Kind::kUniform;
  if (name == "sparsity") return GraphPrior::Kind::kSparsity;
  if (name == "reference") return GraphPrior::Kind::kReference;
  if (name == "explicit") return GraphPrior::Kind::kExplicit;
  throw std::invalid_argument("unknown prior kind '" + name + "' (expected uniform, sparsity, reference, explicit)");
}

std::vector<double> log_prior_vector(const GraphPrior& prior, const std::vector<Dag>& universe) {
  if (universe.empty()) throw std::invalid_argument("graph prior over an empty universe");
  if (prior.kind == GraphPrior::Kind::kReference) {
    if (!prior.reference_graph) throw std::invalid_argument("reference prior requires a reference_graph");
    if (prior.reference_graph->num_nodes() != universe.front().num_nodes()) {
      throw std::invalid_argument("reference graph node count does not match the universe");
    }
  }

  std::vector<double> log_weights(universe.size());
  for (std::size_t k = 0; k < universe.size(); ++k) {
    const Dag& g = universe[k];
    if (prior.max_edges && g.num_edges() > *prior.max_edges) {
      log_weights[k] = kLogZero;
      continue;
    }
    switch (prior.kind) {
      case GraphPrior::Kind::kUniform:
        log_weights[k] = 0.0;
        break;
      case GraphPrior::Kind::kSparsity:
        log_weights[k] = -std::log1p(static_cast<double>(g.num_edges()));
        break;
      case GraphPrior::Kind::kReference:
        log_weights[k] = -std::log1p(static_cast<double>(shd(g, *prior.reference_graph)));
        break;
      case GraphPrior::Kind::kExplicit: {
        auto it = std::find_if(prior.explicit_table.begin(), prior.explicit_table.end(),
                               [&](const auto& entry) { return entry.first == g; });
        if (it == prior.explicit_table.end()) {
          throw std::invalid_argument("explicit prior table has no entry for graph " + g.to_string());
        }
        if (!(it->second >= 0.0) || !std::isfinite(it->second)) {
          throw std::invalid_argument("explicit prior weight must be finite and nonnegative for graph " + g.to_string());
        }
        log_weights[k] = it->second > 0.0 ? std::log(it->second) : kLogZero;
        break;
      }
    }
  }

  const double normalizer = log_sum_exp(log_weights);
  if (!std::isfinite(normalizer)) throw std::invalid_argument("graph prior assigns zero mass to every graph");
  for (double& w : log_weights) {
    if (std::isfinite(w)) w -= normalizer;
  }
  return log_weights;
}

double log_prior(const Dag& g, const GraphPrior& prior, const std::vector<Dag>& universe) {
  auto it = std::find(universe.begin(), universe.end(), g);
  if (it == universe.end()) throw std::invalid_argument("graph " + g.to_string() + " is not in the universe");
  return log_prior_vector(prior, universe)[static_cast<std::size_t>(it - universe.begin())];
}

}  // namespace abcd
