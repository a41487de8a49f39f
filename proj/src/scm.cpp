#include "abcd/scm.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <random>

namespace abcd {

struct Expression::Node {
  enum class Op { kConstant, kParent, kAdd, kSub, kMul, kNeg, kTanh, kSin, kPow2 };
  Op op = Op::kConstant;
  double constant = 0.0;
  int parent = 0;
  std::shared_ptr<const Node> lhs;
  std::shared_ptr<const Node> rhs;

  double eval(std::span<const double> p) const {
    switch (op) {
      case Op::kConstant: return constant;
      case Op::kParent: return p[static_cast<std::size_t>(parent)];
      case Op::kAdd: return lhs->eval(p) + rhs->eval(p);
      case Op::kSub: return lhs->eval(p) - rhs->eval(p);
      case Op::kMul: return lhs->eval(p) * rhs->eval(p);
      case Op::kNeg: return -lhs->eval(p);
      case Op::kTanh: return std::tanh(lhs->eval(p));
      case Op::kSin: return std::sin(lhs->eval(p));
      case Op::kPow2: {
        const double v = lhs->eval(p);
        return v * v;
      }
    }
    return 0.0;
  }
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;
using Op = Expression::Node::Op;

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  NodePtr parse() {
    NodePtr root = sum();
    skip_space();
    if (pos_ != text_.size()) throw ExpressionError("unexpected '" + std::string(1, text_[pos_]) + "'", pos_);
    return root;
  }
  int max_index() const { return max_index_; }

 private:
  static NodePtr make(Op op, NodePtr lhs = nullptr, NodePtr rhs = nullptr) {
    auto n = std::make_shared<Expression::Node>();
    n->op = op;
    n->lhs = std::move(lhs);
    n->rhs = std::move(rhs);
    return n;
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) throw ExpressionError(std::string("expected '") + c + "'", pos_);
  }

  NodePtr sum() {
    NodePtr lhs = product();
    while (true) {
      if (accept('+')) {
        lhs = make(Op::kAdd, lhs, product());
      } else if (accept('-')) {
        lhs = make(Op::kSub, lhs, product());
      } else {
        return lhs;
      }
    }
  }

  NodePtr product() {
    NodePtr lhs = unary();
    while (accept('*')) lhs = make(Op::kMul, lhs, unary());
    return lhs;
  }

  NodePtr unary() {
    if (accept('-')) return make(Op::kNeg, unary());
    if (accept('+')) return unary();
    return primary();
  }

  NodePtr primary() {
    skip_space();
    if (pos_ >= text_.size()) throw ExpressionError("unexpected end of expression", pos_);
    if (accept('(')) {
      NodePtr inner = sum();
      expect(')');
      return inner;
    }
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
    throw ExpressionError("unexpected '" + std::string(1, c) + "'", pos_);
  }

  NodePtr number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.' ||
                                   text_[pos_] == 'e' || text_[pos_] == 'E' ||
                                   ((text_[pos_] == '-' || text_[pos_] == '+') && pos_ > start &&
                                    (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E')))) {
      ++pos_;
    }
    double value = 0.0;
    auto [end, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (ec != std::errc() || end != text_.data() + pos_) throw ExpressionError("malformed number", start);
    auto n = std::make_shared<Expression::Node>();
    n->constant = value;
    return n;
  }

  NodePtr identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    const std::string_view name = text_.substr(start, pos_ - start);
    if (name.size() >= 2 && name[0] == 'p' &&
        name.substr(1).find_first_not_of("0123456789") == std::string_view::npos) {
      int index = 0;
      std::from_chars(name.data() + 1, name.data() + name.size(), index);
      auto n = std::make_shared<Expression::Node>();
      n->op = Op::kParent;
      n->parent = index;
      max_index_ = std::max(max_index_, index);
      return n;
    }
    Op op;
    if (name == "tanh") {
      op = Op::kTanh;
    } else if (name == "sin") {
      op = Op::kSin;
    } else if (name == "pow2") {
      op = Op::kPow2;
    } else {
      throw ExpressionError("unknown identifier '" + std::string(name) + "'", start);
    }
    expect('(');
    NodePtr arg = sum();
    expect(')');
    return make(op, arg);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int max_index_ = -1;
};

}  // namespace

Expression Expression::parse(std::string_view text) {
  Parser parser(text);
  Expression out;
  out.root_ = parser.parse();
  out.max_index_ = parser.max_index();
  out.text_ = std::string(text);
  return out;
}

double Expression::evaluate(std::span<const double> parents) const {
  if (max_index_ >= static_cast<int>(parents.size())) {
    throw std::invalid_argument("expression '" + text_ + "' references p" + std::to_string(max_index_) + " but only " +
                                std::to_string(parents.size()) + " parent values were given");
  }
  return root_->eval(parents);
}

void GroundTruthScm::validate() const {
  const int d = graph.num_nodes();
  if (static_cast<int>(equations.size()) != d) {
    throw std::invalid_argument("SCM has " + std::to_string(equations.size()) + " equations for " +
                                std::to_string(d) + " nodes");
  }
  for (int i = 0; i < d; ++i) {
    const NodeEquation& eq = equations[i];
    const int parent_count = static_cast<int>(graph.parents(i).size());
    if (parent_count > 0) {
      if (!eq.mechanism) throw std::invalid_argument("node " + std::to_string(i) + " has parents but no mechanism");
      if (eq.mechanism->max_parent_index() >= parent_count) {
        throw std::invalid_argument("mechanism of node " + std::to_string(i) + " references p" +
                                    std::to_string(eq.mechanism->max_parent_index()) + " but the node has " +
                                    std::to_string(parent_count) + " parents");
      }
      if (!(eq.noise_sd >= 0.0) || !std::isfinite(eq.noise_sd)) {
        throw std::invalid_argument("noise_sd of node " + std::to_string(i) + " must be finite and >= 0");
      }
    } else {
      if (eq.mechanism && eq.mechanism->max_parent_index() >= 0) {
        throw std::invalid_argument("root node " + std::to_string(i) + " has a mechanism referencing parents");
      }
      if (!(eq.root_sd >= 0.0) || !std::isfinite(eq.root_sd) || !std::isfinite(eq.root_mean)) {
        throw std::invalid_argument("root distribution of node " + std::to_string(i) + " must be finite with sd >= 0");
      }
    }
  }
}

Sample sample_truth(const GroundTruthScm& scm, const InterventionSpec& spec, std::uint64_t seed) {
  const int d = scm.num_nodes();
  spec.validate(d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> standard(0.0, 1.0);
  Sample out;
  out.values.assign(d, 0.0);
  out.intervention = spec;
  std::vector<double> parent_values;
  for (int node : scm.graph.topo_order()) {
    // Draw noise for every node so clamping one node leaves the others'
    // noise streams aligned with the observational draw.
    const double z = standard(rng);
    if (spec.targets(node)) {
      out.values[node] = spec.value;
      continue;
    }
    const NodeEquation& eq = scm.equations[node];
    const std::vector<int> parents = scm.graph.parents(node);
    if (parents.empty()) {
      out.values[node] = eq.root_mean + eq.root_sd * z;
      continue;
    }
    parent_values.clear();
    for (int p : parents) parent_values.push_back(out.values[p]);
    out.values[node] = eq.mechanism->evaluate(parent_values) + eq.noise_sd * z;
  }
  return out;
}

GroundTruthScm tanh_pair_scm(double noise_sd) {
  GroundTruthScm scm{Dag::from_edges(2, {{0, 1}}), {}};
  scm.equations.resize(2);
  scm.equations[0].root_mean = 0.0;
  scm.equations[0].root_sd = 1.0;
  scm.equations[1].mechanism = Expression::parse("2*tanh(p0)");
  scm.equations[1].noise_sd = noise_sd;
  return scm;
}

}  // namespace abcd
