#include "abcd/belief.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "abcd/numeric.hpp"

namespace abcd {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::vector<int> mask_members(NodeMask mask) {
  std::vector<int> out;
  for (int p = 0; mask != 0; ++p, mask >>= 1) {
    if (mask & 1U) out.push_back(p);
  }
  return out;
}

}  // namespace

void InterventionSpec::validate(int d) const {
  if (!target) return;
  if (*target < 0 || *target >= d) {
    throw std::invalid_argument("intervention target " + std::to_string(*target) + " out of range for d=" +
                                std::to_string(d));
  }
  if (!std::isfinite(value)) throw std::invalid_argument("intervention value must be finite");
}

void Sample::validate(int d) const {
  if (static_cast<int>(values.size()) != d) {
    throw std::invalid_argument("sample has " + std::to_string(values.size()) + " values, expected " +
                                std::to_string(d));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw std::invalid_argument("sample value " + std::to_string(i) + " is not finite");
  }
  intervention.validate(d);
  if (intervention.target && values[*intervention.target] != intervention.value) {
    throw std::invalid_argument("clamped value mismatch: values[" + std::to_string(*intervention.target) + "] = " +
                                format_double(values[*intervention.target]) + " but intervention value is " +
                                format_double(intervention.value));
  }
}

void RootModel::validate() const {
  if (!std::isfinite(mu0)) throw std::invalid_argument("root model mu0 must be finite");
  if (!(kappa0 > 0.0) || !(alpha0 > 0.0) || !(beta0 > 0.0) || !std::isfinite(kappa0) || !std::isfinite(alpha0) ||
      !std::isfinite(beta0)) {
    throw std::invalid_argument("root model kappa0, alpha0, beta0 must be finite and positive");
  }
}

double StudentT::log_density(double x) const {
  const double z = (x - location) / scale;
  return std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) - 0.5 * std::log(dof * M_PI) - std::log(scale) -
         0.5 * (dof + 1.0) * std::log1p(z * z / dof);
}

RootPosterior RootPosterior::extended(double x) const {
  RootPosterior out = *this;
  out.count_ = count_ + 1;
  const double delta = x - mean_;
  out.mean_ = mean_ + delta / static_cast<double>(out.count_);
  out.m2_ = m2_ + delta * (x - out.mean_);
  return out;
}

double RootPosterior::log_evidence() const {
  if (count_ == 0) return 0.0;
  const double n = static_cast<double>(count_);
  const double kappa_n = prior_.kappa0 + n;
  const double alpha_n = prior_.alpha0 + 0.5 * n;
  const double shift = mean_ - prior_.mu0;
  const double beta_n = prior_.beta0 + 0.5 * m2_ + prior_.kappa0 * n * shift * shift / (2.0 * kappa_n);
  return std::lgamma(alpha_n) - std::lgamma(prior_.alpha0) + prior_.alpha0 * std::log(prior_.beta0) -
         alpha_n * std::log(beta_n) + 0.5 * std::log(prior_.kappa0 / kappa_n) - 0.5 * n * kLog2Pi;
}

StudentT RootPosterior::predictive() const {
  const double n = static_cast<double>(count_);
  const double kappa_n = prior_.kappa0 + n;
  const double alpha_n = prior_.alpha0 + 0.5 * n;
  const double mu_n = (prior_.kappa0 * prior_.mu0 + n * mean_) / kappa_n;
  const double shift = mean_ - prior_.mu0;
  const double beta_n = prior_.beta0 + 0.5 * m2_ + prior_.kappa0 * n * shift * shift / (2.0 * kappa_n);
  return {2.0 * alpha_n, mu_n, std::sqrt(beta_n * (kappa_n + 1.0) / (alpha_n * kappa_n))};
}

struct BeliefState::Structure {
  int d = 0;
  std::vector<Dag> universe;
  std::vector<double> log_prior;
  std::vector<ModelKey> keys;
  std::map<ModelKey, std::size_t> key_lookup;
  std::vector<std::size_t> graph_keys;  // num_graphs x d, row-major
  std::vector<GpHyperparams> hyperparams;  // per key; unused for roots
  std::vector<RootModel> root_models;
  std::vector<double> centering;
  int fit_fallbacks = 0;
};

int BeliefState::num_nodes() const { return structure_->d; }
const std::vector<Dag>& BeliefState::universe() const { return structure_->universe; }
const std::vector<double>& BeliefState::log_prior() const { return structure_->log_prior; }
const std::vector<double>& BeliefState::centering() const { return structure_->centering; }
const RootModel& BeliefState::root_model(int node) const { return structure_->root_models.at(node); }
const std::vector<ModelKey>& BeliefState::keys() const { return structure_->keys; }
int BeliefState::fit_fallbacks() const { return structure_->fit_fallbacks; }

std::optional<std::size_t> BeliefState::graph_index(const Dag& g) const {
  auto it = std::find(structure_->universe.begin(), structure_->universe.end(), g);
  if (it == structure_->universe.end()) return std::nullopt;
  return static_cast<std::size_t>(it - structure_->universe.begin());
}

std::vector<double> BeliefState::posterior() const {
  std::vector<double> out(log_posterior_.size());
  std::transform(log_posterior_.begin(), log_posterior_.end(), out.begin(), [](double v) { return std::exp(v); });
  return out;
}

std::optional<std::size_t> BeliefState::key_index(const ModelKey& key) const {
  auto it = structure_->key_lookup.find(key);
  if (it == structure_->key_lookup.end()) return std::nullopt;
  return it->second;
}

std::span<const std::size_t> BeliefState::graph_keys(std::size_t g) const {
  const auto d = static_cast<std::size_t>(structure_->d);
  return std::span<const std::size_t>(structure_->graph_keys).subspan(g * d, d);
}

const GpHyperparams& BeliefState::hyperparams(const ModelKey& key) const {
  auto k = key_index(key);
  if (!k || key.parents == 0) {
    throw std::invalid_argument("no GP hyperparameters for node " + std::to_string(key.node) +
                                " with this parent set; initialize the belief over a universe containing it");
  }
  return structure_->hyperparams[*k];
}

double BeliefState::cached_log_evidence(const ModelKey& key) const {
  auto k = key_index(key);
  if (!k) throw std::invalid_argument("unknown (node, parent set) key");
  return models_[*k].log_evidence;
}

void BeliefState::model_input(const ModelKey& key, const Sample& s, std::vector<double>& x, double& y) const {
  x.clear();
  const auto& c = structure_->centering;
  for (NodeMask m = key.parents, p = 0; m != 0; ++p, m >>= 1) {
    if (m & 1U) x.push_back(s.values[p] - c[p]);
  }
  y = s.values[key.node] - c[key.node];
}

BeliefState::NodeModel BeliefState::fresh_model(std::size_t key) const {
  const ModelKey& mk = structure_->keys[key];
  if (mk.parents == 0) return {RootPosterior(structure_->root_models[mk.node]), 0.0};
  const auto p = static_cast<Eigen::Index>(std::popcount(mk.parents));
  GpPosterior gp(GpDataset(Eigen::MatrixXd(0, p), Eigen::VectorXd(0)), structure_->hyperparams[key]);
  return {std::move(gp), 0.0};
}

BeliefState::NodeModel BeliefState::extended_model(std::size_t key, const Sample& s) const {
  const ModelKey& mk = structure_->keys[key];
  const NodeModel& current = models_[key];
  if (s.intervention.targets(mk.node)) return current;
  std::vector<double> x;
  double y = 0.0;
  model_input(mk, s, x, y);
  if (const auto* root = std::get_if<RootPosterior>(&current.model)) {
    RootPosterior next = root->extended(y);
    const double evidence = next.log_evidence();
    return {next, evidence};
  }
  GpPosterior next = std::get<GpPosterior>(current.model).extended(x, y);
  const double evidence = next.log_marginal_likelihood();
  return {std::move(next), evidence};
}

double BeliefState::extended_evidence(std::size_t key, const Sample& s) const {
  const ModelKey& mk = structure_->keys[key];
  const NodeModel& current = models_[key];
  if (s.intervention.targets(mk.node)) return current.log_evidence;
  std::vector<double> x;
  double y = 0.0;
  model_input(mk, s, x, y);
  if (const auto* root = std::get_if<RootPosterior>(&current.model)) return root->extended(y).log_evidence();
  return std::get<GpPosterior>(current.model).extended_log_marginal_likelihood(x, y);
}

void BeliefState::renormalize(std::span<const double> key_evidence, std::vector<double>& out) const {
  const std::size_t num_graphs = structure_->universe.size();
  out.assign(num_graphs, kLogZero);
  for (std::size_t g = 0; g < num_graphs; ++g) {
    if (!std::isfinite(structure_->log_prior[g])) continue;
    double total = structure_->log_prior[g];
    for (std::size_t k : graph_keys(g)) total += key_evidence[k];
    out[g] = total;
  }
  const double normalizer = log_sum_exp(out);
  if (!std::isfinite(normalizer)) throw std::runtime_error("graph posterior has no finite mass");
  for (double& v : out) {
    if (std::isfinite(v)) v -= normalizer;
  }
}

BeliefState BeliefState::updated(const Sample& s) const {
  s.validate(structure_->d);
  BeliefState next;
  next.structure_ = structure_;
  next.data_ = data_;
  next.data_.push_back(s);
  next.models_.reserve(models_.size());
  std::vector<double> evidence(models_.size());
  for (std::size_t k = 0; k < models_.size(); ++k) {
    next.models_.push_back(extended_model(k, s));
    evidence[k] = next.models_.back().log_evidence;
  }
  next.renormalize(evidence, next.log_posterior_);
  return next;
}

std::vector<double> BeliefState::hypothetical_log_posterior(const Sample& s) const {
  std::vector<double> evidence(models_.size());
  for (std::size_t k = 0; k < models_.size(); ++k) evidence[k] = extended_evidence(k, s);
  std::vector<double> out;
  renormalize(evidence, out);
  return out;
}

BeliefState BeliefState::rebuilt_from_scratch() const {
  BeliefState out;
  out.structure_ = structure_;
  out.data_ = data_;
  std::vector<double> evidence(models_.size());
  for (std::size_t k = 0; k < structure_->keys.size(); ++k) {
    const ModelKey& mk = structure_->keys[k];
    NodeModel model = fresh_model(k);
    std::vector<std::vector<double>> rows;
    std::vector<double> targets;
    std::vector<double> x;
    double y = 0.0;
    for (const Sample& s : data_) {
      if (s.intervention.targets(mk.node)) continue;
      model_input(mk, s, x, y);
      rows.push_back(x);
      targets.push_back(y);
    }
    if (auto* root = std::get_if<RootPosterior>(&model.model)) {
      for (double t : targets) *root = root->extended(t);
      model.log_evidence = root->log_evidence();
    } else {
      const auto p = static_cast<Eigen::Index>(std::popcount(mk.parents));
      Eigen::MatrixXd inputs(static_cast<Eigen::Index>(rows.size()), p);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (Eigen::Index c = 0; c < p; ++c) inputs(static_cast<Eigen::Index>(r), c) = rows[r][c];
      }
      Eigen::VectorXd y_vec = Eigen::Map<const Eigen::VectorXd>(targets.data(), static_cast<Eigen::Index>(targets.size()));
      GpPosterior gp(GpDataset(std::move(inputs), std::move(y_vec)), structure_->hyperparams[k]);
      model.log_evidence = gp.log_marginal_likelihood();
      model.model = std::move(gp);
    }
    evidence[k] = model.log_evidence;
    out.models_.push_back(std::move(model));
  }
  out.renormalize(evidence, out.log_posterior_);
  return out;
}

GpPrediction BeliefState::predict(const ModelKey& key, std::span<const double> centered_input) const {
  auto k = key_index(key);
  if (!k || key.parents == 0) throw std::invalid_argument("predict: key is not a GP node model");
  return std::get<GpPosterior>(models_[*k].model).predict(centered_input);
}

StudentT BeliefState::root_predictive(int node) const {
  auto k = key_index(ModelKey{node, 0});
  if (!k) throw std::invalid_argument("root_predictive: node " + std::to_string(node) + " is never a root");
  return std::get<RootPosterior>(models_[*k].model).predictive();
}

BeliefState initialize(std::span<const Sample> observational, const BeliefOptions& options) {
  if (observational.empty()) throw std::invalid_argument("initialize: no observational samples");
  const int d = static_cast<int>(observational.front().values.size());
  if (static_cast<int>(observational.size()) < options.n_min) {
    throw std::invalid_argument("initialize needs at least n_min=" + std::to_string(options.n_min) +
                                " observational samples, got " + std::to_string(observational.size()));
  }
  for (const Sample& s : observational) {
    s.validate(d);
    if (!s.intervention.is_observational()) {
      throw std::invalid_argument("initialize: every initial sample must be observational");
    }
  }
  options.root.validate();

  auto structure = std::make_shared<BeliefState::Structure>();
  structure->d = d;
  structure->universe = options.universe.empty() ? enumerate_dags(d) : options.universe;
  for (const Dag& g : structure->universe) {
    if (g.num_nodes() != d) throw std::invalid_argument("universe graph node count does not match the data");
  }
  structure->log_prior = log_prior_vector(options.prior, structure->universe);
  structure->root_models.assign(d, options.root);

  structure->centering.assign(d, 0.0);
  for (const Sample& s : observational) {
    for (int i = 0; i < d; ++i) structure->centering[i] += s.values[i];
  }
  for (double& c : structure->centering) c /= static_cast<double>(observational.size());

  for (const Dag& g : structure->universe) {
    for (int i = 0; i < d; ++i) {
      ModelKey key{i, g.parent_mask(i)};
      if (structure->key_lookup.emplace(key, 0).second) structure->keys.push_back(key);
    }
  }
  std::sort(structure->keys.begin(), structure->keys.end());
  for (std::size_t k = 0; k < structure->keys.size(); ++k) structure->key_lookup[structure->keys[k]] = k;
  for (const Dag& g : structure->universe) {
    for (int i = 0; i < d; ++i) structure->graph_keys.push_back(structure->key_lookup.at({i, g.parent_mask(i)}));
  }

  structure->hyperparams.resize(structure->keys.size());
  for (std::size_t k = 0; k < structure->keys.size(); ++k) {
    const ModelKey& key = structure->keys[k];
    if (key.parents == 0) continue;
    const std::vector<int> parents = mask_members(key.parents);
    const auto p = static_cast<Eigen::Index>(parents.size());
    GpHyperparams h = GpHyperparams::defaults(parents.size());
    if (options.fit_hyperparams) {
      Eigen::MatrixXd inputs(static_cast<Eigen::Index>(observational.size()), p);
      Eigen::VectorXd targets(static_cast<Eigen::Index>(observational.size()));
      for (std::size_t r = 0; r < observational.size(); ++r) {
        const auto row = static_cast<Eigen::Index>(r);
        for (Eigen::Index c = 0; c < p; ++c) {
          inputs(row, c) = observational[r].values[parents[c]] - structure->centering[parents[c]];
        }
        targets[row] = observational[r].values[key.node] - structure->centering[key.node];
      }
      FitOptions fit = options.fit;
      fit.seed = derive_seed(options.fit.seed, static_cast<std::uint64_t>(key.node), key.parents);
      try {
        h = fit_hyperparams(GpDataset(std::move(inputs), std::move(targets)), fit);
      } catch (const std::exception&) {
        ++structure->fit_fallbacks;
      }
    }
    structure->hyperparams[k] = std::move(h);
  }

  BeliefState belief;
  belief.structure_ = structure;
  belief.models_.reserve(structure->keys.size());
  for (std::size_t k = 0; k < structure->keys.size(); ++k) belief.models_.push_back(belief.fresh_model(k));
  std::vector<double> evidence(structure->keys.size(), 0.0);
  belief.renormalize(evidence, belief.log_posterior_);
  for (const Sample& s : observational) belief = belief.updated(s);
  return belief;
}

double node_log_evidence(int node, NodeMask parents, std::span<const Sample> data, const BeliefState& belief) {
  const int d = belief.num_nodes();
  if (node < 0 || node >= d) throw std::invalid_argument("node index out of range");
  if ((parents >> node) & 1U) throw std::invalid_argument("a node cannot be its own parent");
  const ModelKey key{node, parents};
  std::vector<double> x;
  double y = 0.0;
  if (parents == 0) {
    RootPosterior root(belief.root_model(node));
    for (const Sample& s : data) {
      if (s.intervention.targets(node)) continue;
      belief.model_input(key, s, x, y);
      root = root.extended(y);
    }
    return root.log_evidence();
  }
  const GpHyperparams& h = belief.hyperparams(key);
  std::vector<std::vector<double>> rows;
  std::vector<double> targets;
  for (const Sample& s : data) {
    if (s.intervention.targets(node)) continue;
    belief.model_input(key, s, x, y);
    rows.push_back(x);
    targets.push_back(y);
  }
  if (rows.empty()) return 0.0;
  const auto p = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(rows.size()), p);
  Eigen::VectorXd y_vec(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Eigen::Index c = 0; c < p; ++c) inputs(static_cast<Eigen::Index>(r), c) = rows[r][c];
    y_vec[static_cast<Eigen::Index>(r)] = targets[r];
  }
  return log_marginal_likelihood(GpDataset(std::move(inputs), std::move(y_vec)), h);
}

std::vector<double> graph_log_posterior(const BeliefState& belief, const GraphPrior& prior) {
  const std::vector<double> lp = log_prior_vector(prior, belief.universe());
  std::vector<double> out(belief.num_graphs(), kLogZero);
  for (std::size_t g = 0; g < out.size(); ++g) {
    if (!std::isfinite(lp[g])) continue;
    double total = lp[g];
    for (std::size_t k : belief.graph_keys(g)) total += belief.cached_log_evidence(k);
    out[g] = total;
  }
  const double normalizer = log_sum_exp(out);
  if (!std::isfinite(normalizer)) throw std::runtime_error("graph posterior has no finite mass");
  for (double& v : out) {
    if (std::isfinite(v)) v -= normalizer;
  }
  return out;
}

Sample sample_interventional(std::size_t graph_index, const BeliefState& belief, const InterventionSpec& spec,
                             std::uint64_t seed) {
  const int d = belief.num_nodes();
  spec.validate(d);
  const Dag& g = belief.universe().at(graph_index);
  std::mt19937_64 rng(seed);
  Sample out;
  out.values.assign(d, 0.0);
  out.intervention = spec;
  const auto& c = belief.centering();
  std::vector<double> input;
  for (int node : g.topo_order()) {
    if (spec.targets(node)) {
      out.values[node] = spec.value;
      continue;
    }
    const ModelKey key{node, g.parent_mask(node)};
    if (key.parents == 0) {
      const StudentT t = belief.root_predictive(node);
      std::student_t_distribution<double> draw(t.dof);
      out.values[node] = c[node] + t.location + t.scale * draw(rng);
      continue;
    }
    input.clear();
    for (NodeMask m = key.parents, p = 0; m != 0; ++p, m >>= 1) {
      if (m & 1U) input.push_back(out.values[p] - c[p]);
    }
    const GpPrediction pred = belief.predict(key, input);
    const double sd = std::sqrt(pred.variance_f + belief.hyperparams(key).noise_variance);
    std::normal_distribution<double> draw(pred.mean, sd);
    out.values[node] = c[node] + draw(rng);
  }
  return out;
}

Sample sample_interventional(const Dag& g, const BeliefState& belief, const InterventionSpec& spec,
                             std::uint64_t seed) {
  auto idx = belief.graph_index(g);
  if (!idx) throw std::invalid_argument("sample_interventional: graph " + g.to_string() + " is not in the universe");
  return sample_interventional(*idx, belief, spec, seed);
}

Eigen::MatrixXd edge_marginals(const BeliefState& belief) {
  const int d = belief.num_nodes();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
  const auto& lp = belief.log_posterior();
  for (std::size_t g = 0; g < lp.size(); ++g) {
    const double p = std::exp(lp[g]);
    if (p == 0.0) continue;
    const Dag& dag = belief.universe()[g];
    for (int from = 0; from < d; ++from) {
      for (int to = 0; to < d; ++to) {
        if (dag.has_edge(from, to)) out(from, to) += p;
      }
    }
  }
  return out;
}

}  // namespace abcd
