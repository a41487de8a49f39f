#include "abcd/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

#include "abcd/numeric.hpp"

namespace abcd {
namespace {

constexpr double kSurrogateNoiseFallback = 1e-4;
// Floor on surrogate noise relative to its signal variance; repeated
// acquisitions at one grid point otherwise make the Gram matrix singular.
constexpr double kSurrogateRelativeNoiseFloor = 1e-6;

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < count; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

bool better(const EigEvaluation& a, const EigEvaluation& b) {
  if (a.eig != b.eig) return a.eig > b.eig;
  if (a.target != b.target) return a.target < b.target;
  return a.x < b.x;
}

}  // namespace

void DesignConfig::validate(int d) const {
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be finite and >= 0");
  if (bo_budget < 2) throw std::invalid_argument("bo_budget must be >= 2");
  if (static_cast<int>(domains.size()) != d) {
    throw std::invalid_argument("expected " + std::to_string(d) + " intervention domains, got " +
                                std::to_string(domains.size()));
  }
  for (std::size_t j = 0; j < domains.size(); ++j) {
    const Interval& iv = domains[j];
    if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi) || iv.lo > iv.hi) {
      throw std::invalid_argument("domain for node " + std::to_string(j) + " must be a finite nonempty interval");
    }
  }
}

std::vector<Interval> default_domains(std::span<const Sample> observational) {
  if (observational.empty()) throw std::invalid_argument("default_domains: no samples");
  const std::size_t d = observational.front().values.size();
  std::vector<Interval> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const Sample& s : observational) {
      lo = std::min(lo, s.values[i]);
      hi = std::max(hi, s.values[i]);
    }
    const double half_range = 0.5 * (hi - lo);
    out[i] = half_range > 0.0 ? Interval{lo - half_range, hi + half_range} : Interval{lo - 0.5, hi + 0.5};
  }
  return out;
}

double utility(std::span<const double> log_posterior) {
  const double lse = log_sum_exp(log_posterior);
  if (!(std::abs(lse) <= 1e-6)) {
    throw std::invalid_argument("utility: log posterior is not normalized (log-sum-exp = " + std::to_string(lse) + ")");
  }
  double total = 0.0;
  for (double lp : log_posterior) {
    if (std::isfinite(lp)) total += std::exp(lp) * lp;
  }
  return total;
}

EigEstimate mc_expected_info_gain(const BeliefState& belief, int target, double x, const DesignConfig& cfg) {
  const int d = belief.num_nodes();
  if (target < 0 || target >= d) throw std::invalid_argument("target out of range");
  if (static_cast<int>(cfg.domains.size()) == d && !cfg.domains[target].contains(x)) {
    throw std::invalid_argument("intervention value " + std::to_string(x) + " outside the domain of node " +
                                std::to_string(target));
  }
  if (cfg.mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  const auto& log_post = belief.log_posterior();
  std::vector<std::size_t> graphs;
  for (std::size_t g = 0; g < log_post.size(); ++g) {
    if (std::exp(log_post[g]) > 0.0) graphs.push_back(g);
  }
  const auto m_count = static_cast<std::size_t>(cfg.mc_samples);
  std::vector<double> draws(graphs.size() * m_count);
  const InterventionSpec spec = InterventionSpec::perform(target, x);
  parallel_for(draws.size(), cfg.threads, [&](std::size_t slot) {
    const std::size_t g = graphs[slot / m_count];
    const std::size_t m = slot % m_count;
    const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(target), seed_key(x), g, m);
    const Sample outcome = sample_interventional(g, belief, spec, seed);
    draws[slot] = belief.hypothetical_log_posterior(outcome)[g];
  });

  EigEstimate out;
  double variance = 0.0;
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    const double weight = std::exp(log_post[graphs[k]]);
    std::span<const double> values(draws.data() + k * m_count, m_count);
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(m_count);
    out.value += weight * mean;
    if (m_count > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      variance += weight * weight * ss / static_cast<double>(m_count - 1) / static_cast<double>(m_count);
    }
  }
  out.std_error = std::sqrt(variance);
  return out;
}

void BoSurrogate::add(double x, double value, double std_error) {
  if (!domain_.contains(x)) throw std::invalid_argument("surrogate point outside its domain");
  if (!std::isfinite(value)) throw std::invalid_argument("surrogate value must be finite");
  points_.push_back(x);
  values_.push_back(value);
  std_errors_.push_back(std::isfinite(std_error) ? std::abs(std_error) : 0.0);
  refit();
}

GpHyperparams BoSurrogate::hyperparams() const {
  GpHyperparams h;
  double variance = 0.0;
  if (values_.size() >= 2) {
    const double mean = std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
    for (double v : values_) variance += (v - mean) * (v - mean);
    variance /= static_cast<double>(values_.size());
  }
  h.signal_variance = variance > 0.0 ? variance : 1.0;
  const double width = domain_.width();
  h.inverse_lengthscales = {width > 0.0 ? 64.0 / (width * width) : 1.0};
  double noise = 0.0;
  for (double se : std_errors_) noise += se * se;
  if (!std_errors_.empty()) noise /= static_cast<double>(std_errors_.size());
  if (!(noise > 0.0)) noise = kSurrogateNoiseFallback;
  h.noise_variance = std::max(noise, kSurrogateRelativeNoiseFloor * h.signal_variance);
  return h;
}

void BoSurrogate::refit() {
  offset_ = std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(points_.size()), 1);
  Eigen::VectorXd targets(static_cast<Eigen::Index>(points_.size()));
  for (std::size_t k = 0; k < points_.size(); ++k) {
    inputs(static_cast<Eigen::Index>(k), 0) = points_[k];
    targets[static_cast<Eigen::Index>(k)] = values_[k] - offset_;
  }
  posterior_.emplace(GpDataset(std::move(inputs), std::move(targets)), hyperparams());
}

GpPrediction BoSurrogate::predict(double x) const {
  const double point[] = {x};
  if (!posterior_) {
    GpHyperparams h = hyperparams();
    return {0.0, kernel_se(point, point, h)};
  }
  GpPrediction p = posterior_->predict(point);
  p.mean += offset_;
  return p;
}

double ucb_acquisition(const BoSurrogate& surrogate, double x, double beta) {
  const GpPrediction p = surrogate.predict(x);
  return p.mean + beta * std::sqrt(std::max(p.variance_f, 0.0));
}

std::vector<double> linspace(const Interval& domain, int n) {
  if (n < 1) throw std::invalid_argument("linspace needs at least one point");
  if (n == 1 || domain.lo == domain.hi) return {domain.lo};
  std::vector<double> out(static_cast<std::size_t>(n));
  const double step = domain.width() / static_cast<double>(n - 1);
  for (int k = 0; k < n; ++k) out[k] = domain.lo + step * k;
  out.back() = domain.hi;
  return out;
}

DesignResult optimize_objective(int num_targets, const DesignObjective& objective, const DesignConfig& cfg) {
  cfg.validate(num_targets);
  using Clock = std::chrono::steady_clock;
  const auto deadline = cfg.time_budget ? std::optional(Clock::now() + *cfg.time_budget) : std::nullopt;

  DesignResult result;
  std::vector<BoSurrogate> surrogates;
  std::vector<bool> alive(num_targets, false);
  for (int j = 0; j < num_targets; ++j) surrogates.emplace_back(cfg.domains[j]);
  int order = 0;

  auto out_of_time = [&] {
    if (deadline && Clock::now() >= *deadline) {
      result.budget_exhausted = true;
      return true;
    }
    return false;
  };
  auto evaluate = [&](int j, double x) {
    const auto& pts = surrogates[j].points();
    EigEstimate est;
    auto seen = std::find(pts.begin(), pts.end(), x);
    if (seen != pts.end()) {
      // The objective is a deterministic function of (seed, j, x): reuse.
      const auto k = static_cast<std::size_t>(seen - pts.begin());
      est = {surrogates[j].values()[k], 0.0};
      for (const auto& e : result.diagnostics) {
        if (e.target == j && e.x == x) est.std_error = e.std_error;
      }
    } else {
      try {
        est = objective(j, x);
      } catch (const std::exception&) {
        return;
      }
      if (!std::isfinite(est.value)) return;
    }
    surrogates[j].add(x, est.value, est.std_error);
    alive[j] = true;
    result.diagnostics.push_back({j, x, est.value, est.std_error, order++});
  };

  const int seeds = std::min(cfg.bo_budget, 3);
  for (int j = 0; j < num_targets && !out_of_time(); ++j) {
    const Interval& dom = cfg.domains[j];
    const double seed_points[] = {dom.lo, dom.hi, dom.lo + 0.5 * dom.width()};
    for (int s = 0; s < seeds && !out_of_time(); ++s) evaluate(j, seed_points[s]);
  }
  for (int j = 0; j < num_targets; ++j) {
    const std::vector<double> grid = linspace(cfg.domains[j], kAcquisitionGridSize);
    for (int iter = 0; iter < cfg.bo_budget - seeds && alive[j]; ++iter) {
      if (out_of_time()) break;
      double best_x = grid.front();
      double best_a = -std::numeric_limits<double>::infinity();
      for (double x : grid) {
        const double a = ucb_acquisition(surrogates[j], x, cfg.beta);
        if (a > best_a) {
          best_a = a;
          best_x = x;
        }
      }
      evaluate(j, best_x);
    }
  }

  if (result.diagnostics.empty()) {
    if (result.budget_exhausted) throw std::runtime_error("design time budget exhausted before any evaluation");
    throw std::runtime_error("every objective evaluation failed for every target");
  }
  const EigEvaluation* best = &result.diagnostics.front();
  for (const auto& e : result.diagnostics) {
    if (better(e, *best)) best = &e;
  }
  result.target = best->target;
  result.x = best->x;
  result.eig = best->eig;
  return result;
}

DesignResult optimize_intervention(const BeliefState& belief, const DesignConfig& cfg) {
  if (belief.num_nodes() < 2) throw std::invalid_argument("optimize_intervention requires d >= 2");
  return optimize_objective(
      belief.num_nodes(), [&](int j, double x) { return mc_expected_info_gain(belief, j, x, cfg); }, cfg);
}

DesignResult grid_search_intervention(const BeliefState& belief, const DesignConfig& cfg, int grid_points) {
  cfg.validate(belief.num_nodes());
  DesignResult result;
  int order = 0;
  for (int j = 0; j < belief.num_nodes(); ++j) {
    for (double x : linspace(cfg.domains[j], grid_points)) {
      const EigEstimate est = mc_expected_info_gain(belief, j, x, cfg);
      result.diagnostics.push_back({j, x, est.value, est.std_error, order++});
    }
  }
  const EigEvaluation* best = &result.diagnostics.front();
  for (const auto& e : result.diagnostics) {
    if (better(e, *best)) best = &e;
  }
  result.target = best->target;
  result.x = best->x;
  result.eig = best->eig;
  return result;
}

}  // namespace abcd
