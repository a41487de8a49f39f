#include "abcd/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include <Eigen/Cholesky>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_vector.h>

namespace abcd {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::span<const double> row_span(const Eigen::MatrixXd& m, Eigen::Index r, std::vector<double>& scratch) {
  scratch.resize(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) scratch[c] = m(r, c);
  return scratch;
}

void check_positive_interval(const Interval& iv, const char* name) {
  if (!(iv.lo > 0.0) || !std::isfinite(iv.hi) || !(iv.lo <= iv.hi)) {
    throw std::invalid_argument(std::string("bounds for ") + name + " must be finite, positive and ordered");
  }
}

}  // namespace

void GpHyperparams::validate(std::size_t expected_dim) const {
  auto ok = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!ok(signal_variance)) throw std::invalid_argument("signal_variance must be finite and positive");
  if (!ok(noise_variance)) throw std::invalid_argument("noise_variance must be finite and positive");
  if (inverse_lengthscales.size() != expected_dim) {
    throw std::invalid_argument("expected " + std::to_string(expected_dim) + " inverse lengthscales, got " +
                                std::to_string(inverse_lengthscales.size()));
  }
  for (double v : inverse_lengthscales) {
    if (!ok(v)) throw std::invalid_argument("inverse lengthscales must be finite and positive");
  }
}

GpHyperparams GpHyperparams::defaults(std::size_t dim) {
  return GpHyperparams{1.0, std::vector<double>(dim, 1.0), 0.1};
}

GpDataset::GpDataset(Eigen::MatrixXd x, Eigen::VectorXd y) : inputs(std::move(x)), targets(std::move(y)) {
  if (inputs.rows() != targets.size()) {
    throw std::invalid_argument("dataset has " + std::to_string(inputs.rows()) + " input rows but " +
                                std::to_string(targets.size()) + " targets");
  }
  if (!inputs.allFinite() || !targets.allFinite()) throw std::invalid_argument("dataset contains non-finite values");
}

double kernel_se(std::span<const double> x, std::span<const double> x2, const GpHyperparams& h) {
  if (x.size() != x2.size() || x.size() != h.inverse_lengthscales.size()) {
    throw std::invalid_argument("kernel_se: dimension mismatch (" + std::to_string(x.size()) + ", " +
                                std::to_string(x2.size()) + ", " + std::to_string(h.inverse_lengthscales.size()) +
                                ")");
  }
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - x2[i];
    q += h.inverse_lengthscales[i] * diff * diff;
  }
  return h.signal_variance * std::exp(-q);
}

Eigen::MatrixXd gram_matrix(const Eigen::MatrixXd& inputs, const GpHyperparams& h) {
  const Eigen::Index n = inputs.rows();
  Eigen::MatrixXd k(n, n);
  std::vector<double> a, b;
  for (Eigen::Index r = 0; r < n; ++r) {
    auto xr = row_span(inputs, r, a);
    for (Eigen::Index c = 0; c <= r; ++c) {
      k(r, c) = kernel_se(xr, row_span(inputs, c, b), h);
      k(c, r) = k(r, c);
    }
  }
  return k;
}

GpPosterior::GpPosterior(GpDataset data, GpHyperparams h) : data_(std::move(data)), hyper_(std::move(h)) {
  hyper_.validate(static_cast<std::size_t>(data_.dim()));
  factorize();
}

void GpPosterior::factorize() {
  // Row-by-row (bordered) Cholesky first: the same arithmetic as extended(),
  // so a cache grown one sample at a time equals a rebuild bit for bit.
  GpDataset full = std::move(data_);
  data_.inputs.resize(0, full.dim());
  data_.targets.resize(0);
  chol_.resize(0, 0);
  alpha_.resize(0);
  log_ml_ = 0.0;
  jitter_ = 0.0;
  std::vector<double> scratch;
  bool bordered = true;
  for (Eigen::Index r = 0; r < full.size() && bordered; ++r) {
    const auto x = row_span(full.inputs, r, scratch);
    const Border b = border(x, full.targets[r]);
    if (b.ok) {
      append(x, full.targets[r], b);
    } else {
      bordered = false;
    }
  }
  data_ = std::move(full);
  if (bordered) return;

  const Eigen::Index n = data_.size();
  Eigen::MatrixXd cov = gram_matrix(data_.inputs, hyper_);
  cov.diagonal().array() += hyper_.noise_variance;

  std::vector<double> tried{0.0};
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  jitter_ = 0.0;
  for (double jitter : kJitterLadder) {
    if (llt.info() == Eigen::Success) break;
    tried.push_back(jitter);
    Eigen::MatrixXd jittered = cov;
    jittered.diagonal().array() += jitter;
    llt.compute(jittered);
    jitter_ = jitter;
  }
  if (llt.info() != Eigen::Success) {
    throw FactorizationError("K + sigma^2 I is not positive definite after jitter up to 1e-6", tried);
  }
  chol_ = llt.matrixL();
  alpha_ = chol_.triangularView<Eigen::Lower>().solve(data_.targets);
  log_ml_ = -0.5 * alpha_.squaredNorm() - chol_.diagonal().array().log().sum() - 0.5 * static_cast<double>(n) * kLog2Pi;
}

void GpPosterior::append(std::span<const double> x, double y, const Border& b) {
  const Eigen::Index n = size();
  data_.inputs.conservativeResize(n + 1, Eigen::NoChange);
  for (Eigen::Index c = 0; c < data_.dim(); ++c) data_.inputs(n, c) = x[c];
  data_.targets.conservativeResize(n + 1);
  data_.targets[n] = y;
  chol_.conservativeResize(n + 1, n + 1);
  chol_.col(n).setZero();
  chol_.block(n, 0, 1, n) = b.row.transpose();
  chol_(n, n) = b.diag;
  alpha_.conservativeResize(n + 1);
  alpha_[n] = b.alpha;
  log_ml_ = log_ml_ - 0.5 * b.alpha * b.alpha - std::log(b.diag) - 0.5 * kLog2Pi;
}

GpPrediction GpPosterior::predict(std::span<const double> x) const {
  const double prior_var = kernel_se(x, x, hyper_);
  if (size() == 0) return {0.0, prior_var};
  Eigen::VectorXd kstar(size());
  std::vector<double> scratch;
  for (Eigen::Index r = 0; r < size(); ++r) kstar[r] = kernel_se(row_span(data_.inputs, r, scratch), x, hyper_);
  Eigen::VectorXd v = chol_.triangularView<Eigen::Lower>().solve(kstar);
  return {v.dot(alpha_), std::max(prior_var - v.squaredNorm(), 0.0)};
}

GpPosterior::Border GpPosterior::border(std::span<const double> x, double y) const {
  Border b;
  const double self = kernel_se(x, x, hyper_) + hyper_.noise_variance + jitter_;
  if (size() == 0) {
    b.row.resize(0);
    b.diag = std::sqrt(self);
    b.alpha = y / b.diag;
    b.ok = true;
    return b;
  }
  Eigen::VectorXd kvec(size());
  std::vector<double> scratch;
  for (Eigen::Index r = 0; r < size(); ++r) kvec[r] = kernel_se(row_span(data_.inputs, r, scratch), x, hyper_);
  b.row = chol_.triangularView<Eigen::Lower>().solve(kvec);
  const double schur = self - b.row.squaredNorm();
  // The Schur complement must stay clearly positive for the border to be
  // trusted; otherwise the caller refactors with the jitter ladder.
  if (!(schur > 1e-12 * self)) return b;
  b.diag = std::sqrt(schur);
  b.alpha = (y - b.row.dot(alpha_)) / b.diag;
  b.ok = true;
  return b;
}

double GpPosterior::extended_log_marginal_likelihood(std::span<const double> x, double y) const {
  Border b = border(x, y);
  if (!b.ok) return extended(x, y).log_marginal_likelihood();
  return log_ml_ - 0.5 * b.alpha * b.alpha - std::log(b.diag) - 0.5 * kLog2Pi;
}

GpPosterior GpPosterior::extended(std::span<const double> x, double y) const {
  if (static_cast<Eigen::Index>(x.size()) != data_.dim()) {
    throw std::invalid_argument("extended: input has dimension " + std::to_string(x.size()) + ", expected " +
                                std::to_string(data_.dim()));
  }
  GpPosterior out = *this;
  const Border b = border(x, y);
  if (b.ok) {
    out.append(x, y, b);
    return out;
  }
  const Eigen::Index n = size();
  out.data_.inputs.conservativeResize(n + 1, Eigen::NoChange);
  for (Eigen::Index c = 0; c < data_.dim(); ++c) out.data_.inputs(n, c) = x[c];
  out.data_.targets.conservativeResize(n + 1);
  out.data_.targets[n] = y;
  out.factorize();
  return out;
}

double log_marginal_likelihood(const GpDataset& data, const GpHyperparams& h) {
  if (data.size() < 1) throw std::invalid_argument("log_marginal_likelihood requires at least one observation");
  return GpPosterior(data, h).log_marginal_likelihood();
}

GpPrediction predictive(const GpDataset& data, const GpHyperparams& h, std::span<const double> x_star) {
  return GpPosterior(data, h).predict(x_star);
}

void HyperparamBounds::validate() const {
  check_positive_interval(signal_variance, "signal_variance");
  check_positive_interval(inverse_lengthscale, "inverse_lengthscale");
  check_positive_interval(noise_variance, "noise_variance");
}

namespace {

struct MinimizerDeleter {
  void operator()(gsl_multimin_fminimizer* m) const { gsl_multimin_fminimizer_free(m); }
};
struct VectorDeleter {
  void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};
using MinimizerPtr = std::unique_ptr<gsl_multimin_fminimizer, MinimizerDeleter>;
using VectorPtr = std::unique_ptr<gsl_vector, VectorDeleter>;

// Parameter vector layout: [log lambda, log nu_1..nu_p, log sigma^2].
struct LogSpaceObjective {
  const GpDataset* data;
  std::vector<Interval> log_bounds;

  std::vector<double> clamp(const double* z) const {
    std::vector<double> out(log_bounds.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::clamp(z[k], log_bounds[k].lo, log_bounds[k].hi);
    return out;
  }

  GpHyperparams to_hyper(const std::vector<double>& logp) const {
    GpHyperparams h;
    h.signal_variance = std::exp(logp.front());
    h.noise_variance = std::exp(logp.back());
    for (std::size_t k = 1; k + 1 < logp.size(); ++k) h.inverse_lengthscales.push_back(std::exp(logp[k]));
    return h;
  }

  double log_ml(const std::vector<double>& logp) const {
    try {
      return GpPosterior(*data, to_hyper(logp)).log_marginal_likelihood();
    } catch (const FactorizationError&) {
      return -std::numeric_limits<double>::infinity();
    }
  }

  // Negative log-ML at the projection, plus a quadratic pull back toward the box.
  double penalized(const double* z) const {
    auto inside = clamp(z);
    double excess = 0.0;
    for (std::size_t k = 0; k < inside.size(); ++k) excess += (z[k] - inside[k]) * (z[k] - inside[k]);
    const double value = log_ml(inside);
    if (!std::isfinite(value)) return 1e100;
    return -value + 1e3 * excess;
  }

  static double gsl_callback(const gsl_vector* v, void* params) {
    return static_cast<const LogSpaceObjective*>(params)->penalized(v->data);
  }
};

std::vector<double> nelder_mead(const LogSpaceObjective& objective, const std::vector<double>& start,
                                int max_iterations) {
  static const bool silenced = [] {
    gsl_set_error_handler_off();
    return true;
  }();
  (void)silenced;
  const std::size_t dim = start.size();
  gsl_multimin_function fn{&LogSpaceObjective::gsl_callback, dim, const_cast<LogSpaceObjective*>(&objective)};
  VectorPtr x(gsl_vector_alloc(dim));
  VectorPtr step(gsl_vector_alloc(dim));
  for (std::size_t k = 0; k < dim; ++k) {
    gsl_vector_set(x.get(), k, start[k]);
    gsl_vector_set(step.get(), k, 0.5);
  }
  MinimizerPtr minimizer(gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim));
  gsl_multimin_fminimizer_set(minimizer.get(), &fn, x.get(), step.get());
  for (int iter = 0; iter < max_iterations; ++iter) {
    if (gsl_multimin_fminimizer_iterate(minimizer.get()) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(minimizer.get()), 1e-8) == GSL_SUCCESS) break;
  }
  return objective.clamp(minimizer->x->data);
}

}  // namespace

GpHyperparams fit_hyperparams(const GpDataset& data, const FitOptions& options) {
  if (data.size() < 3) {
    throw std::invalid_argument("fit_hyperparams needs at least 3 observations (got " + std::to_string(data.size()) +
                                "); use GpHyperparams::defaults instead");
  }
  options.bounds.validate();
  const std::size_t p = static_cast<std::size_t>(data.dim());

  LogSpaceObjective objective{&data, {}};
  auto log_interval = [](const Interval& iv) { return Interval{std::log(iv.lo), std::log(iv.hi)}; };
  objective.log_bounds.push_back(log_interval(options.bounds.signal_variance));
  for (std::size_t k = 0; k < p; ++k) objective.log_bounds.push_back(log_interval(options.bounds.inverse_lengthscale));
  objective.log_bounds.push_back(log_interval(options.bounds.noise_variance));

  std::vector<std::vector<double>> starts;
  {
    GpHyperparams init = GpHyperparams::defaults(p);
    std::vector<double> z{std::log(init.signal_variance)};
    for (double v : init.inverse_lengthscales) z.push_back(std::log(v));
    z.push_back(std::log(init.noise_variance));
    starts.push_back(objective.clamp(z.data()));
  }
  std::mt19937_64 rng(options.seed);
  for (int r = 0; r < options.restarts; ++r) {
    std::vector<double> z;
    for (const Interval& iv : objective.log_bounds) z.push_back(std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng));
    starts.push_back(std::move(z));
  }

  std::vector<double> best = starts.front();
  double best_value = objective.log_ml(best);
  auto consider = [&](const std::vector<double>& candidate) {
    const double value = objective.log_ml(candidate);
    if (value > best_value) {
      best_value = value;
      best = candidate;
    }
  };
  for (const auto& start : starts) {
    consider(start);
    consider(nelder_mead(objective, start, options.max_iterations));
  }
  // Restarting the simplex at the incumbent shakes off premature collapse.
  consider(nelder_mead(objective, best, options.max_iterations));

  if (!std::isfinite(best_value)) {
    throw FactorizationError("fit_hyperparams: no start point produced a factorizable covariance", {});
  }
  return objective.to_hyper(best);
}

}  // namespace abcd
