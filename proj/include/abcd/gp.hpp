#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace abcd {

/// Squared-exponential GP hyperparameters:
/// k(x, x') = signal_variance * exp(-sum_i inverse_lengthscales[i] * (x_i - x'_i)^2),
/// observations y = f(x) + N(0, noise_variance).
struct GpHyperparams {
  double signal_variance = 1.0;
  std::vector<double> inverse_lengthscales;
  double noise_variance = 0.1;

  std::size_t dim() const { return inverse_lengthscales.size(); }
  /// Throws std::invalid_argument unless every entry is finite and positive
  /// and the input dimension matches.
  void validate(std::size_t expected_dim) const;

  /// Fallback used when fitting is impossible or fails: unit signal,
  /// unit inverse lengthscales, noise variance 0.1.
  static GpHyperparams defaults(std::size_t dim);

  friend bool operator==(const GpHyperparams&, const GpHyperparams&) = default;
};

/// Regression data: one input row per target.
struct GpDataset {
  Eigen::MatrixXd inputs;   // n x p
  Eigen::VectorXd targets;  // n

  GpDataset() = default;
  GpDataset(Eigen::MatrixXd x, Eigen::VectorXd y);

  Eigen::Index size() const { return targets.size(); }
  Eigen::Index dim() const { return inputs.cols(); }
};

/// Raised when K + sigma^2 I cannot be Cholesky-factored even after the
/// jitter ladder.
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(const std::string& what, std::vector<double> jitter_tried)
      : std::runtime_error(what), jitter_tried_(std::move(jitter_tried)) {}
  const std::vector<double>& jitter_tried() const { return jitter_tried_; }

 private:
  std::vector<double> jitter_tried_;
};

/// Diagonal jitter retried, in order, after a plain factorization fails.
inline constexpr double kJitterLadder[] = {1e-10, 1e-8, 1e-6};

double kernel_se(std::span<const double> x, std::span<const double> x2, const GpHyperparams& h);

/// Gram matrix K with K_ab = k(x_a, x_b) over the rows of `inputs`.
Eigen::MatrixXd gram_matrix(const Eigen::MatrixXd& inputs, const GpHyperparams& h);

struct GpPrediction {
  double mean = 0.0;
  /// Latent-function variance; add noise_variance for an observation.
  double variance_f = 0.0;
};

/// Immutable Cholesky snapshot of K + (sigma^2 + jitter) I for one dataset.
///
/// `extended` appends one observation with an O(n^2) border update instead of
/// refactoring; the result is a new snapshot and the receiver is untouched.
class GpPosterior {
 public:
  GpPosterior() = default;
  GpPosterior(GpDataset data, GpHyperparams h);

  const GpHyperparams& hyperparams() const { return hyper_; }
  const GpDataset& data() const { return data_; }
  Eigen::Index size() const { return data_.size(); }
  double jitter() const { return jitter_; }
  double log_marginal_likelihood() const { return log_ml_; }

  GpPrediction predict(std::span<const double> x) const;

  /// Log marginal likelihood of the data with (x, y) appended, without
  /// materializing the extended factorization.
  double extended_log_marginal_likelihood(std::span<const double> x, double y) const;

  GpPosterior extended(std::span<const double> x, double y) const;

 private:
  struct Border {
    Eigen::VectorXd row;  // L^{-1} k(X, x)
    double diag = 0.0;    // new diagonal entry of L
    double alpha = 0.0;   // new entry of L^{-1} y
    bool ok = false;
  };
  Border border(std::span<const double> x, double y) const;
  void append(std::span<const double> x, double y, const Border& b);
  void factorize();

  GpDataset data_;
  GpHyperparams hyper_;
  Eigen::MatrixXd chol_;   // lower-triangular L
  Eigen::VectorXd alpha_;  // L^{-1} y
  double jitter_ = 0.0;
  double log_ml_ = 0.0;
};

/// -1/2 y^T (K + s I)^{-1} y - 1/2 log|K + s I| - n/2 log(2 pi). Requires n >= 1.
double log_marginal_likelihood(const GpDataset& data, const GpHyperparams& h);

/// Predictive posterior at x_star. n = 0 returns the prior (0, k(x*, x*)).
GpPrediction predictive(const GpDataset& data, const GpHyperparams& h, std::span<const double> x_star);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
  double width() const { return hi - lo; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct HyperparamBounds {
  Interval signal_variance{1e-3, 1e3};
  Interval inverse_lengthscale{1e-3, 1e3};
  Interval noise_variance{1e-6, 1e2};

  void validate() const;
};

struct FitOptions {
  HyperparamBounds bounds;
  int restarts = 4;
  std::uint64_t seed = 0;
  int max_iterations = 600;
};

/// Type-2 maximum likelihood over log-parameters using multi-start
/// Nelder-Mead. Never returns a point worse than any of its starting points.
/// Requires n >= 3.
GpHyperparams fit_hyperparams(const GpDataset& data, const FitOptions& options);

}  // namespace abcd
