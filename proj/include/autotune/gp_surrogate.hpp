#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "autotune/search_space.hpp"

namespace autotune {

/// Squared-exponential kernel with one length scale per input dimension.
struct KernelParams {
  double signal_variance = 1.0;
  std::vector<double> length_scales;
  double noise_jitter = 1e-8;

  static KernelParams shared(double signal_variance, double length_scale,
                             std::size_t dim, double jitter = 1e-8) {
    return {signal_variance, std::vector<double>(dim, length_scale), jitter};
  }
};

inline constexpr double kMinJitter = 1e-10;
inline constexpr double kMaxJitter = 1e-2;

/// signal_variance * exp(-1/2 * sum(((a_i - b_i) / l_i)^2)).
double kernel_eval(std::span<const double> a, std::span<const double> b,
                   const KernelParams& k);

struct Posterior {
  double mean = 0.0;
  double variance = 0.0;
};

/// Exact GP regression with a constant prior mean. Immutable once fitted;
/// posterior queries may run concurrently.
class GPModel {
 public:
  /// Factorizes K + jitter*I, escalating the jitter by x10 up to
  /// kMaxJitter. Throws IllConditionedKernel when that still fails, and
  /// std::invalid_argument on malformed inputs.
  static GPModel fit(std::vector<EncodedPoint> inputs, std::vector<double> targets,
                     double prior_mean, KernelParams kernel);

  Posterior posterior(std::span<const double> x) const;

  /// Variance before clamping at zero; exposed for round-off diagnostics.
  double raw_variance(std::span<const double> x) const;

  double log_marginal_likelihood() const;

  std::size_t size() const noexcept { return inputs_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<EncodedPoint>& inputs() const noexcept { return inputs_; }
  const std::vector<double>& targets() const noexcept { return targets_; }
  double prior_mean() const noexcept { return prior_mean_; }
  /// Kernel parameters with the jitter that was actually used.
  const KernelParams& kernel() const noexcept { return kernel_; }
  const Eigen::MatrixXd& cholesky() const noexcept { return chol_; }
  const Eigen::VectorXd& alpha() const noexcept { return alpha_; }

 private:
  GPModel() = default;
  Eigen::VectorXd cross_covariance(std::span<const double> x) const;
  /// (K + jitter I)^-1 b via the factor, then two rounds of iterative
  /// refinement with residuals accumulated in long double.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;

  std::vector<EncodedPoint> inputs_;
  std::vector<double> targets_;
  std::size_t dim_ = 0;
  double prior_mean_ = 0.0;
  KernelParams kernel_;
  Eigen::MatrixXd gram_;  // K + jitter I
  Eigen::MatrixXd chol_;  // lower triangular
  Eigen::VectorXd alpha_;
};

/// Fits the kernel by maximizing the log marginal likelihood: a log-space
/// grid over signal variance {0.1, 1, 10} and a shared length scale (seven
/// values from 0.05 to 5), then three passes of coordinate-wise refinement
/// with the step halved after each pass. The prior mean is the sample mean
/// of `targets`. Deterministic.
KernelParams optimize_hyperparams(const std::vector<EncodedPoint>& inputs,
                                  const std::vector<double>& targets);

/// The grid evaluated before refinement, in evaluation order.
std::vector<KernelParams> hyperparam_grid(std::size_t dim);

double sample_mean(const std::vector<double>& values);

}  // namespace autotune
