#include "autotune/gp_surrogate.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "autotune/errors.hpp"

namespace autotune {

double kernel_eval(std::span<const double> a, std::span<const double> b,
                   const KernelParams& k) {
  if (a.size() != b.size() || a.size() != k.length_scales.size()) {
    throw std::invalid_argument("kernel_eval: length mismatch (" +
                                std::to_string(a.size()) + ", " +
                                std::to_string(b.size()) + ", " +
                                std::to_string(k.length_scales.size()) + ")");
  }
  double r2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) / k.length_scales[i];
    r2 += d * d;
  }
  return k.signal_variance * std::exp(-0.5 * r2);
}

GPModel GPModel::fit(std::vector<EncodedPoint> inputs, std::vector<double> targets,
                     double prior_mean, KernelParams kernel) {
  if (inputs.empty() || inputs.size() != targets.size())
    throw std::invalid_argument("fit: need |X| = |y| >= 1");
  const std::size_t d = inputs.front().size();
  for (const auto& x : inputs)
    if (x.size() != d) throw std::invalid_argument("fit: inconsistent input lengths");
  if (kernel.length_scales.size() != d)
    throw std::invalid_argument("fit: length_scales size differs from input dimension");
  if (!(kernel.signal_variance > 0.0) || !(kernel.noise_jitter >= kMinJitter))
    throw std::invalid_argument("fit: kernel parameters must be positive");
  for (double l : kernel.length_scales)
    if (!(l > 0.0)) throw std::invalid_argument("fit: length scales must be positive");

  const auto n = static_cast<Eigen::Index>(inputs.size());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      K(i, j) = kernel_eval(inputs[i], inputs[j], kernel);
      K(j, i) = K(i, j);
    }
  }

  GPModel model;
  double jitter = kernel.noise_jitter;
  for (;;) {
    Eigen::MatrixXd A = K;
    A.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().allFinite()) {
      model.chol_ = llt.matrixL();
      model.gram_ = std::move(A);
      break;
    }
    if (jitter * 10.0 > kMaxJitter * (1.0 + 1e-9)) {
      std::string detail;
      for (Eigen::Index i = 0; i < n && detail.empty(); ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
          if (inputs[i] == inputs[j]) {
            detail = "; duplicate inputs at " + std::to_string(i) + " and " +
                     std::to_string(j);
            break;
          }
      throw IllConditionedKernel("ill-conditioned kernel at jitter " +
                                 std::to_string(jitter) + detail);
    }
    jitter *= 10.0;
  }
  kernel.noise_jitter = jitter;

  Eigen::VectorXd centered(n);
  for (Eigen::Index i = 0; i < n; ++i) centered(i) = targets[i] - prior_mean;
  model.alpha_ = model.solve(centered);

  model.inputs_ = std::move(inputs);
  model.targets_ = std::move(targets);
  model.dim_ = d;
  model.prior_mean_ = prior_mean;
  model.kernel_ = std::move(kernel);
  return model;
}

Eigen::VectorXd GPModel::cross_covariance(std::span<const double> x) const {
  if (x.size() != dim_) {
    throw std::invalid_argument("posterior: query has length " +
                                std::to_string(x.size()) + ", expected " +
                                std::to_string(dim_));
  }
  Eigen::VectorXd k(static_cast<Eigen::Index>(inputs_.size()));
  for (std::size_t i = 0; i < inputs_.size(); ++i)
    k(static_cast<Eigen::Index>(i)) = kernel_eval(x, inputs_[i], kernel_);
  return k;
}

Eigen::VectorXd GPModel::solve(const Eigen::VectorXd& b) const {
  auto base = [&](const Eigen::VectorXd& rhs) {
    const Eigen::VectorXd half = chol_.triangularView<Eigen::Lower>().solve(rhs);
    return Eigen::VectorXd(chol_.transpose().triangularView<Eigen::Upper>().solve(half));
  };
  Eigen::VectorXd x = base(b);
  const Eigen::Index n = b.size();
  Eigen::VectorXd r(n);
  for (int round = 0; round < 2; ++round) {
    for (Eigen::Index i = 0; i < n; ++i) {
      long double acc = b(i);
      for (Eigen::Index j = 0; j < n; ++j)
        acc -= static_cast<long double>(gram_(i, j)) * x(j);
      r(i) = static_cast<double>(acc);
    }
    x += base(r);
  }
  return x;
}

double GPModel::raw_variance(std::span<const double> x) const {
  const Eigen::VectorXd k = cross_covariance(x);
  return kernel_.signal_variance - k.dot(solve(k));
}

Posterior GPModel::posterior(std::span<const double> x) const {
  const Eigen::VectorXd k = cross_covariance(x);
  Posterior p;
  p.mean = prior_mean_ + k.dot(alpha_);
  p.variance = std::max(0.0, kernel_.signal_variance - k.dot(solve(k)));
  return p;
}

double GPModel::log_marginal_likelihood() const {
  const auto n = static_cast<double>(inputs_.size());
  double fit_term = 0.0;
  for (std::size_t i = 0; i < targets_.size(); ++i)
    fit_term += (targets_[i] - prior_mean_) * alpha_(static_cast<Eigen::Index>(i));
  const double log_det_half = chol_.diagonal().array().log().sum();
  return -0.5 * fit_term - log_det_half - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

double sample_mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

std::vector<KernelParams> hyperparam_grid(std::size_t dim) {
  std::vector<KernelParams> grid;
  for (double sv : {0.1, 1.0, 10.0}) {
    for (int i = 0; i < 7; ++i) {
      const double l = 0.05 * std::pow(100.0, i / 6.0);
      grid.push_back(KernelParams::shared(sv, l, dim));
    }
  }
  return grid;
}

namespace {

double lml_or_neg_inf(const std::vector<EncodedPoint>& inputs,
                      const std::vector<double>& targets, double mean,
                      const KernelParams& k) {
  try {
    const double v = GPModel::fit(inputs, targets, mean, k).log_marginal_likelihood();
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  } catch (const IllConditionedKernel&) {
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace

KernelParams optimize_hyperparams(const std::vector<EncodedPoint>& inputs,
                                  const std::vector<double>& targets) {
  if (inputs.size() < 2 || inputs.size() != targets.size())
    throw std::invalid_argument("optimize_hyperparams: need at least two observations");
  const std::size_t dim = inputs.front().size();
  const double mean = sample_mean(targets);

  double best_lml = -std::numeric_limits<double>::infinity();
  double log_sv = 0.0, log_l = 0.0;
  bool found = false;
  for (const auto& k : hyperparam_grid(dim)) {
    const double v = lml_or_neg_inf(inputs, targets, mean, k);
    if (!found || v > best_lml) {
      best_lml = v;
      log_sv = std::log(k.signal_variance);
      log_l = std::log(k.length_scales.front());
      found = true;
    }
  }

  auto evaluate = [&](double lsv, double ll) {
    return lml_or_neg_inf(inputs, targets, mean,
                          KernelParams::shared(std::exp(lsv), std::exp(ll), dim));
  };

  double step_sv = std::log(10.0);
  double step_l = std::log(100.0) / 6.0;
  for (int pass = 0; pass < 3; ++pass) {
    for (int coord = 0; coord < 2; ++coord) {
      double& x = coord == 0 ? log_sv : log_l;
      const double step = coord == 0 ? step_sv : step_l;
      const double origin = x;
      double best_x = origin;
      for (double cand : {origin + step, origin - step}) {
        x = cand;
        const double v = evaluate(log_sv, log_l);
        if (v > best_lml) {
          best_lml = v;
          best_x = cand;
        }
      }
      x = best_x;
    }
    step_sv *= 0.5;
    step_l *= 0.5;
  }
  return KernelParams::shared(std::exp(log_sv), std::exp(log_l), dim);
}

}  // namespace autotune
