#pragma once

#include <cstddef>
#include <random>
#include <set>

#include "autotune/gp_surrogate.hpp"
#include "autotune/search_space.hpp"

namespace autotune {

/// Best configuration observed so far and its objective value f+.
struct Incumbent {
  Configuration config;
  double value = 0.0;
};

inline constexpr std::size_t kDefaultPoolSize = 2048;

double normal_pdf(double z);
double normal_cdf(double z);

/// Closed-form expected improvement for maximization:
///   (mu - f+) Phi(z) + sigma phi(z),  z = (mu - f+) / sigma
/// and max(mu - f+, 0) when sigma = 0. Never negative.
double expected_improvement(const Posterior& p, double f_plus);

struct MonteCarloEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Sample mean of max(X - f+, 0), X ~ N(mean, variance). Requires at least
/// 1000 samples.
MonteCarloEstimate ei_monte_carlo(const Posterior& p, double f_plus,
                                  std::size_t n_samples, std::mt19937_64& rng);

/// Uniform draw that is not in `evaluated`. Resamples up to 100 times, then
/// picks uniformly among the unevaluated remainder when the space is small
/// enough to enumerate. Throws SearchSpaceExhausted when nothing is left.
Configuration sample_unevaluated(const SearchSpace& space,
                                 const std::set<Configuration>& evaluated,
                                 std::mt19937_64& rng);

/// Next point to evaluate: EI argmax over every unevaluated configuration
/// when the space has at most `pool_size` of them, otherwise over
/// `pool_size` uniform draws with evaluated ones removed. Ties go to the
/// earliest candidate.
Configuration propose_next(const GPModel& model, const SearchSpace& space,
                           const Incumbent& incumbent,
                           const std::set<Configuration>& evaluated,
                           std::mt19937_64& rng,
                           std::size_t pool_size = kDefaultPoolSize);

}  // namespace autotune
