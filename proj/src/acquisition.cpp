#include "autotune/acquisition.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "autotune/errors.hpp"

namespace autotune {
namespace {

constexpr int kResampleAttempts = 100;
constexpr std::uint64_t kEnumerationLimit = 1'000'000;

}  // namespace

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double expected_improvement(const Posterior& p, double f_plus) {
  const double delta = p.mean - f_plus;
  const double sigma = std::sqrt(std::max(0.0, p.variance));
  if (sigma <= 0.0) return std::max(delta, 0.0);
  const double z = delta / sigma;
  return std::max(0.0, delta * normal_cdf(z) + sigma * normal_pdf(z));
}

MonteCarloEstimate ei_monte_carlo(const Posterior& p, double f_plus,
                                  std::size_t n_samples, std::mt19937_64& rng) {
  if (n_samples < 1000)
    throw std::invalid_argument("ei_monte_carlo: need at least 1000 samples");
  const double sigma = std::sqrt(std::max(0.0, p.variance));
  if (sigma <= 0.0) return {std::max(p.mean - f_plus, 0.0), 0.0};

  std::normal_distribution<double> dist(p.mean, sigma);
  // Welford accumulation keeps the variance estimate stable at 1e6 samples.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 1; i <= n_samples; ++i) {
    const double g = std::max(dist(rng) - f_plus, 0.0);
    const double d = g - mean;
    mean += d / static_cast<double>(i);
    m2 += d * (g - mean);
  }
  const double n = static_cast<double>(n_samples);
  const double var = m2 / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

Configuration sample_unevaluated(const SearchSpace& space,
                                 const std::set<Configuration>& evaluated,
                                 std::mt19937_64& rng) {
  const auto card = space.cardinality();
  if (card && evaluated.size() >= *card) throw SearchSpaceExhausted();

  for (int attempt = 0; attempt < kResampleAttempts; ++attempt) {
    Configuration c = space.sample_uniform(rng);
    if (!evaluated.contains(c)) return c;
  }
  if (card && *card <= kEnumerationLimit) {
    std::vector<Configuration> remaining;
    for (auto& c : space.enumerate(kEnumerationLimit))
      if (!evaluated.contains(c)) remaining.push_back(std::move(c));
    if (remaining.empty()) throw SearchSpaceExhausted();
    std::uniform_int_distribution<std::size_t> pick(0, remaining.size() - 1);
    return remaining[pick(rng)];
  }
  throw SearchSpaceExhausted();
}

Configuration propose_next(const GPModel& model, const SearchSpace& space,
                           const Incumbent& incumbent,
                           const std::set<Configuration>& evaluated,
                           std::mt19937_64& rng, std::size_t pool_size) {
  if (pool_size == 0) throw std::invalid_argument("propose_next: pool_size must be >= 1");

  const auto card = space.cardinality();
  if (card && evaluated.size() >= *card) throw SearchSpaceExhausted();

  std::vector<Configuration> candidates;
  if (card && *card <= pool_size) {
    for (auto& c : space.enumerate(pool_size))
      if (!evaluated.contains(c)) candidates.push_back(std::move(c));
  } else {
    std::set<Configuration> seen;
    candidates.reserve(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) {
      Configuration c = space.sample_uniform(rng);
      if (evaluated.contains(c) || !seen.insert(c).second) continue;
      candidates.push_back(std::move(c));
    }
    if (candidates.empty()) return sample_unevaluated(space, evaluated, rng);
  }
  if (candidates.empty()) throw SearchSpaceExhausted();

  std::size_t best = 0;
  double best_ei = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double ei =
        expected_improvement(model.posterior(space.encode(candidates[i])), incumbent.value);
    if (ei > best_ei) {
      best_ei = ei;
      best = i;
    }
  }
  return candidates[best];
}

}  // namespace autotune
