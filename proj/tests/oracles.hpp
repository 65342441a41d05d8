#pragma once
// Independent reference implementations used as test oracles. Nothing here
// calls into the library's numerical code.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
// Kernel entries are rounded to double like any caller would see them; the
// algebra on top runs in extended precision.
using Real = long double;
using Mat = std::vector<std::vector<Real>>;

// Gauss-Jordan with partial pivoting. Also returns log|det|.
inline Mat inverse(Mat a, Real* log_abs_det = nullptr) {
  const std::size_t n = a.size();
  Mat inv(n, std::vector<Real>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0L;
  Real logdet = 0.0L;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    if (a[p][c] == 0.0) throw std::runtime_error("singular");
    std::swap(a[p], a[c]);
    std::swap(inv[p], inv[c]);
    const Real d = a[c][c];
    logdet += std::log(std::abs(d));
    for (std::size_t k = 0; k < n; ++k) {
      a[c][k] /= d;
      inv[c][k] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const Real f = a[r][c];
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < n; ++k) {
        a[r][k] -= f * a[c][k];
        inv[r][k] -= f * inv[c][k];
      }
    }
  }
  if (log_abs_det) *log_abs_det = logdet;
  return inv;
}

inline double se_kernel(const Vec& a, const Vec& b, double sv, const Vec& ls) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]) / (ls[i] * ls[i]);
  return sv * std::exp(-0.5 * s);
}

struct GpProblem {
  std::vector<Vec> x;
  Vec y;
  double mean = 0.0;
  double sv = 1.0;
  Vec ls;
  double jitter = 1e-8;
};

inline Mat gram(const GpProblem& p) {
  const std::size_t n = p.x.size();
  Mat k(n, std::vector<Real>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      k[i][j] = se_kernel(p.x[i], p.x[j], p.sv, p.ls) + (i == j ? p.jitter : 0.0);
  return k;
}

// 1-norm condition number of the Gram matrix.
inline double condition(const GpProblem& p) {
  const Mat k = gram(p);
  const Mat kinv = inverse(k);
  auto norm1 = [](const Mat& a) {
    Real best = 0.0L;
    for (std::size_t j = 0; j < a.size(); ++j) {
      Real col = 0.0L;
      for (const auto& row : a) col += std::abs(row[j]);
      best = std::max(best, col);
    }
    return best;
  };
  return static_cast<double>(norm1(k) * norm1(kinv));
}

// Posterior mean and variance straight from the textbook formulas.
inline std::pair<double, double> posterior(const GpProblem& p, const Vec& q) {
  const Mat kinv = inverse(gram(p));
  const std::size_t n = p.x.size();
  std::vector<Real> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = se_kernel(q, p.x[i], p.sv, p.ls);
  Real mean = p.mean, quad = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    Real row = 0.0L, rowy = 0.0L;
    for (std::size_t j = 0; j < n; ++j) {
      row += kinv[i][j] * k[j];
      rowy += kinv[i][j] * (p.y[j] - p.mean);
    }
    mean += k[i] * rowy;
    quad += k[i] * row;
  }
  return {static_cast<double>(mean), static_cast<double>(p.sv - quad)};
}

inline double log_marginal(const GpProblem& p) {
  Real logdet = 0.0L;
  const Mat kinv = inverse(gram(p), &logdet);
  const std::size_t n = p.x.size();
  Real quad = 0.0L;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) quad += (p.y[i] - p.mean) * kinv[i][j] * (p.y[j] - p.mean);
  return static_cast<double>(-0.5L * quad - 0.5L * logdet) -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

// Expected improvement by numerical integration of (x - f)+ against the
// normal density (composite Simpson over +-12 sigma).
inline double ei_quadrature(double mu, double sigma, double f) {
  if (sigma == 0.0) return std::max(mu - f, 0.0);
  const double lo = std::max(f, mu - 12.0 * sigma), hi = mu + 12.0 * sigma;
  if (hi <= lo) return 0.0;
  const int n = 20000;
  const double h = (hi - lo) / n;
  auto g = [&](double x) {
    const double z = (x - mu) / sigma;
    return (x - f) * std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
  };
  double s = g(lo) + g(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * g(lo + i * h);
  return s * h / 3.0;
}

inline double ei_closed(double mu, double var, double f) {
  const double s = std::sqrt(std::max(var, 0.0));
  if (s == 0.0) return std::max(mu - f, 0.0);
  const double z = (mu - f) / s;
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, (mu - f) * cdf + s * pdf);
}

}  // namespace oracle
