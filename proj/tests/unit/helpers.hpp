#pragma once

#include "censreg/linalg.hpp"
#include "censreg/model.hpp"
#include "censreg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace testing_util {

using censreg::Index;
using censreg::Matrix;
using censreg::Vector;

inline Matrix random_spd(censreg::Rng& rng, Index p, double ridge = 0.5) {
  Matrix a(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j) a(i, j) = censreg::std_normal(rng);
  Matrix s = a * a.transpose() / static_cast<double>(p);
  s.diagonal().array() += ridge;
  return s;
}

inline Vector random_vector(censreg::Rng& rng, Index p, double scale = 1.0) {
  Vector v(p);
  for (Index i = 0; i < p; ++i) v(i) = scale * censreg::std_normal(rng);
  return v;
}

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

/// Asymptotic two-sided p-value of the two-sample KS statistic.
inline double ks_pvalue(double d, std::size_t na, std::size_t nb) {
  const double ne = static_cast<double>(na) * static_cast<double>(nb) / static_cast<double>(na + nb);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::fabs(term) < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

/// Draws from N(mean, cov) restricted to x <= upper by plain rejection.
inline Matrix rejection_oracle(censreg::Rng& rng, const Vector& mean, const Matrix& cov, const Vector& upper,
                               Index n) {
  const Matrix l = cov.llt().matrixL();
  Matrix out(n, mean.size());
  Vector z(mean.size());
  Index k = 0;
  while (k < n) {
    for (Index j = 0; j < z.size(); ++j) z(j) = censreg::std_normal(rng);
    const Vector x = mean + l * z;
    if ((x.array() <= upper.array()).all()) out.row(k++) = x.transpose();
  }
  return out;
}

inline std::vector<double> column(const Matrix& m, Index j) {
  return std::vector<double>(m.col(j).data(), m.col(j).data() + m.rows());
}

}  // namespace testing_util
