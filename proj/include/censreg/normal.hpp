#pragma once

// Scalar Gaussian helpers that stay accurate far into the lower tail.

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <limits>
#include <numbers>

namespace censreg::normal {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

inline double log_pdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

inline double log_pdf(double x, double mean, double var) {
  const double z = x - mean;
  return -0.5 * z * z / var - 0.5 * std::log(var) - kLogSqrt2Pi;
}

inline double cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Mills ratio Q(t) / phi(t) for t > 0 by Lentz's continued fraction.
inline double mills_ratio(double t) {
  constexpr double tiny = 1e-300;
  double f = t;
  double c = t;
  double d = 0.0;
  for (int k = 1; k < 500; ++k) {
    const double ak = static_cast<double>(k);
    d = t + ak * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = t + ak / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / f;
}

/// log Phi(x), accurate for x down to the limits of double range.
inline double log_cdf(double x) {
  if (x == std::numeric_limits<double>::infinity()) return 0.0;
  if (x == -std::numeric_limits<double>::infinity()) return -std::numeric_limits<double>::infinity();
  if (x > 5.0) return std::log1p(-0.5 * std::erfc(x / std::numbers::sqrt2));
  if (x > -30.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  const double t = -x;
  return log_pdf(t) + std::log(mills_ratio(t));
}

/// phi(x) / Phi(x), the inverse Mills ratio of the lower tail.
inline double pdf_over_cdf(double x) {
  if (x == std::numeric_limits<double>::infinity()) return 0.0;
  return std::exp(log_pdf(x) - log_cdf(x));
}

/// Phi^{-1}(p) for p in (0, 1).
inline double quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

}  // namespace censreg::normal
