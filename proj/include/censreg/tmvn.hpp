#pragma once

// Sampling from N(mean, cov) restricted to the orthant x <= upper.
//
// Exact draws come from accept-reject with a separation-of-variables proposal
// whose exponential tilting is chosen by solving a minimax saddle-point
// system. Above a dimension cap the sampler switches to a short sequential
// Gibbs pass, and flags its output as approximate.

#include "censreg/linalg.hpp"
#include "censreg/normal.hpp"
#include "censreg/rng.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace censreg::tmvn {

struct Options {
  Index exact_dim_cap = 50;
  int fallback_sweeps = 10;
  int max_newton_iter = 200;
  double grad_tol = 1e-8;
  int max_proposal_rounds = 10000;
};

struct Problem {
  Vector mean;
  Matrix cov;
  Vector upper;

  Index dim() const { return mean.size(); }

  void validate() const {
    const Index d = mean.size();
    if (d < 1) throw std::invalid_argument("truncated normal problem needs dimension >= 1");
    if (cov.rows() != d || cov.cols() != d || upper.size() != d)
      throw std::invalid_argument("truncated normal problem has inconsistent dimensions");
    for (Index k = 0; k < d; ++k)
      if (std::isnan(upper(k)) || upper(k) == -std::numeric_limits<double>::infinity())
        throw std::invalid_argument("truncation bound must be > -inf");
    if (!mean.allFinite()) throw std::invalid_argument("truncated normal mean must be finite");
  }
};

class AcceptanceError : public std::runtime_error {
 public:
  explicit AcceptanceError(int rounds)
      : std::runtime_error("truncated normal rejection sampler accepted too few proposals after " +
                           std::to_string(rounds) + " rounds; use the Gibbs fallback (lower exact_dim_cap)") {}
};

class TiltingError : public std::runtime_error {
 public:
  TiltingError(Vector last_iterate, double residual)
      : std::runtime_error("tilting optimizer did not converge (residual norm " + std::to_string(residual) + ")"),
        last_iterate_(std::move(last_iterate)),
        residual_(residual) {}

  const Vector& last_iterate() const noexcept { return last_iterate_; }
  double residual_norm() const noexcept { return residual_; }

 private:
  Vector last_iterate_;
  double residual_;
};

/// Standard normal conditioned on z <= upper.
inline double sample_std_upper(Rng& rng, double upper) {
  if (upper == std::numeric_limits<double>::infinity()) return std_normal(rng);
  if (upper >= -6.0) {
    const double p = open_uniform(rng) * normal::cdf(upper);
    return std::min(normal::quantile(p), upper);
  }
  // Tail: exponential proposal on [a, inf) for a = -upper, then reflect.
  const double a = -upper;
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(open_uniform(rng)) / lambda;
    const double g = z - lambda;
    if (std::log(open_uniform(rng)) <= -0.5 * g * g) return -z;
  }
}

/// Draw from N(mean, sd^2) conditioned on x <= upper.
inline double sample_truncnorm_1d(Rng& rng, double mean, double sd, double upper) {
  const double z = sample_std_upper(rng, (upper - mean) / sd);
  return std::min(mean + sd * z, upper);
}

namespace detail {

/// Permuted Cholesky factor, rescaled to unit diagonal and with the diagonal
/// removed, as used by the separation-of-variables proposal.
struct Factor {
  Matrix chol;   // unscaled lower Cholesky factor of the permuted covariance
  Matrix L;      // chol rows divided by their diagonal, minus the identity
  Vector upper;  // permuted bounds divided by the diagonal
  IndexList perm;
};

/// Greedy variable ordering: at each step pick the remaining coordinate with
/// the smallest conditional probability of satisfying its bound.
inline Factor permuted_cholesky(Matrix sig, Vector u) {
  const Index d = sig.rows();
  Factor f;
  f.perm.resize(static_cast<std::size_t>(d));
  for (Index k = 0; k < d; ++k) f.perm[static_cast<std::size_t>(k)] = k;
  Matrix L = Matrix::Zero(d, d);
  Vector z = Vector::Zero(d);
  constexpr double eps = std::numeric_limits<double>::epsilon();

  for (Index j = 0; j < d; ++j) {
    Index best = j;
    double best_pr = std::numeric_limits<double>::infinity();
    for (Index i = j; i < d; ++i) {
      double s = sig(i, i) - L.row(i).head(j).squaredNorm();
      s = std::sqrt(s < 0.0 ? eps : s);
      const double tu = (u(i) - L.row(i).head(j).dot(z.head(j))) / s;
      const double pr = normal::log_cdf(tu);
      if (pr < best_pr) {
        best_pr = pr;
        best = i;
      }
    }
    if (best != j) {
      sig.row(j).swap(sig.row(best));
      sig.col(j).swap(sig.col(best));
      L.row(j).swap(L.row(best));
      std::swap(u(j), u(best));
      std::swap(f.perm[static_cast<std::size_t>(j)], f.perm[static_cast<std::size_t>(best)]);
    }
    double s = sig(j, j) - L.row(j).head(j).squaredNorm();
    if (s < -0.01) throw FactorizationError("truncated normal covariance");
    s = s < 0.0 ? eps : s;
    L(j, j) = std::sqrt(s);
    if (j + 1 < d) {
      const Index rest = d - j - 1;
      L.col(j).tail(rest) =
          (sig.col(j).tail(rest) - L.block(j + 1, 0, rest, j) * L.row(j).head(j).transpose()) / L(j, j);
    }
    const double tu = (u(j) - L.row(j).head(j).dot(z.head(j))) / L(j, j);
    z(j) = -normal::pdf_over_cdf(tu);
  }

  f.chol = L;
  const Vector diag = L.diagonal();
  f.L = diag.cwiseInverse().asDiagonal() * L;
  f.L.diagonal().setZero();
  f.upper = u.cwiseQuotient(diag);
  return f;
}

/// psi(x; mu) with x and mu of full length d (last entries are zero).
inline double psi(const Factor& f, const Vector& x, const Vector& mu) {
  const Vector ut = f.upper - mu - f.L * x;
  double p = 0.0;
  for (Index k = 0; k < ut.size(); ++k) p += normal::log_cdf(ut(k)) + 0.5 * mu(k) * mu(k) - x(k) * mu(k);
  return p;
}

inline void split(const Vector& y, Index d, Vector& x, Vector& mu) {
  x = Vector::Zero(d);
  mu = Vector::Zero(d);
  x.head(d - 1) = y.head(d - 1);
  mu.head(d - 1) = y.tail(d - 1);
}

inline Vector gradient(const Factor& f, const Vector& y, Matrix* jac) {
  const Index d = f.L.rows();
  Vector x, mu;
  split(y, d, x, mu);
  Vector ut = f.upper - mu - f.L * x;
  Vector pu(d);
  for (Index k = 0; k < d; ++k) pu(k) = normal::pdf_over_cdf(ut(k));
  const Vector P = -pu;

  Vector g(2 * (d - 1));
  g.head(d - 1) = -mu.head(d - 1) + (f.L.transpose() * P).head(d - 1);
  g.tail(d - 1) = (mu - x + P).head(d - 1);

  if (jac) {
    for (Index k = 0; k < d; ++k)
      if (std::isinf(ut(k))) ut(k) = 0.0;
    const Vector dP = -P.cwiseProduct(P) - ut.cwiseProduct(pu);
    const Matrix DL = dP.asDiagonal() * f.L;
    const Matrix mx = -Matrix::Identity(d, d) + DL;
    const Matrix xx = f.L.transpose() * DL;
    const Index m = d - 1;
    jac->resize(2 * m, 2 * m);
    jac->topLeftCorner(m, m) = xx.topLeftCorner(m, m);
    jac->topRightCorner(m, m) = mx.topLeftCorner(m, m).transpose();
    jac->bottomLeftCorner(m, m) = mx.topLeftCorner(m, m);
    jac->bottomRightCorner(m, m) = (Vector::Ones(m) + dP.head(m)).asDiagonal();
  }
  return g;
}

struct Solution {
  Factor factor;
  Vector x;   // length d, permuted order
  Vector mu;  // length d, permuted order
  double psi_star = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

inline Solution solve(const Problem& prob, const Options& opts) {
  Solution s;
  s.factor = permuted_cholesky(prob.cov, prob.upper - prob.mean);
  const Index d = prob.dim();
  if (d == 1) {
    s.x = Vector::Zero(1);
    s.mu = Vector::Zero(1);
    s.psi_star = psi(s.factor, s.x, s.mu);
    return s;
  }
  Vector y = Vector::Zero(2 * (d - 1));
  Matrix J;
  Vector g = gradient(s.factor, y, &J);
  double gnorm = g.norm();
  int it = 0;
  while (gnorm >= opts.grad_tol) {
    if (it >= opts.max_newton_iter || !std::isfinite(gnorm)) throw TiltingError(y, gnorm);
    const Vector step = J.fullPivLu().solve(-g);
    if (!step.allFinite()) throw TiltingError(y, gnorm);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 50; ++ls, t *= 0.5) {
      const Vector trial = y + t * step;
      const Vector gt = gradient(s.factor, trial, nullptr);
      const double nt = gt.norm();
      if (std::isfinite(nt) && nt <= (1.0 - 1e-4 * t) * gnorm) {
        y = trial;
        moved = true;
        break;
      }
    }
    ++it;
    if (!moved) throw TiltingError(y, gnorm);
    g = gradient(s.factor, y, &J);
    gnorm = g.norm();
  }
  split(y, d, s.x, s.mu);
  s.psi_star = psi(s.factor, s.x, s.mu);
  s.iterations = it;
  s.residual = gnorm;
  return s;
}

/// One proposal from the tilted sequential sampler; returns its log weight.
inline double propose(Rng& rng, const Solution& s, Vector& z) {
  const auto& f = s.factor;
  const Index d = f.L.rows();
  z.resize(d);
  double logp = 0.0;
  for (Index k = 0; k < d; ++k) {
    const double col = k > 0 ? f.L.row(k).head(k).dot(z.head(k)) : 0.0;
    const double tu = f.upper(k) - s.mu(k) - col;
    z(k) = s.mu(k) + sample_std_upper(rng, tu);
    logp += normal::log_cdf(tu) + 0.5 * s.mu(k) * s.mu(k) - s.mu(k) * z(k);
  }
  return logp;
}

inline Vector to_native(const Problem& prob, const Solution& s, const Vector& z) {
  const Vector xp = s.factor.chol * z;
  Vector out(prob.dim());
  for (Index k = 0; k < prob.dim(); ++k) {
    const Index j = s.factor.perm[static_cast<std::size_t>(k)];
    out(j) = std::min(prob.mean(j) + xp(k), prob.upper(j));
  }
  return out;
}

}  // namespace detail

/// Minimax tilting of the separation-of-variables proposal.
struct Tilting {
  Vector shift;  // exponential tilting vector, native order
  Vector point;  // saddle point location, native order
  double log_psi = 0.0;
  double log_acceptance = 0.0;
  int iterations = 0;
  double residual_norm = 0.0;
  IndexList perm;
};

/// Solve the saddle-point system and estimate the acceptance probability.
/// The estimate uses a fixed internal seed, so the result depends only on
/// the problem.
inline Tilting tilt_optimize(const Problem& prob, const Options& opts = {}) {
  prob.validate();
  const auto sol = detail::solve(prob, opts);
  Tilting t;
  const Index d = prob.dim();
  t.shift.resize(d);
  t.point.resize(d);
  for (Index k = 0; k < d; ++k) {
    const Index j = sol.factor.perm[static_cast<std::size_t>(k)];
    t.shift(j) = sol.mu(k);
    t.point(j) = sol.x(k);
  }
  t.log_psi = sol.psi_star;
  t.iterations = sol.iterations;
  t.residual_norm = sol.residual;
  t.perm = sol.factor.perm;
  if (d == 1) {
    t.log_acceptance = 0.0;
    return t;
  }
  constexpr int kDraws = 2000;
  Rng rng(0x7a11c0ffeeULL);
  Vector z;
  double m = -std::numeric_limits<double>::infinity();
  std::vector<double> lw(kDraws);
  for (int i = 0; i < kDraws; ++i) {
    lw[static_cast<std::size_t>(i)] = detail::propose(rng, sol, z) - sol.psi_star;
    m = std::max(m, lw[static_cast<std::size_t>(i)]);
  }
  double acc = 0.0;
  for (double v : lw) acc += std::exp(v - m);
  t.log_acceptance = m + std::log(acc / kDraws);
  return t;
}

/// Sequential coordinate-wise Gibbs sweeps; each returned row follows
/// `sweeps` further sweeps of the chain started at `start`.
inline Matrix sample_gibbs(Rng& rng, const Problem& prob, Index n_draws, int sweeps, const Vector& start) {
  const Index d = prob.dim();
  const Matrix prec = spd_inverse(prob.cov, "truncated normal covariance");
  Vector x = start.cwiseMin(prob.upper);
  Matrix out(n_draws, d);
  for (Index s = 0; s < n_draws; ++s) {
    for (int sw = 0; sw < sweeps; ++sw) {
      for (Index k = 0; k < d; ++k) {
        const double qkk = prec(k, k);
        const double dot = prec.row(k).dot(x - prob.mean) - qkk * (x(k) - prob.mean(k));
        const double cm = prob.mean(k) - dot / qkk;
        x(k) = sample_truncnorm_1d(rng, cm, std::sqrt(1.0 / qkk), prob.upper(k));
      }
    }
    out.row(s) = x.transpose();
  }
  return out;
}

struct Sample {
  Matrix draws;  // n_draws x d
  bool approximate = false;
};

/// Draw `n_draws` points from the truncated normal. `warm_start`, when given,
/// seeds the Gibbs fallback used above `exact_dim_cap`.
inline Sample sample_tmvn(Rng& rng, const Problem& prob, Index n_draws, const Options& opts = {},
                          const Vector* warm_start = nullptr) {
  prob.validate();
  if (n_draws < 1) throw std::invalid_argument("n_draws must be >= 1");
  const Index d = prob.dim();
  Sample out;
  if (d == 1) {
    const double sd = std::sqrt(prob.cov(0, 0));
    if (!(sd > 0.0)) throw FactorizationError("truncated normal covariance");
    out.draws.resize(n_draws, 1);
    for (Index s = 0; s < n_draws; ++s) out.draws(s, 0) = sample_truncnorm_1d(rng, prob.mean(0), sd, prob.upper(0));
    return out;
  }
  if (d > opts.exact_dim_cap) {
    const Vector start = warm_start ? *warm_start : prob.mean;
    out.draws = sample_gibbs(rng, prob, n_draws, opts.fallback_sweeps, start);
    out.approximate = true;
    return out;
  }
  const auto sol = detail::solve(prob, opts);
  out.draws.resize(n_draws, d);
  Vector z;
  Index accepted = 0;
  int rounds = 0;
  while (accepted < n_draws) {
    if (rounds >= opts.max_proposal_rounds) throw AcceptanceError(rounds);
    const Index want = n_draws - accepted;
    for (Index i = 0; i < want; ++i) {
      const double logp = detail::propose(rng, sol, z);
      if (std::log(open_uniform(rng)) < logp - sol.psi_star)
        out.draws.row(accepted++) = detail::to_native(prob, sol, z).transpose();
    }
    ++rounds;
  }
  return out;
}

}  // namespace censreg::tmvn
