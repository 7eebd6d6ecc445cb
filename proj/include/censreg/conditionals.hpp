#pragma once

// Full conditional distributions for each Gibbs block and the draws from
// them.

#include "censreg/linalg.hpp"
#include "censreg/model.hpp"
#include "censreg/rng.hpp"
#include "censreg/tmvn.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

namespace censreg {

/// Mean and covariance of (beta0, beta_1..beta_p).
struct GaussianBlock {
  Vector mean;
  Matrix cov;
};

struct InverseGamma {
  double shape = 0.0;
  double rate = 0.0;
};

/// Omega | . ~ IW(a_tilde, dof);  vec Gamma | Omega ~ N(vec gamma_tilde, Omega (x) coef_precision^{-1}).
struct GammaOmegaPosterior {
  Matrix a_tilde;
  double dof = 0.0;
  Matrix gamma_tilde;
  Matrix coef_precision;
};

/// The truncated normal that the missing block of one observation is drawn
/// from; `indices` are the censored columns in native order.
struct MissingConditional {
  Vector mean;
  Matrix cov;
  Vector upper;
  IndexList indices;
};

/// One observation's covariates as seen by the missing-value update.
struct CovariateRow {
  Vector x;  // censored entries hold any placeholder
  Eigen::Array<bool, Eigen::Dynamic, 1> mask;
  Vector limits;
  Vector w;
  std::optional<double> y;

  IndexList censored() const {
    IndexList out;
    for (Index j = 0; j < mask.size(); ++j)
      if (mask(j)) out.push_back(j);
    return out;
  }
  IndexList observed() const {
    IndexList out;
    for (Index j = 0; j < mask.size(); ++j)
      if (!mask(j)) out.push_back(j);
    return out;
  }
};

inline CovariateRow row_of(const CensoredDataset& d, Index i, bool with_y = true) {
  CovariateRow r;
  r.x = d.x.row(i).transpose();
  r.mask = d.mask.row(i).transpose().array();
  r.limits = d.limits.row(i).transpose();
  r.w = d.w_row(i);
  if (with_y && d.y) r.y = (*d.y)(i);
  return r;
}

// --- regression coefficients -------------------------------------------------

inline GaussianBlock beta_full_conditional(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Vector>& y,
                                           double sigma2, const PriorHyper& prior) {
  const Index n = x.rows();
  const Index p = x.cols();
  Matrix design(n, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = x;
  Matrix prec = design.transpose() * design / sigma2;
  prec(0, 0) += 1.0 / (prior.tau_beta0 * prior.tau_beta0);
  prec.diagonal().tail(p).array() += 1.0 / (prior.tau_beta * prior.tau_beta);
  const auto llt = robust_cholesky(prec, "beta precision");
  GaussianBlock out;
  out.cov = llt.solve(Matrix::Identity(p + 1, p + 1));
  out.cov = symmetrize(out.cov);
  out.mean = llt.solve(design.transpose() * y / sigma2);
  return out;
}

inline GaussianBlock beta_full_conditional(const CensoredDataset& d, const ChainState& state,
                                           const PriorHyper& prior) {
  if (!d.y) throw std::invalid_argument("beta update needs a response");
  return beta_full_conditional(state.imputed, *d.y, state.params.sigma2, prior);
}

// --- error variance ----------------------------------------------------------

inline InverseGamma sigma2_full_conditional(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Vector>& y,
                                            double beta0, const Vector& beta, const PriorHyper& prior) {
  const Vector resid = (y - x * beta).array() - beta0;
  return {static_cast<double>(x.rows()) / 2.0 + prior.a, resid.squaredNorm() / 2.0 + prior.b};
}

inline InverseGamma sigma2_full_conditional(const CensoredDataset& d, const ChainState& state,
                                            const PriorHyper& prior) {
  if (!d.y) throw std::invalid_argument("sigma2 update needs a response");
  return sigma2_full_conditional(state.imputed, *d.y, state.params.beta0, state.params.beta, prior);
}

// --- covariate regression ----------------------------------------------------

inline GammaOmegaPosterior gamma_omega_full_conditional(const Eigen::Ref<const Matrix>& x,
                                                        const Eigen::Ref<const Matrix>& w, const PriorHyper& prior) {
  const Index p = x.cols();
  GammaOmegaPosterior out;
  out.dof = static_cast<double>(x.rows()) + prior.kappa;
  if (!(out.dof > static_cast<double>(p) - 1.0))
    throw ConfigError("inverse-Wishart degrees of freedom must exceed p - 1");
  const double inv_tau2 = 1.0 / (prior.tau_gamma * prior.tau_gamma);
  out.coef_precision = w.transpose() * w;
  out.coef_precision.diagonal().array() += inv_tau2;
  const auto llt = robust_cholesky(out.coef_precision, "auxiliary coefficient precision");
  out.gamma_tilde = llt.solve(w.transpose() * x);
  const Matrix resid = x - w * out.gamma_tilde;
  out.a_tilde = prior.A + inv_tau2 * out.gamma_tilde.transpose() * out.gamma_tilde + resid.transpose() * resid;
  out.a_tilde = symmetrize(out.a_tilde);
  return out;
}

inline GammaOmegaPosterior gamma_omega_full_conditional(const CensoredDataset& d, const ChainState& state,
                                                        const PriorHyper& prior) {
  return gamma_omega_full_conditional(state.imputed, d.design_w(), prior);
}

// --- missing covariates ------------------------------------------------------

/// Gaussian of x_m | x_o, w under the covariate regression only.
inline GaussianConditional covariate_conditional(const CovariateRow& row, const ModelParams& params) {
  const IndexList obs = row.observed();
  const Vector xhat = params.covariate_mean(row.w);
  return partition_gaussian(xhat, params.omega, obs, gather(row.x, obs));
}

/// Full conditional of the censored block of one observation. When the row
/// carries no response the likelihood term is dropped.
inline MissingConditional missing_full_conditional(const CovariateRow& row, const ModelParams& params,
                                                   Index row_id = -1) {
  MissingConditional out;
  try {
    auto cond = covariate_conditional(row, params);
    out.indices = cond.missing;
    out.upper = gather(row.limits, out.indices);
    if (out.indices.empty()) return out;
    if (!row.y) {
      out.mean = std::move(cond.mean);
      out.cov = std::move(cond.cov);
      return out;
    }
    const IndexList obs = row.observed();
    const Vector beta_m = gather(params.beta, out.indices);
    const double y_tilde = *row.y - params.beta0 - gather(params.beta, obs).dot(gather(row.x, obs));
    const auto sbar = robust_cholesky(cond.cov, "conditional covariance");
    Matrix prec = sbar.solve(Matrix::Identity(cond.cov.rows(), cond.cov.cols()));
    prec += beta_m * beta_m.transpose() / params.sigma2;
    const auto post = robust_cholesky(symmetrize(prec), "missing-value precision");
    out.cov = symmetrize(post.solve(Matrix::Identity(prec.rows(), prec.cols())));
    out.mean = out.cov * (sbar.solve(cond.mean) + y_tilde / params.sigma2 * beta_m);
  } catch (const FactorizationError& e) {
    if (row_id < 0) throw;
    throw FactorizationError(e.block() + " (row " + std::to_string(row_id) + ")");
  }
  return out;
}

inline MissingConditional missing_full_conditional(Index i, const CensoredDataset& d, const ModelParams& params) {
  if (!d.row_censored(i)) throw std::invalid_argument("row has no censored entries");
  return missing_full_conditional(row_of(d, i), params, i);
}

/// Correlation matrix of the censored block given x_o and y, built from the
/// correlation of x_m | x_o and the correlations of each x_k with y.
inline Matrix posterior_correlation(const CovariateRow& row, const ModelParams& params) {
  if (!row.y) throw std::invalid_argument("posterior correlation needs the response");
  const auto cond = covariate_conditional(row, params);
  if (cond.missing.empty()) throw std::invalid_argument("row has no censored entries");
  const Vector beta_m = gather(params.beta, cond.missing);
  const Vector cov_xy = cond.cov * beta_m;
  const double var_y = beta_m.dot(cov_xy) + params.sigma2;
  const Vector sd = cond.cov.diagonal().array().sqrt();
  const Vector rho_xy = cov_xy.array() / (sd.array() * std::sqrt(var_y));
  const Vector one_minus = 1.0 - rho_xy.array().square();
  if ((one_minus.array() <= 0.0).any())
    throw std::domain_error("degenerate correlation between a missing covariate and y");
  const Vector scale = one_minus.array().rsqrt();
  const Matrix rho_m = covariance_to_correlation(cond.cov);
  return scale.asDiagonal() * (rho_m - rho_xy * rho_xy.transpose()) * scale.asDiagonal();
}

inline Matrix posterior_correlation(Index i, const CensoredDataset& d, const ModelParams& params) {
  return posterior_correlation(row_of(d, i), params);
}

// --- draws -------------------------------------------------------------------

inline Vector draw_mvn(Rng& rng, const Vector& mean, const Matrix& cov, const std::string& what) {
  const auto llt = robust_cholesky(cov, what);
  Vector z(mean.size());
  for (Index k = 0; k < z.size(); ++k) z(k) = std_normal(rng);
  return mean + llt.matrixL() * z;
}

inline double draw_inverse_gamma(Rng& rng, const InverseGamma& ig) {
  std::gamma_distribution<double> g(ig.shape, 1.0);
  return ig.rate / g(rng);
}

/// Omega ~ IW(scale, dof) by the Bartlett decomposition of W = Omega^{-1}.
inline Matrix draw_inverse_wishart(Rng& rng, const Matrix& scale, double dof) {
  const Index p = scale.rows();
  const Matrix scale_inv = spd_inverse(scale, "inverse-Wishart scale");
  const Matrix c = robust_cholesky(scale_inv, "inverse-Wishart scale inverse").matrixL();
  Matrix b = Matrix::Zero(p, p);
  for (Index i = 0; i < p; ++i) {
    std::chi_squared_distribution<double> chi(dof - static_cast<double>(i));
    b(i, i) = std::sqrt(chi(rng));
    for (Index j = 0; j < i; ++j) b(i, j) = std_normal(rng);
  }
  const Matrix m = c.triangularView<Eigen::Lower>() * b;
  const Matrix m_inv = m.triangularView<Eigen::Lower>().solve(Matrix::Identity(p, p));
  return symmetrize(m_inv.transpose() * m_inv);
}

inline void draw_gamma_omega(Rng& rng, const GammaOmegaPosterior& post, ModelParams& params) {
  params.omega = draw_inverse_wishart(rng, post.a_tilde, post.dof);
  const Index r = post.gamma_tilde.rows();
  const Index p = post.gamma_tilde.cols();
  Matrix z(r, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < r; ++i) z(i, j) = std_normal(rng);
  const auto lp = robust_cholesky(post.coef_precision, "auxiliary coefficient precision");
  const Matrix lo = robust_cholesky(params.omega, "omega").matrixL();
  const Matrix row_part = lp.matrixU().solve(z);
  params.gamma = post.gamma_tilde + row_part * lo.transpose();
}

enum class MissingStyle { joint, univariate };

struct MissingDrawOptions {
  MissingStyle style = MissingStyle::joint;
  tmvn::Options tmvn;
  bool fallback_on_failure = true;
};

/// Replace the censored entries of `current` (a full covariate row) by a draw
/// from their full conditional. Returns true when the approximate Gibbs path
/// was used.
inline bool draw_missing_into(Rng& rng, const MissingConditional& cond, Vector& current,
                              const MissingDrawOptions& opts) {
  const Index m = static_cast<Index>(cond.indices.size());
  if (m == 0) return false;
  tmvn::Problem prob{cond.mean, cond.cov, cond.upper};
  Vector warm = gather(current, cond.indices);
  Vector draw;
  bool approximate = false;
  if (opts.style == MissingStyle::univariate) {
    const Matrix prec = spd_inverse(cond.cov, "missing-value covariance");
    draw = warm.cwiseMin(cond.upper);
    for (Index k = 0; k < m; ++k) {
      const double qkk = prec(k, k);
      const double dot = prec.row(k).dot(draw - cond.mean) - qkk * (draw(k) - cond.mean(k));
      const double cm = cond.mean(k) - dot / qkk;
      draw(k) = tmvn::sample_truncnorm_1d(rng, cm, std::sqrt(1.0 / qkk), cond.upper(k));
    }
  } else {
    try {
      auto s = tmvn::sample_tmvn(rng, prob, 1, opts.tmvn, &warm);
      draw = s.draws.row(0).transpose();
      approximate = s.approximate;
    } catch (const tmvn::TiltingError&) {
      if (!opts.fallback_on_failure) throw;
      draw = tmvn::sample_gibbs(rng, prob, 1, opts.tmvn.fallback_sweeps, warm).row(0).transpose();
      approximate = true;
    } catch (const tmvn::AcceptanceError&) {
      if (!opts.fallback_on_failure) throw;
      draw = tmvn::sample_gibbs(rng, prob, 1, opts.tmvn.fallback_sweeps, warm).row(0).transpose();
      approximate = true;
    }
  }
  for (Index k = 0; k < m; ++k) current(cond.indices[static_cast<std::size_t>(k)]) = draw(k);
  return approximate;
}

enum class Block { beta, sigma2, gamma_omega, missing };

/// Draw one block from its full conditional and return the updated state.
/// `row` selects the observation for Block::missing.
inline ChainState draw_block(Rng& rng, Block which, const CensoredDataset& d, const ChainState& state,
                             const PriorHyper& prior, Index row = -1, const MissingDrawOptions& opts = {}) {
  ChainState next = state;
  auto& p = next.params;
  switch (which) {
    case Block::beta: {
      const auto post = beta_full_conditional(d, state, prior);
      const Vector b = draw_mvn(rng, post.mean, post.cov, "beta covariance");
      p.beta0 = b(0);
      p.beta = b.tail(b.size() - 1);
      break;
    }
    case Block::sigma2:
      p.sigma2 = draw_inverse_gamma(rng, sigma2_full_conditional(d, state, prior));
      break;
    case Block::gamma_omega:
      draw_gamma_omega(rng, gamma_omega_full_conditional(d, state, prior), p);
      break;
    case Block::missing: {
      if (row < 0 || row >= d.n()) throw std::out_of_range("missing-block row out of range");
      if (!d.row_censored(row)) break;
      const auto cond = missing_full_conditional(row_of(d, row), state.params, row);
      Vector current = state.imputed.row(row).transpose();
      draw_missing_into(rng, cond, current, opts);
      next.imputed.row(row) = current.transpose();
      break;
    }
  }
  return next;
}

}  // namespace censreg
