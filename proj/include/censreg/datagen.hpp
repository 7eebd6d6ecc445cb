#pragma once

// Synthetic regression data with block-equicorrelated covariates and
// interference-style censoring relative to each row's strongest signal.

#include "censreg/gibbs.hpp"
#include "censreg/linalg.hpp"
#include "censreg/model.hpp"
#include "censreg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace censreg {

struct GenSpec {
  Index n = 1000;
  Index n_test = 1000;
  Index p = 40;
  Index r = 0;  // auxiliary covariates besides the intercept; 0 = none
  std::vector<Index> block_sizes{25, 15};
  std::vector<double> block_rhos{0.8, 0.8};
  double sigma2 = 4.0;
  double frac_insignificant = 0.5;
  std::optional<double> delta;
  std::optional<double> target_censor_rate;
  std::optional<double> aux_share;  // share of covariate variance explained by w
  std::uint64_t seed = 1;

  void validate() const {
    if (n < 1 || n_test < 0 || p < 1 || r < 0) throw ConfigError("GenSpec sizes must be positive");
    if (block_sizes.size() != block_rhos.size()) throw ConfigError("block_sizes and block_rhos differ in length");
    if (std::accumulate(block_sizes.begin(), block_sizes.end(), Index{0}) != p)
      throw ConfigError("block sizes must sum to p");
    for (std::size_t b = 0; b < block_sizes.size(); ++b) {
      const double m = static_cast<double>(block_sizes[b]);
      const double rho = block_rhos[b];
      if (block_sizes[b] < 1) throw ConfigError("block sizes must be >= 1");
      if (!(rho < 1.0) || (m > 1.0 && !(rho > -1.0 / (m - 1.0))))
        throw ConfigError("block correlation " + std::to_string(rho) + " is not positive definite for block size " +
                          std::to_string(block_sizes[b]));
    }
    if (!(sigma2 > 0.0)) throw ConfigError("sigma2 must be positive");
    if (frac_insignificant < 0.0 || frac_insignificant > 1.0) throw ConfigError("frac_insignificant must be in [0, 1]");
    if (delta.has_value() == target_censor_rate.has_value())
      throw ConfigError("set exactly one of delta and target_censor_rate");
    if (delta && !(*delta > 0.0)) throw ConfigError("delta must be positive");
    if (target_censor_rate && !(*target_censor_rate > 0.0 && *target_censor_rate < 1.0))
      throw ConfigError("target_censor_rate must lie in (0, 1)");
    if (aux_share && !(*aux_share > 0.0 && *aux_share < 1.0)) throw ConfigError("aux_share must lie in (0, 1)");
    if (aux_share && r == 0) throw ConfigError("aux_share needs auxiliary covariates (r > 0)");
  }
};

struct CensoredRow {
  Vector values;
  Eigen::Array<bool, Eigen::Dynamic, 1> mask;
  Vector limits;
};

/// Entries more than `delta` below the row maximum are censored at
/// max - delta, which becomes the row's common limit.
inline CensoredRow censor(const Vector& x_row, double delta) {
  if (x_row.size() == 0) throw std::invalid_argument("censor needs a non-empty row");
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
  CensoredRow out;
  const double threshold = x_row.maxCoeff() - delta;
  out.values = x_row;
  out.mask.resize(x_row.size());
  out.limits = Vector::Constant(x_row.size(), threshold);
  for (Index j = 0; j < x_row.size(); ++j) {
    out.mask(j) = x_row(j) < threshold;
    if (out.mask(j)) out.values(j) = threshold;
  }
  return out;
}

inline double censoring_rate(const Matrix& x, double delta) {
  if (x.size() == 0) return 0.0;
  Index count = 0;
  for (Index i = 0; i < x.rows(); ++i) {
    const double threshold = x.row(i).maxCoeff() - delta;
    count += (x.row(i).array() < threshold).count();
  }
  return static_cast<double>(count) / static_cast<double>(x.size());
}

/// Bisection on delta for a target censoring fraction of `x`.
inline double calibrate_delta(const Matrix& x, double target, int iterations = 20, double tol = 0.005) {
  double lo = 1e-9;
  double hi = 0.0;
  for (Index i = 0; i < x.rows(); ++i) hi = std::max(hi, x.row(i).maxCoeff() - x.row(i).minCoeff());
  hi += 1.0;
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < iterations; ++it) {
    mid = 0.5 * (lo + hi);
    const double rate = censoring_rate(x, mid);
    if (std::fabs(rate - target) <= tol) break;
    if (rate > target)
      lo = mid;
    else
      hi = mid;
  }
  return mid;
}

inline CensoredDataset censor_dataset(std::optional<Vector> y, const Matrix& x, std::optional<Matrix> w, double delta) {
  CensoredDataset d;
  d.y = std::move(y);
  d.w = std::move(w);
  d.x = x;
  d.mask.resize(x.rows(), x.cols());
  d.limits.resize(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    if (std::isinf(delta)) {
      d.mask.row(i).setConstant(false);
      d.limits.row(i).setConstant(-std::numeric_limits<double>::infinity());
      continue;
    }
    const auto c = censor(x.row(i).transpose(), delta);
    d.x.row(i) = c.values.transpose();
    d.mask.row(i) = c.mask.transpose().matrix();
    d.limits.row(i) = c.limits.transpose();
  }
  return d;
}

inline Matrix block_equicorrelation(const std::vector<Index>& sizes, const std::vector<double>& rhos) {
  const Index p = std::accumulate(sizes.begin(), sizes.end(), Index{0});
  Matrix r = Matrix::Zero(p, p);
  Index off = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    r.block(off, off, sizes[b], sizes[b]).setConstant(rhos[b]);
    off += sizes[b];
  }
  r.diagonal().setOnes();
  return r;
}

struct GeneratedData {
  CensoredDataset train;
  CensoredDataset test;
  ModelParams truth;
  Matrix x_train_complete;
  Matrix x_test_complete;
  double delta = 0.0;
  double train_censor_rate = 0.0;
  double r_squared = 0.0;

  CensoredDataset complete_train() const { return CensoredDataset::complete(train.y, x_train_complete, train.w); }
  CensoredDataset complete_test() const { return CensoredDataset::complete(test.y, x_test_complete, test.w); }
};

using AuxSampler = std::function<Vector(Rng&)>;

/// Simulate n + n_test rows from `truth`, then censor with a fixed delta or
/// one calibrated on the training rows.
inline GeneratedData simulate_dataset(const ModelParams& truth, const AuxSampler& aux, Index n, Index n_test,
                                      std::optional<double> delta, std::optional<double> target_rate,
                                      std::uint64_t seed) {
  const Index p = truth.beta.size();
  const Index total = n + n_test;
  const bool has_aux = static_cast<bool>(aux);
  const Index rw = truth.gamma.rows();
  const Matrix lo = robust_cholesky(truth.omega, "omega").matrixL();
  Matrix w(total, rw);
  Matrix x(total, p);
  Vector y(total);
  Rng rng_w = make_stream(seed, StreamKind::generate, 3);
  Rng rng_x = make_stream(seed, StreamKind::generate, 4);
  Rng rng_y = make_stream(seed, StreamKind::generate, 5);
  Vector z(p);
  for (Index i = 0; i < total; ++i) {
    if (has_aux)
      w.row(i) = aux(rng_w).transpose();
    else
      w(i, 0) = 1.0;
    for (Index j = 0; j < p; ++j) z(j) = std_normal(rng_x);
    x.row(i) = (truth.gamma.transpose() * w.row(i).transpose() + lo * z).transpose();
    y(i) = truth.beta0 + truth.beta.dot(x.row(i).transpose()) + std::sqrt(truth.sigma2) * std_normal(rng_y);
  }

  GeneratedData g;
  g.truth = truth;
  g.x_train_complete = x.topRows(n);
  g.x_test_complete = x.bottomRows(n_test);
  g.delta = delta ? *delta : calibrate_delta(g.x_train_complete, *target_rate);
  std::optional<Matrix> w_train, w_test;
  if (has_aux) {
    w_train = w.topRows(n);
    w_test = w.bottomRows(n_test);
  }
  g.train = censor_dataset(Vector(y.head(n)), g.x_train_complete, w_train, g.delta);
  g.test = censor_dataset(Vector(y.tail(n_test)), g.x_test_complete, w_test, g.delta);
  g.train_censor_rate = std::isinf(g.delta) ? 0.0 : censoring_rate(g.x_train_complete, g.delta);

  const Vector yt = y.head(n);
  const Vector fitted = (g.x_train_complete * truth.beta).array() + truth.beta0;
  const double ss_res = (yt - fitted).squaredNorm();
  const double ss_tot = (yt.array() - yt.mean()).square().sum();
  g.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  return g;
}

/// Draw the generating parameters for `spec` and simulate one dataset.
///
/// Regression coefficients are standard normal with the last
/// ceil(frac_insignificant * p) set to zero. Without auxiliaries the
/// covariates are N(0, Omega) with Omega block-equicorrelated; with them,
/// w = (1, N(0, I_r)) and Gamma has standard normal entries. `aux_share`
/// rescales Omega column-wise so w explains that share of each covariate's
/// variance.
inline GeneratedData generate(const GenSpec& spec) {
  spec.validate();
  const Index p = spec.p;
  ModelParams truth;
  Rng rng_b = make_stream(spec.seed, StreamKind::generate, 1);
  truth.beta0 = std_normal(rng_b);
  truth.beta.resize(p);
  for (Index j = 0; j < p; ++j) truth.beta(j) = std_normal(rng_b);
  const auto n_zero = static_cast<Index>(std::ceil(spec.frac_insignificant * static_cast<double>(p) - 1e-12));
  if (n_zero > 0) truth.beta.tail(n_zero).setZero();
  truth.sigma2 = spec.sigma2;

  const Matrix corr = block_equicorrelation(spec.block_sizes, spec.block_rhos);
  AuxSampler aux;
  if (spec.r > 0) {
    Rng rng_g = make_stream(spec.seed, StreamKind::generate, 2);
    truth.gamma.resize(spec.r + 1, p);
    for (Index j = 0; j < p; ++j)
      for (Index k = 0; k < spec.r + 1; ++k) truth.gamma(k, j) = std_normal(rng_g);
    if (spec.aux_share) {
      const double share = *spec.aux_share;
      Vector scale(p);
      for (Index j = 0; j < p; ++j) {
        const double explained = truth.gamma.col(j).tail(spec.r).squaredNorm();
        scale(j) = std::sqrt(explained * (1.0 - share) / share);
      }
      truth.omega = scale.asDiagonal() * corr * scale.asDiagonal();
    } else {
      truth.omega = corr;
    }
    const Index r = spec.r;
    aux = [r](Rng& rng) {
      Vector w(r + 1);
      w(0) = 1.0;
      for (Index k = 1; k <= r; ++k) w(k) = std_normal(rng);
      return w;
    };
  } else {
    truth.gamma = Matrix::Zero(1, p);
    truth.omega = corr;
  }
  return simulate_dataset(truth, aux, spec.n, spec.n_test, spec.delta, spec.target_censor_rate, spec.seed);
}

struct RefitOverrides {
  Index n = 1000;
  Index n_test = 1000;
  double target_censor_rate = 0.25;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

/// Fit the model to complete data and simulate fresh censored datasets from
/// its posterior-mean parameters, one per seed. Auxiliary rows are resampled
/// from the fitted data.
inline std::vector<GeneratedData> refit_and_simulate(const CensoredDataset& complete, const PriorHyper& prior,
                                                     const RunConfig& cfg, const RefitOverrides& over,
                                                     ModelParams* fitted = nullptr) {
  if (complete.censored_count() != 0) throw std::invalid_argument("refit_and_simulate needs uncensored data");
  const DrawStore store = run_chain(complete, prior, cfg);
  const ModelParams pm = posterior_mean(store);
  if (fitted) *fitted = pm;
  AuxSampler aux;
  if (complete.w) {
    const Matrix pool = *complete.w;
    aux = [pool](Rng& rng) {
      std::uniform_int_distribution<Index> pick(0, pool.rows() - 1);
      return Vector(pool.row(pick(rng)).transpose());
    };
  }
  std::vector<GeneratedData> out;
  for (auto seed : over.seeds)
    out.push_back(simulate_dataset(pm, aux, over.n, over.n_test, std::nullopt, over.target_censor_rate, seed));
  return out;
}

}  // namespace censreg
