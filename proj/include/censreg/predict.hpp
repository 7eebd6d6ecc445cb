#pragma once

// Posterior predictive draws for observations whose covariates may be
// censored.

#include "censreg/conditionals.hpp"
#include "censreg/gibbs.hpp"
#include "censreg/model.hpp"
#include "censreg/normal.hpp"
#include "censreg/rng.hpp"
#include "censreg/tmvn.hpp"

#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace censreg {

enum class Strategy { exact, approximate };

/// Predictive sample for one test observation. Row s pairs the response draw
/// with the imputation of the censored covariates and the linear predictor
/// and error variance of the posterior draw that produced it.
struct PredictiveDraws {
  Vector y_draws;
  Matrix x_m_draws;  // draws x |missing|
  Vector linear_predictor;
  Vector sigma2;
  IndexList missing;
  Strategy strategy = Strategy::approximate;
  std::uint64_t source_seed = 0;
  bool approximate_tmvn = false;

  Index size() const { return y_draws.size(); }
};

/// Draw (x_m, y) for `row` once per stored posterior draw. The imputation is
/// not conditioned on the test response.
inline PredictiveDraws predict_approximate(const DrawStore& store, const CovariateRow& row, std::uint64_t seed,
                                           Index row_id, const tmvn::Options& opts = {}) {
  if (store.draws.empty()) throw std::invalid_argument("prediction needs a non-empty draw store");
  if (!store.complete) throw std::invalid_argument("prediction needs a completed draw store");
  if (row.x.size() != store.p || row.mask.size() != store.p || row.limits.size() != store.p)
    throw std::invalid_argument("test row covariate count differs from the training data");
  if (row.w.size() != store.r) throw std::invalid_argument("test row auxiliary count differs from the training data");

  CovariateRow test = row;
  test.y.reset();
  const IndexList missing = test.censored();
  const Index S = static_cast<Index>(store.draws.size());
  PredictiveDraws out;
  out.missing = missing;
  out.source_seed = store.seed;
  out.y_draws.resize(S);
  out.linear_predictor.resize(S);
  out.sigma2.resize(S);
  out.x_m_draws.resize(S, static_cast<Index>(missing.size()));

  Rng rng = make_stream(seed, StreamKind::predict, static_cast<std::uint64_t>(row_id));
  Vector x = test.x;
  for (Index s = 0; s < S; ++s) {
    const auto& par = store.draws[static_cast<std::size_t>(s)].params;
    if (!missing.empty()) {
      const auto cond = missing_full_conditional(test, par, row_id);
      const tmvn::Problem prob{cond.mean, cond.cov, cond.upper};
      const Vector warm = gather(x, missing);
      const auto sample = tmvn::sample_tmvn(rng, prob, 1, opts, &warm);
      out.approximate_tmvn = out.approximate_tmvn || sample.approximate;
      for (std::size_t k = 0; k < missing.size(); ++k) {
        x(missing[k]) = sample.draws(0, static_cast<Index>(k));
        out.x_m_draws(s, static_cast<Index>(k)) = sample.draws(0, static_cast<Index>(k));
      }
    }
    const double lin = par.beta0 + par.beta.dot(x);
    out.linear_predictor(s) = lin;
    out.sigma2(s) = par.sigma2;
    out.y_draws(s) = lin + std::sqrt(par.sigma2) * std_normal(rng);
  }
  return out;
}

/// Approximate-strategy predictions for every row of `test`, in row order.
/// Row i uses the random stream keyed by (seed, row_offset + i).
inline std::vector<PredictiveDraws> predict_batch(const DrawStore& store, const CensoredDataset& test,
                                                  std::uint64_t seed, int threads = 1, Index row_offset = 0,
                                                  const tmvn::Options& opts = {}) {
  std::vector<PredictiveDraws> out(static_cast<std::size_t>(test.n()));
  auto one = [&](std::size_t i) {
    out[i] = predict_approximate(store, row_of(test, static_cast<Index>(i), false), seed,
                                 row_offset + static_cast<Index>(i), opts);
  };
  if (threads <= 1) {
    for (std::size_t i = 0; i < out.size(); ++i) one(i);
  } else {
    tbb::task_arena arena(threads);
    arena.execute([&] {
      tbb::parallel_for(tbb::blocked_range<std::size_t>(0, out.size()), [&](const auto& r) {
        for (std::size_t i = r.begin(); i != r.end(); ++i) one(i);
      });
    });
  }
  return out;
}

namespace detail {

inline CensoredDataset stack_rows(const CensoredDataset& a, const CensoredDataset& b) {
  if (a.p() != b.p()) throw std::invalid_argument("training and test covariate counts differ");
  if (a.w.has_value() != b.w.has_value()) throw std::invalid_argument("auxiliaries present in only one dataset");
  CensoredDataset c;
  const Index n = a.n() + b.n();
  c.x.resize(n, a.p());
  c.x << a.x, b.x;
  c.mask.resize(n, a.p());
  c.mask << a.mask, b.mask;
  c.limits.resize(n, a.p());
  c.limits << a.limits, b.limits;
  if (a.w) {
    if (a.w->cols() != b.w->cols()) throw std::invalid_argument("auxiliary counts differ");
    Matrix w(n, a.w->cols());
    w << *a.w, *b.w;
    c.w = std::move(w);
  }
  return c;
}

}  // namespace detail

/// Refit on training plus test rows and predict row `target` of the test
/// batch. (Gamma, Omega) learn from all rows; (beta, sigma^2) only from the
/// training responses. A `warm` training state shortens burn-in by half.
inline PredictiveDraws predict_exact(const CensoredDataset& train, const CensoredDataset& test_batch, Index target,
                                     const PriorHyper& prior, const RunConfig& cfg, const ChainState* warm = nullptr,
                                     DrawStore* store_out = nullptr) {
  if (!train.y) throw std::invalid_argument("training data needs a response");
  if (target < 0 || target >= test_batch.n()) throw std::out_of_range("target row outside the test batch");
  const CensoredDataset all = detail::stack_rows(train, test_batch);
  RunConfig run = cfg;
  RunHooks hooks;
  if (warm) {
    if (warm->imputed.rows() != train.n() || warm->imputed.cols() != train.p())
      throw std::invalid_argument("warm state does not match the training data");
    ChainState init = initialize_state(all, *train.y, prior);
    init.params = warm->params;
    init.imputed.topRows(train.n()) = warm->imputed;
    hooks.initial = std::move(init);
    const long cut = cfg.burn_in - cfg.burn_in / 2;
    run.burn_in = cfg.burn_in / 2;
    run.n_iter = std::max(cfg.n_iter - cut, run.burn_in + 1);
  }
  DrawStore store = run_chain_partial(all, *train.y, prior, run, hooks);
  auto out = predict_approximate(store, row_of(test_batch, target, false), cfg.seed, train.n() + target,
                                 tmvn::Options{.exact_dim_cap = cfg.exact_dim_cap});
  out.strategy = Strategy::exact;
  if (store_out) *store_out = std::move(store);
  return out;
}

enum class Checkpoint { reuse, refit };

/// Refit once the unseen test volume exceeds `ratio_threshold` times the
/// training size.
inline Checkpoint checkpoint_policy(long n_train, long n_test_seen, double ratio_threshold = 1.0) {
  if (n_train < 0 || n_test_seen < 0) throw std::invalid_argument("counts must be non-negative");
  if (n_train == 0) return n_test_seen > 0 ? Checkpoint::refit : Checkpoint::reuse;
  return static_cast<double>(n_test_seen) / static_cast<double>(n_train) > ratio_threshold ? Checkpoint::refit
                                                                                          : Checkpoint::reuse;
}

/// log p(y | .) estimated by averaging the conditional Gaussian densities of
/// the draws (computed in log space).
inline double log_predictive_density(const PredictiveDraws& pd, double y) {
  const Index S = pd.size();
  if (S == 0) throw std::invalid_argument("no predictive draws");
  double m = -std::numeric_limits<double>::infinity();
  Vector lp(S);
  for (Index s = 0; s < S; ++s) {
    lp(s) = normal::log_pdf(y, pd.linear_predictor(s), pd.sigma2(s));
    m = std::max(m, lp(s));
  }
  if (!std::isfinite(m)) return m;
  const double acc = (lp.array() - m).exp().sum();
  return m + std::log(acc) - std::log(static_cast<double>(S));
}

/// Linear-interpolated sample quantile (type 7).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct PredictiveSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
};

inline PredictiveSummary summarize(const PredictiveDraws& pd) {
  PredictiveSummary s;
  std::vector<double> v(pd.y_draws.data(), pd.y_draws.data() + pd.y_draws.size());
  s.mean = pd.y_draws.mean();
  s.sd = std::sqrt(sample_variance(pd.y_draws));
  s.q05 = quantile(v, 0.05);
  s.q50 = quantile(v, 0.50);
  s.q95 = quantile(v, 0.95);
  return s;
}

}  // namespace censreg
