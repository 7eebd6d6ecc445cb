#pragma once

// Gibbs sampler orchestration: fixed block order for the parameters and a
// random scan over the observations that have censored covariates.

#include "censreg/conditionals.hpp"
#include "censreg/linalg.hpp"
#include "censreg/model.hpp"
#include "censreg/rng.hpp"

#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace censreg {

struct RunConfig {
  long n_iter = 6000;
  long burn_in = 1000;
  long thin = 1;
  double scan_prob = 0.2;
  std::uint64_t seed = 1;
  Index exact_dim_cap = 50;
  bool store_imputations = false;
  MissingStyle missing_style = MissingStyle::joint;
  int threads = 1;  // worker cap; results do not depend on it

  void validate() const {
    if (n_iter < 1) throw ConfigError("n_iter must be >= 1");
    if (burn_in < 0 || burn_in >= n_iter) throw ConfigError("burn_in must satisfy 0 <= burn_in < n_iter");
    if (thin < 1) throw ConfigError("thin must be >= 1");
    if (!(scan_prob > 0.0 && scan_prob <= 1.0)) throw ConfigError("scan_prob must lie in (0, 1]");
    if (exact_dim_cap < 1) throw ConfigError("exact_dim_cap must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }

  MissingDrawOptions missing_options() const {
    MissingDrawOptions o;
    o.style = missing_style;
    o.tmvn.exact_dim_cap = exact_dim_cap;
    return o;
  }
};

/// Thrown when a block update fails; carries the draws collected so far.
class ChainError : public std::runtime_error {
 public:
  ChainError(long iteration, std::string block, const std::string& what, DrawStore partial)
      : std::runtime_error("iteration " + std::to_string(iteration) + ", block " + block + ": " + what),
        iteration_(iteration),
        block_(std::move(block)),
        partial_(std::move(partial)) {}

  long iteration() const noexcept { return iteration_; }
  const std::string& block() const noexcept { return block_; }
  const DrawStore& partial() const noexcept { return partial_; }

 private:
  long iteration_;
  std::string block_;
  DrawStore partial_;
};

struct RunHooks {
  /// Start from this state instead of the default initialization.
  std::optional<ChainState> initial;
  /// Polled once per iteration; a set flag ends the run early with the
  /// store marked incomplete.
  const std::atomic<bool>* cancel = nullptr;
  /// Called after every iteration with the current state.
  std::function<void(const ChainState&)> on_iteration;
};

namespace detail {

inline double column_sd_observed(const CensoredDataset& d, Index j) {
  double sum = 0.0;
  double sq = 0.0;
  Index count = 0;
  for (Index i = 0; i < d.n(); ++i) {
    if (d.mask(i, j)) continue;
    sum += d.x(i, j);
    ++count;
  }
  if (count < 2) return 0.0;
  const double mean = sum / static_cast<double>(count);
  for (Index i = 0; i < d.n(); ++i)
    if (!d.mask(i, j)) sq += (d.x(i, j) - mean) * (d.x(i, j) - mean);
  return std::sqrt(sq / static_cast<double>(count - 1));
}

}  // namespace detail

/// Starting point for the sampler. Censored entries start half an observed
/// column standard deviation below their limit (one unit when the column
/// has no spread); the parameters come from ridge fits on that completion.
inline ChainState initialize_state(const CensoredDataset& d, const Eigen::Ref<const Vector>& y_labeled,
                                   const PriorHyper& prior) {
  const Index n = d.n();
  const Index p = d.p();
  const Index nl = y_labeled.size();
  ChainState s;
  s.imputed = d.x;
  for (Index j = 0; j < p; ++j) {
    const double sd = detail::column_sd_observed(d, j);
    const double offset = sd > 0.0 ? 0.5 * sd : 1.0;
    for (Index i = 0; i < n; ++i)
      if (d.mask(i, j)) s.imputed(i, j) = d.limits(i, j) - offset;
  }

  auto& par = s.params;
  Matrix design(nl, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = s.imputed.topRows(nl);
  Matrix gram = design.transpose() * design;
  const double ridge = 1e-8 * (gram.trace() / static_cast<double>(p + 1) + 1.0);
  gram(0, 0) += 1.0 / (prior.tau_beta0 * prior.tau_beta0) + ridge;
  gram.diagonal().tail(p).array() += 1.0 / (prior.tau_beta * prior.tau_beta) + ridge;
  const Vector coef = robust_cholesky(gram, "initial ridge fit").solve(design.transpose() * y_labeled);
  par.beta0 = coef(0);
  par.beta = coef.tail(p);
  const double rss = (y_labeled - design * coef).squaredNorm();
  const double dof = static_cast<double>(std::max<Index>(nl - p - 1, 1));
  par.sigma2 = rss / dof;
  if (!(par.sigma2 > 1e-12)) par.sigma2 = std::max(sample_variance(y_labeled), 1.0);

  const Matrix w = d.design_w();
  Matrix wtw = w.transpose() * w;
  wtw.diagonal().array() += 1.0 / (prior.tau_gamma * prior.tau_gamma);
  par.gamma = robust_cholesky(wtw, "initial auxiliary fit").solve(w.transpose() * s.imputed);
  const Matrix resid = s.imputed - w * par.gamma;
  Matrix omega = resid.transpose() * resid / static_cast<double>(std::max<Index>(n - 1, 1));
  const double jitter = 1e-3 * omega.trace() / static_cast<double>(p) + 1e-8;
  omega.diagonal().array() += jitter;
  par.omega = symmetrize(omega);
  return s;
}

inline ChainState initialize_state(const CensoredDataset& d, const PriorHyper& prior) {
  if (!d.y) throw std::invalid_argument("initialization needs a response");
  return initialize_state(d, *d.y, prior);
}

/// Run the sampler where only the first `y_labeled.size()` rows carry a
/// response. The remaining rows inform (Gamma, Omega) and have their censored
/// entries imputed without the response term.
inline DrawStore run_chain_partial(const CensoredDataset& d, const Vector& y_labeled, const PriorHyper& prior,
                                   const RunConfig& cfg, const RunHooks& hooks = {}) {
  cfg.validate();
  prior.validate(d.p());
  const auto report = validate_dataset(d);
  if (!report.dimension_errors.empty())
    throw std::invalid_argument("dataset dimensions inconsistent: " + report.dimension_errors.front());
  if (!report.violations.empty()) {
    const auto& v = report.violations.front();
    throw std::invalid_argument("dataset violation at row " + std::to_string(v.row) + ", column " +
                                std::to_string(v.col) + ": " + v.message);
  }
  const Index nl = y_labeled.size();
  if (nl > d.n()) throw std::invalid_argument("more responses than rows");

  DrawStore store;
  store.seed = cfg.seed;
  store.n_iter = cfg.n_iter;
  store.burn_in = cfg.burn_in;
  store.thin = cfg.thin;
  store.scan_prob = cfg.scan_prob;
  store.p = d.p();
  store.r = d.r();
  store.has_aux = d.w.has_value();
  for (Index i = 0; i < d.n(); ++i)
    for (Index j = 0; j < d.p(); ++j)
      if (d.mask(i, j)) store.censored_entries.emplace_back(i, j);

  ChainState state = hooks.initial ? *hooks.initial : initialize_state(d, y_labeled, prior);
  if (state.imputed.rows() != d.n() || state.imputed.cols() != d.p())
    throw std::invalid_argument("initial state does not match the dataset");
  const Matrix w = d.design_w();
  const IndexList rows = d.censored_rows();
  std::vector<CovariateRow> row_data;
  row_data.reserve(rows.size());
  for (Index i : rows) row_data.push_back(row_of(d, i, false));
  for (std::size_t k = 0; k < rows.size(); ++k)
    if (rows[k] < nl) row_data[k].y = y_labeled(rows[k]);

  const MissingDrawOptions mopts = cfg.missing_options();
  std::vector<char> updated(rows.size(), 0);
  std::vector<char> approx(rows.size(), 0);
  tbb::task_arena arena(cfg.threads);

  auto update_row = [&](std::size_t k, long t) {
    const Index i = rows[k];
    Rng rng = make_stream(cfg.seed, StreamKind::missing, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i));
    updated[k] = 0;
    approx[k] = 0;
    if (cfg.scan_prob < 1.0 && open_uniform(rng) >= cfg.scan_prob) return;
    const auto cond = missing_full_conditional(row_data[k], state.params, i);
    Vector current = state.imputed.row(i).transpose();
    approx[k] = draw_missing_into(rng, cond, current, mopts) ? 1 : 0;
    state.imputed.row(i) = current.transpose();
    updated[k] = 1;
  };

  const auto start = std::chrono::steady_clock::now();
  std::string block;
  long t = 1;
  try {
    for (; t <= cfg.n_iter; ++t) {
      if (hooks.cancel && hooks.cancel->load()) break;
      auto& par = state.params;
      const auto ut = static_cast<std::uint64_t>(t);

      block = "beta";
      {
        Rng rng = make_stream(cfg.seed, StreamKind::beta, ut);
        const auto post = beta_full_conditional(state.imputed.topRows(nl), y_labeled, par.sigma2, prior);
        const Vector b = draw_mvn(rng, post.mean, post.cov, "beta covariance");
        par.beta0 = b(0);
        par.beta = b.tail(d.p());
      }
      block = "sigma2";
      {
        Rng rng = make_stream(cfg.seed, StreamKind::sigma2, ut);
        par.sigma2 =
            draw_inverse_gamma(rng, sigma2_full_conditional(state.imputed.topRows(nl), y_labeled, par.beta0, par.beta, prior));
      }
      block = "gamma_omega";
      {
        Rng rng = make_stream(cfg.seed, StreamKind::gamma_omega, ut);
        draw_gamma_omega(rng, gamma_omega_full_conditional(state.imputed, w, prior), par);
      }
      block = "missing";
      if (!rows.empty()) {
        if (cfg.threads == 1) {
          for (std::size_t k = 0; k < rows.size(); ++k) update_row(k, t);
        } else {
          arena.execute([&] {
            tbb::parallel_for(tbb::blocked_range<std::size_t>(0, rows.size()), [&](const auto& range) {
              for (std::size_t k = range.begin(); k != range.end(); ++k) update_row(k, t);
            });
          });
        }
        for (std::size_t k = 0; k < rows.size(); ++k) {
          store.row_updates += static_cast<std::uint64_t>(updated[k]);
          store.approximate_updates += static_cast<std::uint64_t>(approx[k]);
        }
      }
      state.iteration = t;

      if (t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
        Draw dr;
        dr.iteration = t;
        dr.params = par;
        if (cfg.store_imputations) {
          Vector imp(static_cast<Index>(store.censored_entries.size()));
          for (std::size_t e = 0; e < store.censored_entries.size(); ++e)
            imp(static_cast<Index>(e)) = state.imputed(store.censored_entries[e].first, store.censored_entries[e].second);
          dr.imputations = std::move(imp);
        }
        store.draws.push_back(std::move(dr));
      }
      if (hooks.on_iteration) hooks.on_iteration(state);
    }
  } catch (const std::exception& e) {
    store.complete = false;
    store.sampler_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    throw ChainError(t, block, e.what(), std::move(store));
  }
  store.sampler_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  store.complete = t > cfg.n_iter;
  store.final_state = std::move(state);
  return store;
}

/// Full-data Gibbs run: every row carries a response.
inline DrawStore run_chain(const CensoredDataset& d, const PriorHyper& prior, const RunConfig& cfg,
                           const RunHooks& hooks = {}) {
  if (!d.y) throw std::invalid_argument("run_chain needs a response; use run_chain_partial for unlabeled rows");
  return run_chain_partial(d, *d.y, prior, cfg, hooks);
}

/// Posterior mean of the stored parameters.
inline ModelParams posterior_mean(const DrawStore& store) {
  if (store.draws.empty()) throw std::invalid_argument("empty draw store");
  ModelParams m = store.draws.front().params;
  m.beta0 = 0.0;
  m.beta.setZero();
  m.sigma2 = 0.0;
  m.gamma.setZero();
  m.omega.setZero();
  for (const auto& dr : store.draws) {
    m.beta0 += dr.params.beta0;
    m.beta += dr.params.beta;
    m.sigma2 += dr.params.sigma2;
    m.gamma += dr.params.gamma;
    m.omega += dr.params.omega;
  }
  const double s = static_cast<double>(store.draws.size());
  m.beta0 /= s;
  m.beta /= s;
  m.sigma2 /= s;
  m.gamma /= s;
  m.omega /= s;
  return m;
}

}  // namespace censreg
