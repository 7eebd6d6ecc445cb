#pragma once

// Predictive scoring, effective sample size and sampler efficiency studies.

#include "censreg/gibbs.hpp"
#include "censreg/model.hpp"
#include "censreg/predict.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace censreg {

enum class MethodLabel { complete, bayesian, bayesian_no_w, naive };

inline const char* to_string(MethodLabel m) {
  switch (m) {
    case MethodLabel::complete:
      return "complete";
    case MethodLabel::bayesian:
      return "bayesian";
    case MethodLabel::bayesian_no_w:
      return "bayesian_no_w";
    case MethodLabel::naive:
      return "naive";
  }
  return "unknown";
}

inline MethodLabel method_from_string(const std::string& s) {
  if (s == "complete") return MethodLabel::complete;
  if (s == "bayesian") return MethodLabel::bayesian;
  if (s == "bayesian_no_w") return MethodLabel::bayesian_no_w;
  if (s == "naive") return MethodLabel::naive;
  throw ConfigError("unknown method label '" + s + "'");
}

struct ScoreReport {
  Vector per_row_log_scores;
  double total = 0.0;
  MethodLabel method_label = MethodLabel::bayesian;
};

inline ScoreReport log_predictive_score(std::span<const PredictiveDraws> preds, const Vector& y_true,
                                        MethodLabel label = MethodLabel::bayesian) {
  if (static_cast<Index>(preds.size()) != y_true.size())
    throw std::invalid_argument("one set of predictive draws is needed per test row");
  ScoreReport rep;
  rep.method_label = label;
  rep.per_row_log_scores.resize(y_true.size());
  for (Index i = 0; i < y_true.size(); ++i)
    rep.per_row_log_scores(i) = log_predictive_density(preds[static_cast<std::size_t>(i)], y_true(i));
  rep.total = rep.per_row_log_scores.sum();
  return rep;
}

struct EssEstimate {
  double value = 0.0;
  bool zero_variance = false;
};

/// Effective sample size with Geyer's initial monotone sequence estimator.
/// A chain with no variation reports its length and sets the flag.
inline EssEstimate ess_estimate(std::span<const double> chain) {
  const std::size_t n = chain.size();
  if (n < 10) throw std::invalid_argument("ESS needs a chain of length >= 10");
  const double mean = std::accumulate(chain.begin(), chain.end(), 0.0) / static_cast<double>(n);
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = chain[i] - mean;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
    return s / static_cast<double>(n);
  };
  const double g0 = autocov(0);
  if (!(g0 > 1e-300 * std::max(1.0, mean * mean))) return {static_cast<double>(n), true};

  double sum_pairs = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = (k == 0 ? g0 : autocov(2 * k)) + autocov(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    prev = pair;
    sum_pairs += pair;
  }
  const double tau = (-g0 + 2.0 * sum_pairs) / g0;
  const double bound = static_cast<double>(n) * std::log10(static_cast<double>(n));
  return {std::min(static_cast<double>(n) / std::max(tau, 1e-12), bound), false};
}

inline double ess(std::span<const double> chain) { return ess_estimate(chain).value; }

/// Censored entries imputed at their detection limits.
inline Matrix naive_impute(const CensoredDataset& d) {
  Matrix out = d.x;
  for (Index i = 0; i < d.n(); ++i)
    for (Index j = 0; j < d.p(); ++j)
      if (d.mask(i, j)) out(i, j) = d.limits(i, j);
  return out;
}

/// The dataset a method sees: `naive` replaces censored entries by their
/// limits, `bayesian_no_w` drops the auxiliaries, `complete` requires fully
/// observed covariates.
inline CensoredDataset prepare_for_method(CensoredDataset d, MethodLabel m) {
  switch (m) {
    case MethodLabel::bayesian:
      break;
    case MethodLabel::bayesian_no_w:
      d.w.reset();
      break;
    case MethodLabel::naive:
      d.x = naive_impute(d);
      d.mask.setConstant(false);
      d.limits.setConstant(-std::numeric_limits<double>::infinity());
      break;
    case MethodLabel::complete:
      if (d.censored_count() != 0)
        throw std::invalid_argument("method 'complete' needs data without censored entries");
      break;
  }
  return d;
}

// --- joint vs one-at-a-time missing updates ----------------------------------

struct JointVsUnivariateReport {
  std::vector<double> ratios;   // ESS_joint / ESS_univariate per censored entry
  std::array<double, 5> quantiles{};  // 0, 25, 50, 75, 100 %
  double joint_seconds = 0.0;
  double univariate_seconds = 0.0;
  double time_ratio = 0.0;  // univariate / joint
  long draws = 0;
};

inline std::array<double, 5> five_quantiles(const std::vector<double>& v) {
  std::array<double, 5> q{};
  if (v.empty()) return q;
  const double probs[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
  for (int k = 0; k < 5; ++k) q[static_cast<std::size_t>(k)] = quantile(v, probs[k]);
  return q;
}

inline std::vector<double> entry_trace(const DrawStore& store, std::size_t entry) {
  std::vector<double> out;
  out.reserve(store.draws.size());
  for (const auto& dr : store.draws) out.push_back((*dr.imputations)(static_cast<Index>(entry)));
  return out;
}

/// Two chains that differ only in how the censored block of a row is
/// updated: jointly from the truncated multivariate normal, or one entry at
/// a time from its scalar conditional. All other blocks share random streams.
inline JointVsUnivariateReport compare_joint_vs_univariate(const CensoredDataset& d, const PriorHyper& prior,
                                                           RunConfig cfg) {
  JointVsUnivariateReport rep;
  if (d.censored_count() == 0) return rep;
  cfg.store_imputations = true;
  const long kept = (cfg.n_iter - cfg.burn_in) / cfg.thin;
  if (kept < 10)
    throw std::invalid_argument("chains too short for ESS: " + std::to_string(kept) +
                                " stored draws; run at least 10 post burn-in draws (preferably thousands)");
  cfg.missing_style = MissingStyle::joint;
  const DrawStore joint = run_chain(d, prior, cfg);
  cfg.missing_style = MissingStyle::univariate;
  const DrawStore uni = run_chain(d, prior, cfg);
  rep.draws = static_cast<long>(joint.draws.size());
  rep.joint_seconds = joint.sampler_seconds;
  rep.univariate_seconds = uni.sampler_seconds;
  rep.time_ratio = joint.sampler_seconds > 0.0 ? uni.sampler_seconds / joint.sampler_seconds : 0.0;
  for (std::size_t e = 0; e < joint.censored_entries.size(); ++e) {
    const auto a = entry_trace(joint, e);
    const auto b = entry_trace(uni, e);
    rep.ratios.push_back(ess(a) / ess(b));
  }
  rep.quantiles = five_quantiles(rep.ratios);
  return rep;
}

// --- random scan ---------------------------------------------------------------

struct ScanEfficiencyRow {
  double scan_prob = 1.0;
  double seconds_per_iter = 0.0;
  // Mean ESS over beta coordinates, censored entries and prediction rows.
  double beta_ess = 0.0;
  double imputation_ess = 0.0;
  double predictive_ess = 0.0;
  double predictive_ess_per_sec = 0.0;
  double beta_ess_per_sec = 0.0;
  double imputation_ess_per_sec = 0.0;
  // Relative to scan_prob = 1.
  double predictive_ratio = 1.0;
  double beta_ratio = 1.0;
  double imputation_ratio = 1.0;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline ScanEfficiencyRow scan_run(const CensoredDataset& d, const PriorHyper& prior, RunConfig cfg, double prob,
                                  const CensoredDataset& pred_rows) {
  cfg.scan_prob = prob;
  cfg.store_imputations = true;
  const DrawStore store = run_chain(d, prior, cfg);
  ScanEfficiencyRow row;
  row.scan_prob = prob;
  const double secs = std::max(store.sampler_seconds, 1e-9);
  row.seconds_per_iter = secs / static_cast<double>(cfg.n_iter);

  std::vector<double> beta_ess;
  for (Index j = 0; j < d.p(); ++j) {
    std::vector<double> tr;
    for (const auto& dr : store.draws) tr.push_back(dr.params.beta(j));
    beta_ess.push_back(ess(tr));
  }
  std::vector<double> imp_ess;
  for (std::size_t e = 0; e < store.censored_entries.size(); ++e) imp_ess.push_back(ess(entry_trace(store, e)));

  std::vector<double> pred_ess;
  const auto preds = predict_batch(store, pred_rows, cfg.seed, cfg.threads);
  for (const auto& pd : preds)
    pred_ess.push_back(ess(std::span<const double>(pd.y_draws.data(), static_cast<std::size_t>(pd.y_draws.size()))));

  row.beta_ess = mean_of(beta_ess);
  row.imputation_ess = mean_of(imp_ess);
  row.predictive_ess = mean_of(pred_ess);
  row.beta_ess_per_sec = row.beta_ess / secs;
  row.imputation_ess_per_sec = row.imputation_ess / secs;
  row.predictive_ess_per_sec = row.predictive_ess / secs;
  return row;
}

inline CensoredDataset head_rows(const CensoredDataset& d, Index k) {
  CensoredDataset out;
  k = std::min(k, d.n());
  if (d.y) out.y = d.y->head(k);
  out.x = d.x.topRows(k);
  out.mask = d.mask.topRows(k);
  out.limits = d.limits.topRows(k);
  if (d.w) out.w = d.w->topRows(k);
  return out;
}

}  // namespace detail

/// ESS per second of sampler time for each update probability, relative to
/// updating every censored row in every iteration. Predictive ESS is taken
/// over `pred_rows`, or over the first ten training rows when not given.
inline std::vector<ScanEfficiencyRow> random_scan_efficiency(const CensoredDataset& d, const PriorHyper& prior,
                                                             const std::vector<double>& probs, const RunConfig& cfg,
                                                             const CensoredDataset* pred_rows = nullptr) {
  if (probs.empty()) throw std::invalid_argument("no scan probabilities given");
  const CensoredDataset rows = pred_rows ? *pred_rows : detail::head_rows(d, 10);
  std::vector<ScanEfficiencyRow> out;
  std::optional<ScanEfficiencyRow> base;
  for (double p : probs) {
    out.push_back(detail::scan_run(d, prior, cfg, p, rows));
    if (p == 1.0 && !base) base = out.back();
  }
  if (!base) base = detail::scan_run(d, prior, cfg, 1.0, rows);
  for (auto& r : out) {
    if (r.scan_prob == 1.0) {
      r.predictive_ratio = r.beta_ratio = r.imputation_ratio = 1.0;
      continue;
    }
    r.predictive_ratio = r.predictive_ess_per_sec / base->predictive_ess_per_sec;
    r.beta_ratio = r.beta_ess_per_sec / base->beta_ess_per_sec;
    r.imputation_ratio =
        base->imputation_ess_per_sec > 0.0 ? r.imputation_ess_per_sec / base->imputation_ess_per_sec : 1.0;
  }
  return out;
}

// --- kernel density -----------------------------------------------------------

struct GridSpec {
  std::optional<double> lo;
  std::optional<double> hi;
  Index points = 512;
};

struct DensityGrid {
  Vector grid;
  Vector density;
  double bandwidth = 0.0;
};

/// Gaussian kernel density estimate with Silverman's rule-of-thumb
/// bandwidth. Degenerate samples fall back to a narrow spike.
inline DensityGrid emit_density_data(std::span<const double> samples, const GridSpec& spec = {}) {
  if (samples.empty()) throw std::invalid_argument("density estimate needs at least one sample");
  if (spec.points < 2) throw std::invalid_argument("density grid needs at least two points");
  const std::size_t n = samples.size();
  std::vector<double> v(samples.begin(), samples.end());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  if (!(h > 0.0)) h = 1e-3 * std::max(1.0, std::fabs(mean));

  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double lo = spec.lo.value_or(*mn - 3.0 * h);
  const double hi = spec.hi.value_or(*mx + 3.0 * h);
  DensityGrid out;
  out.bandwidth = h;
  out.grid = Vector::LinSpaced(spec.points, lo, hi);
  out.density = Vector::Zero(spec.points);
  const double norm = 1.0 / (static_cast<double>(n) * h);
  for (Index g = 0; g < spec.points; ++g) {
    double acc = 0.0;
    const double at = out.grid(g);
    for (double x : v) {
      const double z = (at - x) / h;
      if (std::fabs(z) < 40.0) acc += normal::pdf(z);
    }
    out.density(g) = acc * norm;
  }
  return out;
}

}  // namespace censreg
