#pragma once

// Data, parameter and prior types for linear regression with left-censored
// covariates, plus Gaussian conditioning shared by the samplers.

#include "censreg/linalg.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace censreg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Response, covariates with censoring mask, per-entry detection limits and
/// optional fully observed auxiliary covariates.
///
/// Censored entries of `x` hold their detection limit as placeholder. The
/// mask is the single source of truth for missingness.
struct CensoredDataset {
  std::optional<Vector> y;
  Matrix x;
  BoolMatrix mask;
  Matrix limits;
  std::optional<Matrix> w;

  Index n() const { return x.rows(); }
  Index p() const { return x.cols(); }
  Index r() const { return w ? w->cols() : 1; }
  bool has_y() const { return y.has_value(); }

  /// Auxiliary design; an intercept column when no auxiliaries are present.
  Matrix design_w() const { return w ? *w : Matrix::Ones(n(), 1); }

  Vector w_row(Index i) const {
    if (w) return w->row(i).transpose();
    return Vector::Ones(1);
  }

  IndexList censored_columns(Index i) const {
    IndexList out;
    for (Index j = 0; j < p(); ++j)
      if (mask(i, j)) out.push_back(j);
    return out;
  }

  IndexList observed_columns(Index i) const {
    IndexList out;
    for (Index j = 0; j < p(); ++j)
      if (!mask(i, j)) out.push_back(j);
    return out;
  }

  bool row_censored(Index i) const { return mask.row(i).any(); }

  Index censored_count() const { return mask.count(); }

  /// Rows with at least one censored entry, in ascending order.
  IndexList censored_rows() const {
    IndexList out;
    for (Index i = 0; i < n(); ++i)
      if (row_censored(i)) out.push_back(i);
    return out;
  }

  /// Build a dataset with nothing censored.
  static CensoredDataset complete(std::optional<Vector> y, Matrix x, std::optional<Matrix> w = std::nullopt) {
    CensoredDataset d;
    d.y = std::move(y);
    d.mask = BoolMatrix::Constant(x.rows(), x.cols(), false);
    d.limits = Matrix::Constant(x.rows(), x.cols(), -std::numeric_limits<double>::infinity());
    d.x = std::move(x);
    d.w = std::move(w);
    return d;
  }
};

struct ModelParams {
  double beta0 = 0.0;
  Vector beta;
  double sigma2 = 1.0;
  Matrix gamma;  // r x p
  Matrix omega;  // p x p

  void validate() const {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw ConfigError("sigma2 must be positive and finite");
    if (omega.rows() != beta.size() || omega.cols() != beta.size())
      throw ConfigError("omega must be p x p");
    if (gamma.cols() != beta.size()) throw ConfigError("gamma must have p columns");
    if (!is_spd(omega)) throw FactorizationError("omega");
  }

  /// Mean of the covariate vector given auxiliaries, Gamma^T w.
  Vector covariate_mean(const Vector& w_row) const { return gamma.transpose() * w_row; }
};

/// How the sigma^2 prior scale is derived from the response variance m when
/// hyperparameters are filled in automatically.
enum class SigmaPriorRule {
  verbatim,      // b = m (m^2 / v + 1)
  mean_matched,  // b = m (a - 1)
};

struct PriorHyper {
  double tau_beta0 = 1e4;
  double tau_beta = 1e4;
  double a = 2.0;
  double b = 1.0;
  double tau_gamma = std::sqrt(0.1);
  Matrix A;
  double kappa = 10.0;

  void validate(Index p) const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive and finite");
    };
    positive(tau_beta0, "tau_beta0");
    positive(tau_beta, "tau_beta");
    positive(a, "a");
    positive(b, "b");
    positive(tau_gamma, "tau_gamma");
    if (A.rows() != p || A.cols() != p) throw ConfigError("prior matrix A must be p x p");
    if (!is_spd(A)) throw FactorizationError("prior matrix A");
    if (!(kappa > static_cast<double>(p) - 1.0))
      throw ConfigError("kappa must exceed p - 1 for a proper inverse-Wishart prior");
  }

  /// The experiment defaults: vague normal priors on the regression
  /// coefficients, an inverse-gamma prior on sigma^2 centred on the response
  /// variance with variance v, IW(0.1 I, 10) on Omega and tau_gamma^2 = 0.1.
  /// kappa is raised to p + 1 when 10 would make the IW prior improper.
  static PriorHyper defaults(const Vector& y, Index p, SigmaPriorRule rule = SigmaPriorRule::verbatim,
                             double v = 2000.0 * 2000.0) {
    PriorHyper h;
    const double m = sample_variance(y) > 0.0 ? sample_variance(y) : 1.0;
    h.a = m * m / v + 2.0;
    h.b = rule == SigmaPriorRule::verbatim ? m * (m * m / v + 1.0) : m * (h.a - 1.0);
    h.A = 0.1 * Matrix::Identity(p, p);
    h.kappa = 10.0 > static_cast<double>(p) - 1.0 ? 10.0 : static_cast<double>(p) + 1.0;
    return h;
  }
};

/// Parameter state plus the current completion of the covariate matrix.
struct ChainState {
  ModelParams params;
  Matrix imputed;
  long iteration = 0;
};

struct Draw {
  long iteration = 0;
  ModelParams params;
  std::optional<Vector> imputations;  // censored entries, row-major order
};

/// Post burn-in, thinned draws together with the run metadata.
struct DrawStore {
  std::vector<Draw> draws;
  std::uint64_t seed = 0;
  long n_iter = 0;
  long burn_in = 0;
  long thin = 1;
  double scan_prob = 1.0;
  Index p = 0;
  Index r = 1;
  bool has_aux = false;
  bool complete = false;
  std::uint64_t row_updates = 0;          // missing-block updates performed
  std::uint64_t approximate_updates = 0;  // updates that used the Gibbs fallback
  std::vector<std::pair<Index, Index>> censored_entries;

  // Not serialized.
  double sampler_seconds = 0.0;
  std::optional<ChainState> final_state;

  std::size_t size() const { return draws.size(); }
};

/// Moments of x_m | x_o for x ~ N(mean, cov); `missing` lists the indices of
/// the returned block in ascending native order.
struct GaussianConditional {
  Vector mean;
  Matrix cov;
  IndexList missing;
};

/// Condition N(mean, cov) on the entries at `observed_idx` taking the values
/// `observed_vals`. Indices may be given in any order.
inline GaussianConditional partition_gaussian(const Vector& mean, const Matrix& cov, const IndexList& observed_idx,
                                              const Vector& observed_vals) {
  const Index p = mean.size();
  if (cov.rows() != p || cov.cols() != p) throw std::invalid_argument("partition_gaussian: cov must be p x p");
  if (static_cast<Index>(observed_idx.size()) != observed_vals.size())
    throw std::invalid_argument("partition_gaussian: observed index and value counts differ");

  std::vector<char> is_obs(static_cast<std::size_t>(p), 0);
  for (Index j : observed_idx) {
    if (j < 0 || j >= p) throw std::out_of_range("partition_gaussian: observed index out of range");
    if (is_obs[static_cast<std::size_t>(j)]) throw std::invalid_argument("partition_gaussian: duplicate index");
    is_obs[static_cast<std::size_t>(j)] = 1;
  }
  GaussianConditional out;
  for (Index j = 0; j < p; ++j)
    if (!is_obs[static_cast<std::size_t>(j)]) out.missing.push_back(j);

  const Vector mu_m = gather(mean, out.missing);
  const Matrix s_mm = gather(cov, out.missing, out.missing);
  if (observed_idx.empty()) {
    out.mean = mu_m;
    out.cov = s_mm;
    return out;
  }
  const Matrix s_oo = gather(cov, observed_idx, observed_idx);
  const Matrix s_mo = gather(cov, out.missing, observed_idx);
  const auto llt = robust_cholesky(s_oo, "observed covariance block");
  const Vector resid = observed_vals - gather(mean, observed_idx);
  out.mean = mu_m + s_mo * llt.solve(resid);
  out.cov = symmetrize(s_mm - s_mo * llt.solve(s_mo.transpose()));
  return out;
}

struct EntryViolation {
  Index row;
  Index col;
  std::string message;
};

struct DatasetReport {
  std::vector<std::string> dimension_errors;
  std::vector<EntryViolation> violations;
  IndexList fully_censored_rows;
  std::vector<double> censor_fraction_per_column;
  Index censored = 0;
  Index entries = 0;

  /// True when nothing would stop a sampler from running.
  bool ok() const { return dimension_errors.empty() && violations.empty(); }

  std::string summary() const {
    std::ostringstream os;
    os << "censoring fraction " << censored << "/" << entries;
    os << ", " << dimension_errors.size() << " dimension errors";
    os << ", " << violations.size() << " violations";
    os << ", " << fully_censored_rows.size() << " fully censored rows";
    return os.str();
  }
};

inline DatasetReport validate_dataset(const CensoredDataset& d) {
  DatasetReport rep;
  const Index n = d.x.rows();
  const Index p = d.x.cols();
  if (d.y && d.y->size() != n)
    rep.dimension_errors.push_back("y has " + std::to_string(d.y->size()) + " rows, x has " + std::to_string(n));
  if (d.mask.rows() != n || d.mask.cols() != p) rep.dimension_errors.push_back("mask shape differs from x");
  if (d.limits.rows() != n || d.limits.cols() != p) rep.dimension_errors.push_back("limits shape differs from x");
  if (d.w && d.w->rows() != n)
    rep.dimension_errors.push_back("w has " + std::to_string(d.w->rows()) + " rows, x has " + std::to_string(n));
  if (!rep.dimension_errors.empty()) return rep;

  if (d.y) {
    for (Index i = 0; i < n; ++i)
      if (!std::isfinite((*d.y)(i))) rep.violations.push_back({i, -1, "non-finite response"});
  }
  if (d.w) {
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < d.w->cols(); ++k)
        if (!std::isfinite((*d.w)(i, k))) rep.violations.push_back({i, k, "missing auxiliary value"});
  }
  rep.censor_fraction_per_column.assign(static_cast<std::size_t>(p), 0.0);
  for (Index i = 0; i < n; ++i) {
    Index row_censored = 0;
    for (Index j = 0; j < p; ++j) {
      if (d.mask(i, j)) {
        ++row_censored;
        rep.censor_fraction_per_column[static_cast<std::size_t>(j)] += 1.0;
        if (!std::isfinite(d.limits(i, j)))
          rep.violations.push_back({i, j, "censored entry without a finite detection limit"});
        else if (d.x(i, j) != d.limits(i, j))
          rep.violations.push_back({i, j, "censored placeholder differs from its limit"});
      } else if (!std::isfinite(d.x(i, j))) {
        rep.violations.push_back({i, j, "non-finite observed covariate"});
      }
    }
    rep.censored += row_censored;
    if (p > 0 && row_censored == p) rep.fully_censored_rows.push_back(i);
  }
  rep.entries = n * p;
  if (n > 0)
    for (auto& f : rep.censor_fraction_per_column) f /= static_cast<double>(n);
  return rep;
}

}  // namespace censreg
