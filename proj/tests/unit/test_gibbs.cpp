#include "censreg/datagen.hpp"
#include "censreg/evaluate.hpp"
#include "censreg/gibbs.hpp"
#include "helpers.hpp"

#include <Eigen/QR>
#include <gtest/gtest.h>

#include <atomic>
#include <limits>

using namespace censreg;

namespace {

GeneratedData small_censored(std::uint64_t seed, Index n = 60, double rate = 0.3) {
  GenSpec g;
  g.n = n;
  g.n_test = 10;
  g.p = 4;
  g.block_sizes = {2, 2};
  g.block_rhos = {0.7, 0.5};
  g.target_censor_rate = rate;
  g.seed = seed;
  return generate(g);
}

RunConfig short_run(long iters = 300, long burn = 100) {
  RunConfig c;
  c.n_iter = iters;
  c.burn_in = burn;
  c.seed = 77;
  return c;
}

bool same_draws(const DrawStore& a, const DrawStore& b) {
  if (a.draws.size() != b.draws.size()) return false;
  for (std::size_t k = 0; k < a.draws.size(); ++k) {
    const auto& x = a.draws[k];
    const auto& y = b.draws[k];
    if (x.iteration != y.iteration || x.params.beta0 != y.params.beta0 || x.params.beta != y.params.beta ||
        x.params.sigma2 != y.params.sigma2 || x.params.gamma != y.params.gamma || x.params.omega != y.params.omega)
      return false;
    if (x.imputations.has_value() != y.imputations.has_value()) return false;
    if (x.imputations && *x.imputations != *y.imputations) return false;
  }
  return true;
}

}  // namespace

TEST(RunConfig, Validation) {
  RunConfig c;
  c.burn_in = c.n_iter;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.scan_prob = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.thin = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InitializeState, AllObservedUsesRidgeFit) {
  Rng rng = make_stream(1, StreamKind::generate);
  const Index n = 25, p = 3;
  Matrix x(n, p);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    x.row(i) = testing_util::random_vector(rng, p).transpose();
    y(i) = 0.5 + x.row(i).sum() + std_normal(rng);
  }
  const auto d = CensoredDataset::complete(y, x);
  const auto prior = PriorHyper::defaults(y, p);
  const auto s = initialize_state(d, prior);
  EXPECT_EQ(s.imputed, x);
  // ridge oracle through a QR solve of the augmented least-squares system
  Matrix aug = Matrix::Zero(n + p + 1, p + 1);
  aug.topLeftCorner(n, 1).setOnes();
  aug.topRightCorner(n, p) = x;
  aug(n, 0) = 1.0 / prior.tau_beta0;
  for (Index j = 0; j < p; ++j) aug(n + 1 + j, 1 + j) = 1.0 / prior.tau_beta;
  Vector rhs = Vector::Zero(n + p + 1);
  rhs.head(n) = y;
  const Vector coef = aug.colPivHouseholderQr().solve(rhs);
  EXPECT_NEAR(s.params.beta0, coef(0), 1e-6);
  EXPECT_LT((s.params.beta - coef.tail(p)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(InitializeState, HalfColumnSdBelowLimit) {
  CensoredDataset d = CensoredDataset::complete(Vector::LinSpaced(4, 0, 3), Matrix(4, 2));
  d.x << 0.0, 1.0, 1.0, 0.5, 2.0, 0.2, 2.0, 0.9;
  d.mask(3, 0) = true;
  d.limits(3, 0) = 2.0;  // observed column values {0, 1, 2}: sd 1
  const auto s = initialize_state(d, PriorHyper::defaults(*d.y, 2));
  EXPECT_DOUBLE_EQ(s.imputed(3, 0), 1.5);
}

TEST(InitializeState, ConstantColumnStartsOneBelow) {
  CensoredDataset d = CensoredDataset::complete(Vector::LinSpaced(4, 0, 3), Matrix(4, 2));
  d.x << 1.0, 1.0, 1.0, 0.5, 1.0, 0.2, 2.0, 0.9;
  d.mask(3, 0) = true;
  d.limits(3, 0) = 2.0;
  const auto s = initialize_state(d, PriorHyper::defaults(*d.y, 2));
  EXPECT_DOUBLE_EQ(s.imputed(3, 0), 1.0);
}

TEST(InitializeState, OmegaSpdAcrossRandomDatasets) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto g = small_censored(seed, 20 + static_cast<Index>(seed % 30), 0.2 + 0.002 * static_cast<double>(seed));
    const auto s = initialize_state(g.train, PriorHyper::defaults(*g.train.y, 4));
    EXPECT_TRUE(is_spd(s.params.omega)) << "seed " << seed;
    for (Index i = 0; i < g.train.n(); ++i)
      for (Index j = 0; j < 4; ++j)
        if (g.train.mask(i, j)) {
          EXPECT_LT(s.imputed(i, j), g.train.limits(i, j));
        }
  }
}

TEST(RunChain, FullScanUpdatesEveryRow) {
  const auto g = small_censored(2);
  auto cfg = short_run(50, 10);
  cfg.scan_prob = 1.0;
  const auto store = run_chain(g.train, PriorHyper::defaults(*g.train.y, 4), cfg);
  EXPECT_EQ(store.row_updates, 50u * g.train.censored_rows().size());
  EXPECT_EQ(store.draws.size(), 40u);
  EXPECT_TRUE(store.complete);
}

TEST(RunChain, Deterministic) {
  const auto g = small_censored(3);
  auto cfg = short_run();
  cfg.store_imputations = true;
  const auto prior = PriorHyper::defaults(*g.train.y, 4);
  EXPECT_TRUE(same_draws(run_chain(g.train, prior, cfg), run_chain(g.train, prior, cfg)));
}

TEST(RunChain, ThreadCountDoesNotChangeDraws) {
  const auto g = small_censored(4, 120);
  auto cfg = short_run();
  cfg.store_imputations = true;
  cfg.scan_prob = 0.5;
  const auto prior = PriorHyper::defaults(*g.train.y, 4);
  const auto serial = run_chain(g.train, prior, cfg);
  cfg.threads = 3;
  EXPECT_TRUE(same_draws(serial, run_chain(g.train, prior, cfg)));
}

TEST(RunChain, UnselectedRowsCarryForward) {
  const auto g = small_censored(5);
  auto cfg = short_run(200, 50);
  cfg.scan_prob = 0.2;
  const auto prior = PriorHyper::defaults(*g.train.y, 4);
  Matrix prev = initialize_state(g.train, prior).imputed;
  long selected = 0, unchanged = 0, mismatched = 0;
  RunHooks hooks;
  hooks.on_iteration = [&](const ChainState& s) {
    for (Index i : g.train.censored_rows()) {
      Rng rng = make_stream(cfg.seed, StreamKind::missing, static_cast<std::uint64_t>(s.iteration),
                            static_cast<std::uint64_t>(i));
      const bool sel = open_uniform(rng) < cfg.scan_prob;
      const bool same = s.imputed.row(i) == prev.row(i);
      selected += sel;
      unchanged += same;
      if (sel == same) ++mismatched;
    }
    prev = s.imputed;
  };
  const auto store = run_chain(g.train, prior, cfg, hooks);
  EXPECT_EQ(mismatched, 0);
  EXPECT_EQ(static_cast<std::uint64_t>(selected), store.row_updates);
  const double frac = static_cast<double>(selected) / (200.0 * g.train.censored_rows().size());
  EXPECT_NEAR(frac, 0.2, 0.03);
}

TEST(RunChain, StoredDrawsAreValid) {
  const auto g = small_censored(6);
  auto cfg = short_run();
  cfg.store_imputations = true;
  const auto store = run_chain(g.train, PriorHyper::defaults(*g.train.y, 4), cfg);
  for (const auto& dr : store.draws) {
    EXPECT_GT(dr.params.sigma2, 0.0);
    EXPECT_TRUE(is_spd(dr.params.omega));
    ASSERT_TRUE(dr.imputations.has_value());
    for (std::size_t e = 0; e < store.censored_entries.size(); ++e) {
      const auto [i, j] = store.censored_entries[e];
      ASSERT_LE((*dr.imputations)(static_cast<Index>(e)), g.train.limits(i, j));
    }
  }
}

TEST(RunChain, CancelledRunIsIncomplete) {
  const auto g = small_censored(7);
  std::atomic<bool> stop{false};
  RunHooks hooks;
  hooks.cancel = &stop;
  hooks.on_iteration = [&](const ChainState& s) {
    if (s.iteration == 150) stop = true;
  };
  const auto store = run_chain(g.train, PriorHyper::defaults(*g.train.y, 4), short_run(), hooks);
  EXPECT_FALSE(store.complete);
  EXPECT_EQ(store.draws.size(), 50u);
}

TEST(RunChain, BlockFailureCarriesPartialStore) {
  const auto g = small_censored(8);
  RunHooks hooks;
  hooks.on_iteration = [](const ChainState& s) {
    if (s.iteration == 120) throw std::runtime_error("injected");
  };
  try {
    run_chain(g.train, PriorHyper::defaults(*g.train.y, 4), short_run(), hooks);
    FAIL() << "expected ChainError";
  } catch (const ChainError& e) {
    EXPECT_EQ(e.iteration(), 120);
    EXPECT_FALSE(e.partial().complete);
    EXPECT_EQ(e.partial().draws.size(), 20u);
  }
}

TEST(RunChain, RejectsInvalidDataset) {
  auto g = small_censored(9);
  const Index i = g.train.censored_rows().front();
  const Index j = g.train.censored_columns(i).front();
  g.train.x(i, j) -= 1.0;
  EXPECT_THROW(run_chain(g.train, PriorHyper::defaults(*g.train.y, 4), short_run()), std::invalid_argument);
}

TEST(RunChain, ZeroCensoringMatchesConjugatePosterior) {
  Rng rng = make_stream(10, StreamKind::generate);
  const Index n = 50, p = 3;
  Matrix x(n, p);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    x.row(i) = testing_util::random_vector(rng, p).transpose();
    y(i) = 1.0 + 2.0 * x(i, 0) - x(i, 1) + 1.5 * std_normal(rng);
  }
  const auto d = CensoredDataset::complete(y, x);
  const auto prior = PriorHyper::defaults(y, p);
  RunConfig cfg;
  cfg.n_iter = 6000;
  cfg.burn_in = 1000;
  cfg.seed = 3;
  const auto store = run_chain(d, prior, cfg);
  // flat-coefficient oracle: E[beta] = OLS (prior precision 1e-8 is negligible)
  Matrix design(n, p + 1);
  design << Vector::Ones(n), x;
  const Vector ols = design.colPivHouseholderQr().solve(y);
  for (Index j = 0; j <= p; ++j) {
    std::vector<double> tr;
    for (const auto& dr : store.draws) tr.push_back(j == 0 ? dr.params.beta0 : dr.params.beta(j - 1));
    const double m = std::accumulate(tr.begin(), tr.end(), 0.0) / static_cast<double>(tr.size());
    double v = 0.0;
    for (double t : tr) v += (t - m) * (t - m);
    v /= static_cast<double>(tr.size() - 1);
    const double se = std::sqrt(v / ess(tr));
    EXPECT_NEAR(m, ols(j), 3.0 * se) << "coefficient " << j;
  }
}

// Successive-conditional simulation: alternate one sweep of the sampler with
// a fresh draw of the data given the current parameters. At stationarity the
// parameter marginals equal the prior.
TEST(RunChain, SuccessiveConditionalRecoversPrior) {
  const Index n = 10, p = 2;
  PriorHyper prior;
  prior.tau_beta0 = 1.0;
  prior.tau_beta = 1.0;
  prior.a = 6.0;
  prior.b = 5.0;
  prior.tau_gamma = 1.0;
  prior.A = Matrix::Identity(p, p);
  prior.kappa = 5.0;
  const double limit = -0.3;

  Rng rng = make_stream(2024, StreamKind::generate);
  ModelParams th;
  th.beta0 = std_normal(rng);
  th.beta = testing_util::random_vector(rng, p);
  th.sigma2 = draw_inverse_gamma(rng, {prior.a, prior.b});
  th.omega = draw_inverse_wishart(rng, prior.A, prior.kappa);
  th.gamma = testing_util::random_vector(rng, p).transpose() * Matrix(th.omega.llt().matrixL()).transpose();

  CensoredDataset d = CensoredDataset::complete(Vector(n), Matrix(n, p));
  ChainState s;
  auto resimulate = [&] {
    const Matrix lo = th.omega.llt().matrixL();
    s.imputed.resize(n, p);
    for (Index i = 0; i < n; ++i) {
      const Vector xi = th.gamma.row(0).transpose() + lo * testing_util::random_vector(rng, p);
      s.imputed.row(i) = xi.transpose();
      (*d.y)(i) = th.beta0 + th.beta.dot(xi) + std::sqrt(th.sigma2) * std_normal(rng);
      for (Index j = 0; j < p; ++j) {
        const bool c = xi(j) < limit;
        d.mask(i, j) = c;
        d.limits(i, j) = c ? limit : -std::numeric_limits<double>::infinity();
        d.x(i, j) = c ? limit : xi(j);
      }
    }
  };
  resimulate();
  const int iters = 200000;
  std::vector<double> b0, b1, s2;
  for (int t = 0; t < iters; ++t) {
    s.params = th;
    s = draw_block(rng, Block::beta, d, s, prior);
    s = draw_block(rng, Block::sigma2, d, s, prior);
    s = draw_block(rng, Block::gamma_omega, d, s, prior);
    for (Index i = 0; i < n; ++i)
      if (d.row_censored(i)) s = draw_block(rng, Block::missing, d, s, prior, i);
    th = s.params;
    resimulate();
    b0.push_back(th.beta0);
    b1.push_back(th.beta(0));
    s2.push_back(th.sigma2);
  }
  auto check = [](const std::vector<double>& v, double mean, double second, const char* what) {
    const double n_eff = ess(v);
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    std::vector<double> squares;
    double fourth = 0.0;
    for (double x : v) {
      squares.push_back(x * x);
      fourth += x * x * x * x;
    }
    const double sq = std::accumulate(squares.begin(), squares.end(), 0.0) / static_cast<double>(v.size());
    fourth /= static_cast<double>(v.size());
    const double sd = std::sqrt(sq - m * m);
    EXPECT_NEAR(m, mean, 3.0 * sd / std::sqrt(n_eff)) << what;
    // the squared series has its own autocorrelation
    EXPECT_NEAR(sq, second, 3.0 * std::sqrt((fourth - sq * sq) / ess(squares))) << what;
  };
  check(b0, 0.0, 1.0, "beta0");
  check(b1, 0.0, 1.0, "beta1");
  // IG(6, 5): mean 1, second moment b^2 / ((a-1)(a-2)) = 1.25
  check(s2, 1.0, 1.25, "sigma2");
}
