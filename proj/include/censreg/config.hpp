#pragma once

// JSON pipeline configuration. Every section is optional; missing keys take
// defaults and unknown keys are rejected.

#include "censreg/datagen.hpp"
#include "censreg/evaluate.hpp"
#include "censreg/gibbs.hpp"
#include "censreg/io.hpp"
#include "censreg/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace censreg {

struct DataSection {
  std::optional<GenSpec> generate;
  std::string train;
  std::string train_mask;
  std::string test;
  std::string test_mask;
};

struct PriorSection {
  double tau_beta0 = 1e4;
  double tau_beta = 1e4;
  double tau_gamma = std::sqrt(0.1);
  double A_scale = 0.1;
  std::optional<double> kappa;  // default: 10, or p + 1 when 10 <= p - 1
  SigmaPriorRule sigma_rule = SigmaPriorRule::verbatim;
  double sigma_prior_variance = 2000.0 * 2000.0;
  std::optional<double> a;  // explicit values override the derived ones
  std::optional<double> b;

  PriorHyper resolve(const Vector& y, Index p) const {
    PriorHyper h = PriorHyper::defaults(y, p, sigma_rule, sigma_prior_variance);
    h.tau_beta0 = tau_beta0;
    h.tau_beta = tau_beta;
    h.tau_gamma = tau_gamma;
    h.A = A_scale * Matrix::Identity(p, p);
    if (kappa) h.kappa = *kappa;
    if (a) h.a = *a;
    if (b) h.b = *b;
    h.validate(p);
    return h;
  }
};

struct PredictSection {
  Strategy strategy = Strategy::approximate;
  double checkpoint_ratio = 1.0;
};

struct EvaluateSection {
  std::vector<MethodLabel> methods{MethodLabel::bayesian};
  Index density_points = 512;
  std::vector<Index> density_rows{0};
};

struct BenchmarkSection {
  bool joint_vs_univariate = true;
  std::vector<double> scan_probs{0.1, 0.2, 0.5, 1.0};
  Index prediction_rows = 0;  // rows of the test set scored along the scan curve
};

struct PipelineConfig {
  DataSection data;
  PriorSection prior;
  RunConfig run;
  PredictSection predict;
  EvaluateSection evaluate;
  BenchmarkSection benchmark;
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void read_opt(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <class T>
void read_opt(const json& j, const char* key, std::optional<T>& dst, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read_opt(j, key, v, where);
  dst = v;
}

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline std::string style_name(MissingStyle s) { return s == MissingStyle::joint ? "joint" : "univariate"; }
inline std::string rule_name(SigmaPriorRule r) { return r == SigmaPriorRule::verbatim ? "verbatim" : "mean_matched"; }
inline std::string strategy_name(Strategy s) { return s == Strategy::exact ? "exact" : "approximate"; }

inline GenSpec genspec_from_json(const json& j) {
  const std::string w = "data.generate";
  reject_unknown(j, {"n", "n_test", "p", "r", "block_sizes", "block_rhos", "sigma2", "frac_insignificant", "delta",
                     "target_censor_rate", "aux_share", "seed"},
                 w);
  GenSpec g;
  read_opt(j, "n", g.n, w);
  read_opt(j, "n_test", g.n_test, w);
  read_opt(j, "p", g.p, w);
  read_opt(j, "r", g.r, w);
  read_opt(j, "block_sizes", g.block_sizes, w);
  read_opt(j, "block_rhos", g.block_rhos, w);
  read_opt(j, "sigma2", g.sigma2, w);
  read_opt(j, "frac_insignificant", g.frac_insignificant, w);
  read_opt(j, "delta", g.delta, w);
  read_opt(j, "target_censor_rate", g.target_censor_rate, w);
  read_opt(j, "aux_share", g.aux_share, w);
  read_opt(j, "seed", g.seed, w);
  g.validate();
  return g;
}

inline json genspec_json(const GenSpec& g) {
  return json{{"n", g.n},
              {"n_test", g.n_test},
              {"p", g.p},
              {"r", g.r},
              {"block_sizes", g.block_sizes},
              {"block_rhos", g.block_rhos},
              {"sigma2", g.sigma2},
              {"frac_insignificant", g.frac_insignificant},
              {"delta", opt_json(g.delta)},
              {"target_censor_rate", opt_json(g.target_censor_rate)},
              {"aux_share", opt_json(g.aux_share)},
              {"seed", g.seed}};
}

}  // namespace detail

inline PipelineConfig config_from_json(const json& j) {
  using namespace detail;
  reject_unknown(j, {"data", "prior", "run", "predict", "evaluate", "benchmark"}, "config");
  PipelineConfig c;

  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, {"generate", "train", "train_mask", "test", "test_mask"}, "data");
    if (d.contains("generate") && !d["generate"].is_null()) c.data.generate = genspec_from_json(d["generate"]);
    read_opt(d, "train", c.data.train, "data");
    read_opt(d, "train_mask", c.data.train_mask, "data");
    read_opt(d, "test", c.data.test, "data");
    read_opt(d, "test_mask", c.data.test_mask, "data");
  }

  if (j.contains("prior")) {
    const auto& p = j["prior"];
    const std::string w = "prior";
    reject_unknown(p, {"tau_beta0", "tau_beta", "tau_gamma", "A_scale", "kappa", "sigma_rule", "sigma_prior_variance",
                       "a", "b"},
                   w);
    read_opt(p, "tau_beta0", c.prior.tau_beta0, w);
    read_opt(p, "tau_beta", c.prior.tau_beta, w);
    read_opt(p, "tau_gamma", c.prior.tau_gamma, w);
    read_opt(p, "A_scale", c.prior.A_scale, w);
    read_opt(p, "kappa", c.prior.kappa, w);
    std::string rule = rule_name(c.prior.sigma_rule);
    read_opt(p, "sigma_rule", rule, w);
    if (rule == "verbatim")
      c.prior.sigma_rule = SigmaPriorRule::verbatim;
    else if (rule == "mean_matched")
      c.prior.sigma_rule = SigmaPriorRule::mean_matched;
    else
      throw ConfigError("prior.sigma_rule must be 'verbatim' or 'mean_matched'");
    read_opt(p, "sigma_prior_variance", c.prior.sigma_prior_variance, w);
    read_opt(p, "a", c.prior.a, w);
    read_opt(p, "b", c.prior.b, w);
  }

  if (j.contains("run")) {
    const auto& r = j["run"];
    const std::string w = "run";
    reject_unknown(r, {"n_iter", "burn_in", "thin", "scan_prob", "seed", "exact_dim_cap", "store_imputations",
                       "missing_style", "threads"},
                   w);
    read_opt(r, "n_iter", c.run.n_iter, w);
    read_opt(r, "burn_in", c.run.burn_in, w);
    read_opt(r, "thin", c.run.thin, w);
    read_opt(r, "scan_prob", c.run.scan_prob, w);
    read_opt(r, "seed", c.run.seed, w);
    read_opt(r, "exact_dim_cap", c.run.exact_dim_cap, w);
    read_opt(r, "store_imputations", c.run.store_imputations, w);
    read_opt(r, "threads", c.run.threads, w);
    std::string style = style_name(c.run.missing_style);
    read_opt(r, "missing_style", style, w);
    if (style == "joint")
      c.run.missing_style = MissingStyle::joint;
    else if (style == "univariate")
      c.run.missing_style = MissingStyle::univariate;
    else
      throw ConfigError("run.missing_style must be 'joint' or 'univariate'");
  }
  c.run.validate();

  if (j.contains("predict")) {
    const auto& p = j["predict"];
    reject_unknown(p, {"strategy", "checkpoint_ratio"}, "predict");
    std::string s = strategy_name(c.predict.strategy);
    read_opt(p, "strategy", s, "predict");
    if (s == "exact")
      c.predict.strategy = Strategy::exact;
    else if (s == "approximate")
      c.predict.strategy = Strategy::approximate;
    else
      throw ConfigError("predict.strategy must be 'exact' or 'approximate'");
    read_opt(p, "checkpoint_ratio", c.predict.checkpoint_ratio, "predict");
    if (!(c.predict.checkpoint_ratio > 0.0)) throw ConfigError("predict.checkpoint_ratio must be positive");
  }

  if (j.contains("evaluate")) {
    const auto& e = j["evaluate"];
    reject_unknown(e, {"methods", "density_points", "density_rows"}, "evaluate");
    if (e.contains("methods")) {
      std::vector<std::string> names;
      read_opt(e, "methods", names, "evaluate");
      c.evaluate.methods.clear();
      try {
        for (const auto& n : names) c.evaluate.methods.push_back(method_from_string(n));
      } catch (const std::exception& ex) {
        throw ConfigError(std::string("evaluate.methods: ") + ex.what());
      }
    }
    read_opt(e, "density_points", c.evaluate.density_points, "evaluate");
    read_opt(e, "density_rows", c.evaluate.density_rows, "evaluate");
    if (c.evaluate.density_points < 2) throw ConfigError("evaluate.density_points must be >= 2");
  }

  if (j.contains("benchmark")) {
    const auto& b = j["benchmark"];
    reject_unknown(b, {"joint_vs_univariate", "scan_probs", "prediction_rows"}, "benchmark");
    read_opt(b, "joint_vs_univariate", c.benchmark.joint_vs_univariate, "benchmark");
    read_opt(b, "scan_probs", c.benchmark.scan_probs, "benchmark");
    read_opt(b, "prediction_rows", c.benchmark.prediction_rows, "benchmark");
    for (double p : c.benchmark.scan_probs)
      if (!(p > 0.0 && p <= 1.0)) throw ConfigError("benchmark.scan_probs entries must lie in (0, 1]");
  }
  return c;
}

inline json config_to_json(const PipelineConfig& c) {
  using namespace detail;
  json data{{"train", c.data.train},
            {"train_mask", c.data.train_mask},
            {"test", c.data.test},
            {"test_mask", c.data.test_mask}};
  data["generate"] = c.data.generate ? genspec_json(*c.data.generate) : json(nullptr);
  json methods = json::array();
  for (auto m : c.evaluate.methods) methods.push_back(to_string(m));
  return json{
      {"data", data},
      {"prior",
       {{"tau_beta0", c.prior.tau_beta0},
        {"tau_beta", c.prior.tau_beta},
        {"tau_gamma", c.prior.tau_gamma},
        {"A_scale", c.prior.A_scale},
        {"kappa", opt_json(c.prior.kappa)},
        {"sigma_rule", rule_name(c.prior.sigma_rule)},
        {"sigma_prior_variance", c.prior.sigma_prior_variance},
        {"a", opt_json(c.prior.a)},
        {"b", opt_json(c.prior.b)}}},
      {"run",
       {{"n_iter", c.run.n_iter},
        {"burn_in", c.run.burn_in},
        {"thin", c.run.thin},
        {"scan_prob", c.run.scan_prob},
        {"seed", c.run.seed},
        {"exact_dim_cap", c.run.exact_dim_cap},
        {"store_imputations", c.run.store_imputations},
        {"missing_style", style_name(c.run.missing_style)},
        {"threads", c.run.threads}}},
      {"predict", {{"strategy", strategy_name(c.predict.strategy)}, {"checkpoint_ratio", c.predict.checkpoint_ratio}}},
      {"evaluate",
       {{"methods", methods}, {"density_points", c.evaluate.density_points}, {"density_rows", c.evaluate.density_rows}}},
      {"benchmark",
       {{"joint_vs_univariate", c.benchmark.joint_vs_univariate},
        {"scan_probs", c.benchmark.scan_probs},
        {"prediction_rows", c.benchmark.prediction_rows}}}};
}

inline PipelineConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline std::string serialize_config(const PipelineConfig& c) { return dump17(config_to_json(c)); }

}  // namespace censreg
