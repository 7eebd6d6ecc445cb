// censreg: simulate | fit | predict | evaluate | benchmark

#include "censreg/config.hpp"
#include "censreg/datagen.hpp"
#include "censreg/evaluate.hpp"
#include "censreg/gibbs.hpp"
#include "censreg/io.hpp"
#include "censreg/predict.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace censreg;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::optional<int> threads;
};

struct Artifact {
  std::string path;
  bool deterministic = true;
};

class Output {
 public:
  explicit Output(std::string dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  std::string path(const std::string& name) const { return (fs::path(dir_) / name).string(); }

  void write(const std::string& name, const std::string& content, bool deterministic = true) {
    auto f = open_out(path(name));
    f << content;
    if (!f) throw std::runtime_error("failed writing '" + path(name) + "'");
    artifacts_.push_back({name, deterministic});
  }

  template <class Fn>
  void write_with(const std::string& name, Fn&& fn, bool deterministic = true) {
    std::ostringstream os;
    fn(os);
    write(name, os.str(), deterministic);
  }

  void manifest(const std::string& command, const json& config, const json& inputs) const {
    json arts = json::array();
    for (const auto& a : artifacts_) {
      const auto p = path(a.path);
      json e{{"path", a.path}, {"bytes", fs::file_size(p)}, {"deterministic", a.deterministic}};
      e["sha256"] = a.deterministic ? json(sha256_file(p)) : json(nullptr);
      arts.push_back(e);
    }
    const json m{{"command", command}, {"inputs", inputs}, {"config", config}, {"artifacts", arts}};
    auto f = open_out(path("MANIFEST.json"));
    f << m.dump(2) << '\n';
  }

  static std::string sha256_file(const std::string& p) {
    auto f = open_in(p);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string data = ss.str();
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("SHA-256 computation failed");
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", md[i]);
      hex += buf;
    }
    return hex;
  }

 private:
  std::string dir_;
  std::vector<Artifact> artifacts_;
};

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg;
  if (!c.config_path.empty()) {
    auto f = open_in(c.config_path);
    std::ostringstream ss;
    ss << f.rdbuf();
    cfg = parse_config(ss.str());
  }
  if (c.seed) {
    cfg.run.seed = *c.seed;
    if (cfg.data.generate) cfg.data.generate->seed = *c.seed;
  }
  if (c.threads) cfg.run.threads = *c.threads;
  cfg.run.validate();
  return cfg;
}

json truth_json(const GeneratedData& g, const GenSpec& spec) {
  return json{{"params", params_json(g.truth)},
              {"delta", g.delta},
              {"train_censor_rate", g.train_censor_rate},
              {"r_squared", g.r_squared},
              {"generate", detail::genspec_json(spec)}};
}

std::string dataset_text(const CensoredDataset& d, CensorEncoding enc = CensorEncoding::inline_star) {
  std::ostringstream os;
  write_dataset_csv(os, d, enc);
  return os.str();
}

/// Training data from an explicit path, the config's path, or the config's
/// generator, in that order.
CensoredDataset load_train(const PipelineConfig& cfg, const std::string& path, const std::string& mask) {
  if (!path.empty()) return read_dataset_file(path, mask);
  if (!cfg.data.train.empty()) return read_dataset_file(cfg.data.train, cfg.data.train_mask);
  if (cfg.data.generate) return generate(*cfg.data.generate).train;
  throw ConfigError("no training data: pass --train or set data.train or data.generate");
}

CensoredDataset load_test(const PipelineConfig& cfg, const std::string& path, const std::string& mask) {
  if (!path.empty()) return read_dataset_file(path, mask);
  if (!cfg.data.test.empty()) return read_dataset_file(cfg.data.test, cfg.data.test_mask);
  throw ConfigError("no test data: pass --test or set data.test");
}

void require_valid(const CensoredDataset& d, const std::string& what) {
  const auto rep = validate_dataset(d);
  if (!rep.dimension_errors.empty()) throw std::invalid_argument(what + ": " + rep.dimension_errors.front());
  if (!rep.violations.empty()) {
    // map back to 1-based CSV columns: y, x1..xp, w1..wr
    const auto& v = rep.violations.front();
    const long y_off = d.y ? 1 : 0;
    long col = 1;
    if (v.col >= 0) col = v.message == "missing auxiliary value" ? y_off + d.p() + v.col + 1 : y_off + v.col + 1;
    throw ParseError(v.row + 1, col, what + ": " + v.message);
  }
}

// --- subcommands ------------------------------------------------------------------

int cmd_simulate(const Common& c) {
  const auto cfg = load_config(c);
  if (!cfg.data.generate) throw ConfigError("simulate needs data.generate in the config");
  const GenSpec& spec = *cfg.data.generate;
  const auto g = generate(spec);
  Output out(c.out_dir);
  out.write("train.csv", dataset_text(g.train));
  out.write("train_sidecar.csv", dataset_text(g.train, CensorEncoding::sidecar));
  out.write_with("train_mask.csv", [&](std::ostream& os) { write_mask_csv(os, g.train); });
  out.write("test.csv", dataset_text(g.test));
  out.write("train_complete.csv", dataset_text(g.complete_train()));
  out.write("test_complete.csv", dataset_text(g.complete_test()));
  out.write("truth.json", dump17(truth_json(g, spec)) + "\n");
  out.manifest("simulate", config_to_json(cfg), json::object());
  return 0;
}

int cmd_fit(const Common& c, const std::string& train_path, const std::string& mask_path, const std::string& method) {
  const auto cfg = load_config(c);
  const MethodLabel label = method_from_string(method);
  const CensoredDataset raw = load_train(cfg, train_path, mask_path);
  require_valid(raw, "training data");
  if (!raw.y) throw ConfigError("training data needs a y column");
  const CensoredDataset d = prepare_for_method(raw, label);
  const PriorHyper prior = cfg.prior.resolve(*d.y, d.p());
  const DrawStore store = run_chain(d, prior, cfg.run);
  Output out(c.out_dir);
  out.write_with("drawstore.ndjson", [&](std::ostream& os) { write_drawstore(os, store); });
  const json summary{{"method", to_string(label)},
                     {"draws", store.draws.size()},
                     {"posterior_mean", params_json(posterior_mean(store))},
                     {"row_updates", store.row_updates},
                     {"approximate_updates", store.approximate_updates}};
  out.write("fit_summary.json", dump17(summary) + "\n");
  out.manifest("fit", config_to_json(cfg), json{{"train", train_path}, {"train_mask", mask_path}, {"method", method}});
  return 0;
}

int cmd_predict(const Common& c, const std::string& store_path, const std::string& test_path,
                const std::string& test_mask, const std::string& train_path, const std::string& train_mask,
                const std::string& method) {
  const auto cfg = load_config(c);
  const MethodLabel label = method_from_string(method);
  const CensoredDataset raw_test = load_test(cfg, test_path, test_mask);
  require_valid(raw_test, "test data");
  CensoredDataset test = prepare_for_method(raw_test, label);
  const std::optional<Vector> y_known = test.y;
  test.y.reset();

  std::vector<PredictiveDraws> preds;
  json info{{"method", to_string(label)}, {"strategy", detail::strategy_name(cfg.predict.strategy)}};
  if (cfg.predict.strategy == Strategy::approximate) {
    if (store_path.empty()) throw ConfigError("approximate prediction needs --store");
    auto f = open_in(store_path);
    const DrawStore store = read_drawstore(f);
    preds = predict_batch(store, test, cfg.run.seed, cfg.run.threads, 0,
                          tmvn::Options{.exact_dim_cap = cfg.run.exact_dim_cap});
    if (!train_path.empty()) {
      const auto n_train = read_dataset_file(train_path, train_mask).n();
      info["checkpoint"] =
          checkpoint_policy(n_train, test.n(), cfg.predict.checkpoint_ratio) == Checkpoint::refit ? "refit" : "reuse";
    }
  } else {
    const CensoredDataset raw_train = load_train(cfg, train_path, train_mask);
    require_valid(raw_train, "training data");
    const CensoredDataset train = prepare_for_method(raw_train, label);
    if (!train.y) throw ConfigError("training data needs a y column");
    const PriorHyper prior = cfg.prior.resolve(*train.y, train.p());
    if (test.n() > 0) {
      DrawStore store;
      preds.push_back(predict_exact(train, test, 0, prior, cfg.run, nullptr, &store));
      for (Index i = 1; i < test.n(); ++i) {
        auto pd = predict_approximate(store, row_of(test, i, false), cfg.run.seed, train.n() + i,
                                      tmvn::Options{.exact_dim_cap = cfg.run.exact_dim_cap});
        pd.strategy = Strategy::exact;
        preds.push_back(std::move(pd));
      }
    }
    info["checkpoint"] =
        checkpoint_policy(train.n(), test.n(), cfg.predict.checkpoint_ratio) == Checkpoint::refit ? "refit" : "reuse";
  }
  bool approx = false;
  for (const auto& p : preds) approx = approx || p.approximate_tmvn;
  info["rows"] = preds.size();
  info["approximate_tmvn"] = approx;

  Output out(c.out_dir);
  out.write_with("predictive_draws.csv", [&](std::ostream& os) { write_predictive_draws(os, preds); });
  out.write_with("predictive_components.csv", [&](std::ostream& os) { write_predictive_components(os, preds); });
  out.write_with("predictive_summary.csv", [&](std::ostream& os) { write_predictive_summary(os, preds, y_known); });
  out.write("predict_info.json", dump17(info) + "\n");
  out.manifest("predict", config_to_json(cfg),
               json{{"store", store_path}, {"test", test_path}, {"test_mask", test_mask}, {"train", train_path},
                    {"method", method}});
  return 0;
}

struct PredEntry {
  MethodLabel label;
  std::string dir;
  std::string truth;
};

/// LABEL=DIR or LABEL=DIR,TRUTH; without --pred, one entry per configured
/// method read from PRED_ROOT/LABEL.
std::vector<PredEntry> pred_entries(const PipelineConfig& cfg, const std::vector<std::string>& specs,
                                    const std::string& pred_root, const std::string& truth) {
  std::vector<PredEntry> out;
  for (const auto& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--pred expects LABEL=DIR[,TRUTH], got '" + spec + "'");
    PredEntry e{method_from_string(spec.substr(0, eq)), spec.substr(eq + 1), truth};
    const auto comma = e.dir.find(',');
    if (comma != std::string::npos) {
      e.truth = e.dir.substr(comma + 1);
      e.dir.resize(comma);
    }
    out.push_back(e);
  }
  if (out.empty()) {
    if (pred_root.empty()) throw ConfigError("evaluate needs --pred LABEL=DIR or --pred-root");
    for (auto m : cfg.evaluate.methods) out.push_back({m, (fs::path(pred_root) / to_string(m)).string(), truth});
  }
  for (const auto& e : out)
    if (e.truth.empty() && cfg.data.test.empty()) throw ConfigError("no truth file for '" + e.dir + "'");
  return out;
}

void write_density(Output& out, const std::string& name, const char* column, std::span<const double> samples,
                   Index points) {
  GridSpec gs;
  gs.points = points;
  const auto dens = emit_density_data(samples, gs);
  out.write_with(name, [&](std::ostream& os) {
    os << column << ",density\n";
    for (Index g = 0; g < dens.grid.size(); ++g) os << fmt17(dens.grid(g)) << ',' << fmt17(dens.density(g)) << '\n';
  });
}

int cmd_evaluate(const Common& c, const std::vector<std::string>& pred_specs, const std::string& pred_root,
                 const std::string& truth_path) {
  const auto cfg = load_config(c);
  const auto entries = pred_entries(cfg, pred_specs, pred_root, truth_path);
  Output out(c.out_dir);
  json totals = json::array();
  std::ostringstream table;
  table << "method,dataset,total_log_score,rows\n";
  std::map<std::string, std::vector<double>> pooled;
  std::map<std::string, int> seen;
  for (const auto& e : entries) {
    const CensoredDataset truth = load_test(cfg, e.truth, {});
    if (!truth.y) throw ConfigError("truth file needs a y column");
    auto draws_f = open_in((fs::path(e.dir) / "predictive_draws.csv").string());
    auto comp_f = open_in((fs::path(e.dir) / "predictive_components.csv").string());
    const auto preds = read_predictions(draws_f, comp_f);
    const auto rep = log_predictive_score(preds, *truth.y, e.label);
    const std::string name = to_string(e.label);
    const int k = ++seen[name];
    const std::string tag = k == 1 ? name : name + "_" + std::to_string(k);
    out.write_with("score_" + tag + ".csv", [&](std::ostream& os) {
      os << "row_id,log_score\n";
      for (Index i = 0; i < rep.per_row_log_scores.size(); ++i)
        os << i << ',' << fmt17(rep.per_row_log_scores(i)) << '\n';
    });
    const json j{{"method", name}, {"dataset", k}, {"total", rep.total}, {"rows", rep.per_row_log_scores.size()}};
    out.write("score_" + tag + ".json", dump17(j) + "\n");
    totals.push_back(j);
    table << name << ',' << k << ',' << fmt17(rep.total) << ',' << rep.per_row_log_scores.size() << '\n';
    auto& pool = pooled[name];
    pool.insert(pool.end(), rep.per_row_log_scores.begin(), rep.per_row_log_scores.end());

    for (Index row : cfg.evaluate.density_rows) {
      if (row < 0 || row >= static_cast<Index>(preds.size())) continue;
      const auto& y = preds[static_cast<std::size_t>(row)].y_draws;
      write_density(out, "density_" + tag + "_row" + std::to_string(row) + ".csv", "y",
                    std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                    cfg.evaluate.density_points);
    }
  }
  // log scores pooled over every dataset of a method
  for (const auto& [name, v] : pooled)
    write_density(out, "score_density_" + name + ".csv", "log_score", v, cfg.evaluate.density_points);
  out.write("scores.csv", table.str());
  out.write("score_report.json", dump17(json{{"scores", totals}}) + "\n");
  out.manifest("evaluate", config_to_json(cfg),
               json{{"pred", pred_specs}, {"pred_root", pred_root}, {"truth", truth_path}});
  return 0;
}

int cmd_benchmark(const Common& c, const std::string& train_path, const std::string& mask_path) {
  const auto cfg = load_config(c);
  const CensoredDataset d = load_train(cfg, train_path, mask_path);
  require_valid(d, "training data");
  if (!d.y) throw ConfigError("training data needs a y column");
  const PriorHyper prior = cfg.prior.resolve(*d.y, d.p());
  Output out(c.out_dir);
  json timings;

  if (cfg.benchmark.joint_vs_univariate) {
    RunConfig run = cfg.run;
    const auto rep = compare_joint_vs_univariate(d, prior, run);
    RunConfig probe = run;
    probe.n_iter = 1;
    probe.burn_in = 0;
    const auto entries = run_chain(d, prior, probe).censored_entries;
    out.write_with("joint_vs_univariate.csv", [&](std::ostream& os) {
      os << "entry,row,column,ess_ratio\n";
      for (std::size_t e = 0; e < rep.ratios.size(); ++e)
        os << e << ',' << entries[e].first << ',' << entries[e].second << ',' << fmt17(rep.ratios[e]) << '\n';
    });
    json q = json::array();
    for (double v : rep.quantiles) q.push_back(v);
    out.write("joint_vs_univariate_summary.json",
              dump17(json{{"draws", rep.draws}, {"entries", rep.ratios.size()}, {"quantiles_0_25_50_75_100", q}}) +
                  "\n");
    timings["joint_vs_univariate"] = {{"joint_seconds", rep.joint_seconds},
                                      {"univariate_seconds", rep.univariate_seconds},
                                      {"time_ratio", rep.time_ratio}};
  }

  if (!cfg.benchmark.scan_probs.empty()) {
    std::optional<CensoredDataset> rows;
    if (cfg.benchmark.prediction_rows > 0 && cfg.data.generate) {
      CensoredDataset t = generate(*cfg.data.generate).test;
      rows = detail::head_rows(t, cfg.benchmark.prediction_rows);
    }
    const auto scan = random_scan_efficiency(d, prior, cfg.benchmark.scan_probs, cfg.run, rows ? &*rows : nullptr);
    out.write_with("random_scan.csv", [&](std::ostream& os) {
      os << "scan_prob,beta_ess,imputation_ess,predictive_ess\n";
      for (const auto& r : scan)
        os << fmt17(r.scan_prob) << ',' << fmt17(r.beta_ess) << ',' << fmt17(r.imputation_ess) << ','
           << fmt17(r.predictive_ess) << '\n';
    });
    out.write_with(
        "random_scan_timing.csv",
        [&](std::ostream& os) {
          os << "scan_prob,seconds_per_iter,beta_ess_per_sec,imputation_ess_per_sec,predictive_ess_per_sec,"
                "beta_ratio,imputation_ratio,predictive_ratio\n";
          for (const auto& r : scan)
            os << fmt17(r.scan_prob) << ',' << fmt17(r.seconds_per_iter) << ',' << fmt17(r.beta_ess_per_sec) << ','
               << fmt17(r.imputation_ess_per_sec) << ',' << fmt17(r.predictive_ess_per_sec) << ','
               << fmt17(r.beta_ratio) << ',' << fmt17(r.imputation_ratio) << ',' << fmt17(r.predictive_ratio) << '\n';
        },
        false);
  }
  if (!timings.is_null()) out.write("timings.json", dump17(timings) + "\n", false);
  out.manifest("benchmark", config_to_json(cfg), json{{"train", train_path}, {"train_mask", mask_path}});
  return 0;
}

int report_error(const std::string& type, const std::string& message, long row = -1, long col = -1) {
  json e{{"error", {{"type", type}, {"message", message}}}};
  if (row >= 0) e["error"]["row"] = row;
  if (col >= 0) e["error"]["column"] = col;
  std::cerr << e.dump() << '\n';
  return type == "internal" ? 1 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian linear regression with left-censored covariates"};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON pipeline configuration");
    sub->add_option("--seed", common.seed, "Override every seed in the configuration");
    sub->add_option("--out-dir", common.out_dir, "Directory receiving the artifacts");
    sub->add_option("--threads", common.threads, "Worker cap; output does not depend on it")
        ->check(CLI::PositiveNumber);
  };

  std::string train, train_mask, test, test_mask, store, method = "bayesian", truth, pred_root;
  std::vector<std::string> preds;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic censored dataset");
  add_common(sim);

  auto* fit = app.add_subcommand("fit", "Run the Gibbs sampler and write the draw store");
  add_common(fit);
  fit->add_option("--train", train, "Training CSV");
  fit->add_option("--train-mask", train_mask, "Sidecar censoring mask for the training CSV");
  fit->add_option("--method", method, "bayesian | bayesian_no_w | naive | complete");

  auto* pred = app.add_subcommand("predict", "Posterior predictive draws for test rows");
  add_common(pred);
  pred->add_option("--store", store, "Draw store from fit (approximate strategy)");
  pred->add_option("--test", test, "Test CSV");
  pred->add_option("--test-mask", test_mask, "Sidecar censoring mask for the test CSV");
  pred->add_option("--train", train, "Training CSV (exact strategy)");
  pred->add_option("--train-mask", train_mask, "Sidecar censoring mask for the training CSV");
  pred->add_option("--method", method, "bayesian | bayesian_no_w | naive | complete");

  auto* ev = app.add_subcommand("evaluate", "Score predictions against held-out responses");
  add_common(ev);
  ev->add_option("--pred", preds,
                 "LABEL=DIR[,TRUTH]: predict output directory, optionally with its own truth CSV");
  ev->add_option("--pred-root", pred_root, "Without --pred: read PRED_ROOT/LABEL for each configured method");
  ev->add_option("--truth", truth, "CSV with the true test responses");

  auto* bench = app.add_subcommand("benchmark", "Joint-vs-univariate and random-scan studies");
  add_common(bench);
  bench->add_option("--train", train, "Training CSV");
  bench->add_option("--train-mask", train_mask, "Sidecar censoring mask for the training CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what());
  }

  try {
    if (*sim) return cmd_simulate(common);
    if (*fit) return cmd_fit(common, train, train_mask, method);
    if (*pred) return cmd_predict(common, store, test, test_mask, train, train_mask, method);
    if (*ev) return cmd_evaluate(common, preds, pred_root, truth);
    if (*bench) return cmd_benchmark(common, train, train_mask);
  } catch (const ParseError& e) {
    return report_error("parse", e.what(), e.row(), e.col());
  } catch (const ConfigError& e) {
    return report_error("config", e.what());
  } catch (const ChainError& e) {
    return report_error("chain", e.what());
  } catch (const std::invalid_argument& e) {
    return report_error("invalid_input", e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
  return report_error("usage", "no subcommand given");
}
