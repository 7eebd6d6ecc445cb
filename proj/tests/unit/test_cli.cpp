#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = CENSREG_CLI_PATH;

struct Result {
  int code;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("censreg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "config.json") << R"({
      "data": {"generate": {"n": 60, "n_test": 15, "p": 4, "r": 1, "block_sizes": [4], "block_rhos": [0.7],
                            "target_censor_rate": 0.3, "aux_share": 0.7, "seed": 3}},
      "run": {"n_iter": 300, "burn_in": 100, "scan_prob": 0.5, "seed": 9},
      "evaluate": {"density_points": 64, "density_rows": [0, 2]},
      "benchmark": {"scan_probs": [0.5, 1.0]}
    })";
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) const {
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = "'" + kCli + "' " + args + " 2>'" + err.string() + "' >/dev/null";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  }

  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, PipelineSmoke) {
  const std::string cfg = " --config " + p("config.json");
  ASSERT_EQ(run("simulate" + cfg + " --out-dir " + p("sim")).code, 0);
  for (const char* f : {"train.csv", "train_mask.csv", "train_sidecar.csv", "test.csv", "train_complete.csv",
                        "test_complete.csv", "truth.json", "MANIFEST.json"})
    EXPECT_TRUE(fs::exists(dir_ / "sim" / f)) << f;

  ASSERT_EQ(run("fit" + cfg + " --train " + p("sim/train.csv") + " --out-dir " + p("fit")).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "fit/drawstore.ndjson"));
  ASSERT_EQ(run("fit" + cfg + " --train " + p("sim/train.csv") + " --method naive --out-dir " + p("fit_naive")).code,
            0);

  ASSERT_EQ(run("predict" + cfg + " --store " + p("fit/drawstore.ndjson") + " --test " + p("sim/test.csv") +
                " --out-dir " + p("pred"))
                .code,
            0);
  ASSERT_EQ(run("predict" + cfg + " --store " + p("fit_naive/drawstore.ndjson") + " --test " + p("sim/test.csv") +
                " --method naive --out-dir " + p("pred_naive"))
                .code,
            0);
  for (const char* f : {"predictive_draws.csv", "predictive_components.csv", "predictive_summary.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "pred" / f)) << f;

  const auto r = run("evaluate" + cfg + " --pred bayesian=" + p("pred") + " --pred naive=" + p("pred_naive") +
                     " --truth " + p("sim/test.csv") + " --out-dir " + p("eval"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"scores.csv", "score_report.json", "score_bayesian.csv", "score_naive.json",
                        "density_bayesian_row0.csv", "density_naive_row2.csv", "score_density_bayesian.csv",
                        "score_density_naive.csv", "MANIFEST.json"})
    EXPECT_TRUE(fs::exists(dir_ / "eval" / f)) << f;
  const auto report = nlohmann::json::parse(slurp(dir_ / "eval/score_report.json"));
  EXPECT_EQ(report["scores"].size(), 2u);

  const auto manifest = nlohmann::json::parse(slurp(dir_ / "eval/MANIFEST.json"));
  for (const auto& a : manifest["artifacts"]) {
    EXPECT_TRUE(fs::exists(dir_ / "eval" / a["path"].get<std::string>()));
    EXPECT_EQ(a["sha256"].get<std::string>().size(), 64u);
  }
}

TEST_F(Cli, ExactStrategyAndBenchmark) {
  const std::string cfg = " --config " + p("config.json");
  ASSERT_EQ(run("simulate" + cfg + " --out-dir " + p("sim")).code, 0);
  std::ofstream(dir_ / "exact.json") << R"({"run": {"n_iter": 200, "burn_in": 50}, "predict": {"strategy": "exact"}})";
  const auto r = run("predict --config " + p("exact.json") + " --train " + p("sim/train.csv") + " --test " +
                     p("sim/test.csv") + " --out-dir " + p("exact"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto info = nlohmann::json::parse(slurp(dir_ / "exact/predict_info.json"));
  EXPECT_EQ(info["strategy"], "exact");
  EXPECT_EQ(info["rows"], 15);

  const auto b = run("benchmark" + cfg + " --out-dir " + p("bench"));
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"joint_vs_univariate.csv", "joint_vs_univariate_summary.json", "random_scan.csv",
                        "random_scan_timing.csv", "timings.json"})
    EXPECT_TRUE(fs::exists(dir_ / "bench" / f)) << f;
}

TEST_F(Cli, ScoresPoolAcrossDatasets) {
  const std::string cfg = " --config " + p("config.json");
  std::string pred_args;
  for (int k = 1; k <= 2; ++k) {
    const std::string sim = "sim" + std::to_string(k), fit = "fit" + std::to_string(k);
    const std::string pred = "root" + std::to_string(k) + "/bayesian";
    ASSERT_EQ(run("simulate" + cfg + " --seed " + std::to_string(40 + k) + " --out-dir " + p(sim)).code, 0);
    ASSERT_EQ(run("fit" + cfg + " --train " + p(sim + "/train.csv") + " --out-dir " + p(fit)).code, 0);
    ASSERT_EQ(run("predict" + cfg + " --store " + p(fit + "/drawstore.ndjson") + " --test " + p(sim + "/test.csv") +
                  " --out-dir " + p(pred))
                  .code,
              0);
    pred_args += " --pred bayesian=" + p(pred) + "," + p(sim + "/test.csv");
  }
  const auto r = run("evaluate" + cfg + pred_args + " --out-dir " + p("eval"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "eval/score_bayesian_2.csv"));
  const auto report = nlohmann::json::parse(slurp(dir_ / "eval/score_report.json"));
  ASSERT_EQ(report["scores"].size(), 2u);
  EXPECT_NE(report["scores"][0]["total"], report["scores"][1]["total"]);
  EXPECT_TRUE(fs::exists(dir_ / "eval/score_density_bayesian.csv"));

  // configured methods under a prediction root
  const auto root = run("evaluate" + cfg + " --pred-root " + p("root1") + " --truth " + p("sim1/test.csv") +
                        " --out-dir " + p("eval_root"));
  ASSERT_EQ(root.code, 0) << root.err;
  EXPECT_EQ(slurp(dir_ / "eval_root/score_bayesian.csv"), slurp(dir_ / "eval/score_bayesian.csv"));
}

TEST_F(Cli, MalformedCsvNamesRowAndColumn) {
  std::ofstream(dir_ / "bad.csv") << "y,x1,x2\n1.0,2.0,3.0\n0.5,oops,1.0\n";
  const auto r = run("fit --train " + p("bad.csv") + " --out-dir " + p("out"));
  EXPECT_NE(r.code, 0);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"]["type"], "parse");
  EXPECT_EQ(j["error"]["row"], 2);
  EXPECT_EQ(j["error"]["column"], 2);
  EXPECT_FALSE(fs::exists(dir_ / "out/drawstore.ndjson"));
}

TEST_F(Cli, InvalidEntryNamesRowAndColumn) {
  std::ofstream(dir_ / "bad.csv") << "y,x1,x2\n1.0,2.0,3.0\n0.5,1.0,nan\n";
  const auto r = run("fit --train " + p("bad.csv") + " --out-dir " + p("out"));
  EXPECT_NE(r.code, 0);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"]["row"], 2);
  EXPECT_EQ(j["error"]["column"], 3);
}

TEST_F(Cli, UnknownConfigKeyRejected) {
  std::ofstream(dir_ / "bad.json") << R"({"run": {"iterations": 10}})";
  const auto r = run("simulate --config " + p("bad.json") + " --out-dir " + p("out"));
  EXPECT_NE(r.code, 0);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"]["type"], "config");
  EXPECT_NE(j["error"]["message"].get<std::string>().find("iterations"), std::string::npos);
}

TEST_F(Cli, FitIsByteIdenticalAcrossRunsAndThreads) {
  const std::string cfg = " --config " + p("config.json");
  ASSERT_EQ(run("simulate" + cfg + " --out-dir " + p("sim")).code, 0);
  const std::string fit = "fit" + cfg + " --train " + p("sim/train.csv");
  ASSERT_EQ(run(fit + " --out-dir " + p("a")).code, 0);
  ASSERT_EQ(run(fit + " --out-dir " + p("b")).code, 0);
  ASSERT_EQ(run(fit + " --threads 3 --out-dir " + p("c")).code, 0);
  const auto a = slurp(dir_ / "a/drawstore.ndjson");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir_ / "b/drawstore.ndjson"));
  EXPECT_EQ(a, slurp(dir_ / "c/drawstore.ndjson"));
  ASSERT_EQ(run(fit + " --seed 10 --out-dir " + p("d")).code, 0);
  EXPECT_NE(a, slurp(dir_ / "d/drawstore.ndjson"));
}

TEST_F(Cli, SidecarMaskMatchesInlineEncoding) {
  const std::string cfg = " --config " + p("config.json");
  ASSERT_EQ(run("simulate" + cfg + " --out-dir " + p("sim")).code, 0);
  ASSERT_EQ(run("fit" + cfg + " --train " + p("sim/train.csv") + " --out-dir " + p("a")).code, 0);
  ASSERT_EQ(run("fit" + cfg + " --train " + p("sim/train_sidecar.csv") + " --train-mask " + p("sim/train_mask.csv") +
                " --out-dir " + p("b"))
                .code,
            0);
  EXPECT_EQ(slurp(dir_ / "a/drawstore.ndjson"), slurp(dir_ / "b/drawstore.ndjson"));
}

TEST_F(Cli, InputsAreNotModified) {
  const std::string cfg = " --config " + p("config.json");
  ASSERT_EQ(run("simulate" + cfg + " --out-dir " + p("sim")).code, 0);
  const auto before = slurp(dir_ / "sim/train.csv");
  const auto conf = slurp(dir_ / "config.json");
  ASSERT_EQ(run("fit" + cfg + " --train " + p("sim/train.csv") + " --out-dir " + p("fit")).code, 0);
  EXPECT_EQ(before, slurp(dir_ / "sim/train.csv"));
  EXPECT_EQ(conf, slurp(dir_ / "config.json"));
}
