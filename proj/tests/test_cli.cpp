#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "windformer/cli.hpp"

using namespace windformer;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "windformer");
  args.insert(args.begin() + 1, {"--log-level", "warn"});
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("wf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "small.json") << R"({
      "data": {"grid_height": 8, "grid_width": 8, "turbines": 24, "synthesis": {"steps": 200}},
      "model": {"history": 3, "hidden_channels": 4, "embed_dim": 8, "depths": [2, 2], "heads": [2, 4],
                "window": 4, "shift": 2, "mlp_ratio": 2},
      "train": {"batch_size": 8, "max_epochs": 2, "max_batches_per_epoch": 4},
      "ablation": {"specs": [{}, {"spatial": "window"}]}
    })";
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const char* name) const { return (dir / name).string(); }

  fs::path dir;
};

}  // namespace

TEST_F(Cli, SynthesizeTrainEvaluatePredict) {
  auto r = run({"synthesize", "--config", path("small.json"), "--out", path("data")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "data" / "layout.json"));
  EXPECT_TRUE(fs::exists(dir / "data" / "data.csv"));

  r = run({"train", "--config", path("small.json"), "--data", path("data"), "--seed", "1", "--out", path("run")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"model.wfckpt", "history.csv", "metrics.csv", "config.json"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  EXPECT_NE(r.out.find("MSE 30"), std::string::npos);

  // The checkpoint alone reproduces the training run's test metrics.
  r = run({"evaluate", "--checkpoint", path("run/model.wfckpt"), "--out", path("eval.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "eval.csv"), slurp(dir / "run" / "metrics.csv"));
  const auto report = MetricsReport::read_csv(dir / "eval.csv");
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_TRUE(report.consistent());

  r = run({"predict", "--checkpoint", path("run/model.wfckpt"), "--turbine", "T004", "--out", path("curve.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "curve.csv").rfind("timestamp,actual,predicted\n", 0), 0u);

  // Same config and seed: same metrics file.
  r = run({"train", "--config", path("small.json"), "--data", path("data"), "--seed", "1", "--out", path("again")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "again" / "metrics.csv"), slurp(dir / "run" / "metrics.csv"));
}

TEST_F(Cli, UsageErrors) {
  auto r = run({"train", "--bogus"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  r = run({});
  EXPECT_EQ(r.code, kExitUsage);
  r = run({"train", "--config", path("small.json")});  // --out missing
  EXPECT_EQ(r.code, kExitUsage);
  r = run({"train", "--config", path("small.json"), "--horizon", "45", "--out", path("x")});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(Cli, CategorizedErrors) {
  std::ofstream(dir / "bad.json") << R"({"model": {"windw": 4}})";
  auto r = run({"train", "--config", path("bad.json"), "--out", path("x")});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("windformer: config error: unknown model config key 'windw'"), std::string::npos) << r.err;

  std::ofstream(dir / "junk.wfckpt") << "not a checkpoint";
  r = run({"evaluate", "--checkpoint", path("junk.wfckpt")});
  EXPECT_EQ(r.code, kExitCheckpoint);
  EXPECT_NE(r.err.find("checkpoint error"), std::string::npos) << r.err;

  fs::create_directories(dir / "empty");
  std::ofstream(dir / "empty" / "layout.json") << R"({"grid_height": 8, "grid_width": 8, "turbines": []})";
  std::ofstream(dir / "empty" / "data.csv") << "timestamp,turbine_id,wind_speed\n";
  r = run({"train", "--data", path("empty"), "--out", path("x")});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("data error"), std::string::npos) << r.err;
}

TEST_F(Cli, GradcheckDefaultConfigPasses) {
  const auto r = run({"gradcheck", "--fraction", "0.0005"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("max rel. err"), std::string::npos);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST_F(Cli, GradcheckFailureHasItsOwnExitCode) {
  const auto r = run({"gradcheck", "--config", path("small.json"), "--fraction", "0.05", "--threshold", "1e-300"});
  EXPECT_EQ(r.code, kExitGradCheck) << r.err;
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, AblateWritesOneRowPerSpecPlusPersistence) {
  const auto r = run({"ablate", "--config", path("small.json"), "--max-steps", "3", "--out", path("abl")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = MetricsReport::read_csv(dir / "abl" / "ablation.csv");
  ASSERT_EQ(report.rows.size(), 3u);
  EXPECT_EQ(report.rows[0].model_id, "bi-convgru/shift-window/full");
  EXPECT_EQ(report.rows[1].model_id, "bi-convgru/window/full");
  EXPECT_EQ(report.rows[2].model_id, "persistence");
  EXPECT_TRUE(report.consistent());
}
