// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sparseattn/cli.hpp"
#include "test_support.hpp"

namespace sparseattn::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "sparseattn");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Small model and corpus so a full train command takes well under a second.
std::vector<std::string> quick_train(const std::string& config, const fs::path& out) {
  return {"train", "--config", config, "--out", out.string(), "--size", "60", "--epochs", "2", "--dim", "8",
          "--ff-dim", "16", "--max-len", "16", "--eval-every", "2", "--batch-size", "8"};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = test::scratch_dir("cli"); }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CliTest, FlopsDefaultsMatchReference) {
  const Result r = invoke({"flops", "--out", dir_.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(slurp(dir_ / "flops.json"));
  const std::vector<double> attn{0, 60, 80, 80}, total{0, 15, 20, 20};
  ASSERT_EQ(j["rows"].size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(j["rows"][i]["attention_flops_reduction_pct"].get<double>(), attn[i], 1e-9);
    EXPECT_NEAR(j["rows"][i]["total_layer_reduction_pct"].get<double>(), total[i], 1e-9);
  }
  EXPECT_NE(r.out.find("light_sparse"), std::string::npos);
  EXPECT_NE(r.out.find("20.00%"), std::string::npos);
}

TEST_F(CliTest, FlopsTinyAndInvalid) {
  ASSERT_EQ(invoke({"flops", "--n", "1", "--d", "1", "--out", dir_.string()}).code, kExitOk);
  const json j = json::parse(slurp(dir_ / "flops.json"));
  EXPECT_NEAR(j["rows"][3]["total_layer_reduction_pct"].get<double>(), 80.0 / 3.0, 1e-9);
  EXPECT_EQ(invoke({"flops", "--n", "0"}).code, kExitUsage);
  EXPECT_EQ(invoke({"flops", "--n", "abc"}).code, kExitUsage);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(invoke({}).code, kExitUsage);
  EXPECT_EQ(invoke({"bogus"}).code, kExitUsage);
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);
  const Result r = invoke({"train", "--config", "sparse_everything", "--out", (dir_ / "x").string()});
  EXPECT_EQ(r.code, kExitUsage);
  for (const char* name : {"baseline", "uniform_sparse", "light_sparse", "aggressive_sparse"}) {
    EXPECT_NE(r.err.find(name), std::string::npos) << r.err;
  }
  EXPECT_EQ(r.err.find('\n'), r.err.size() - 1) << "diagnostic should be one line";
}

TEST_F(CliTest, TrainBaselineWritesArtifacts) {
  const fs::path out = dir_ / "run";
  const Result r = invoke(quick_train("baseline", out));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const char* f : {"manifest.json", "metrics.csv", "summary.json", "checkpoint.bin", "vocab.txt"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  std::istringstream csv(slurp(out / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "step,epoch,train_loss,val_loss,val_accuracy,mean_sparsity,mean_entropy");
  long last = -1;
  while (std::getline(csv, line)) {
    const long step = std::stol(line.substr(0, line.find(',')));
    EXPECT_GT(step, last);
    last = step;
  }
  const json s = json::parse(slurp(out / "summary.json"));
  EXPECT_NEAR(s["mean_achieved_sparsity"].get<double>(), 0.0, 1e-12);
  EXPECT_EQ(s["entropy_base"], "e");
  const json m = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["config_name"], "baseline");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["tool_version"], kToolVersion);
}

TEST_F(CliTest, TrainIsByteReproducible) {
  ASSERT_EQ(invoke(quick_train("light_sparse", dir_ / "a")).code, kExitOk);
  ASSERT_EQ(invoke(quick_train("light_sparse", dir_ / "b")).code, kExitOk);
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.csv"), slurp(dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "summary.json"), slurp(dir_ / "b" / "summary.json"));
  EXPECT_EQ(slurp(dir_ / "a" / "checkpoint.bin"), slurp(dir_ / "b" / "checkpoint.bin"));
}

TEST_F(CliTest, CustomConfigFile) {
  std::ofstream(dir_ / "mine.json") << R"({"mode": "adaptive", "target": 0.5, "ramp_width": 0.2, "layers": 3})";
  const Result r = invoke(quick_train((dir_ / "mine.json").string(), dir_ / "run"));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json s = json::parse(slurp(dir_ / "run" / "summary.json"));
  EXPECT_EQ(s["schedule"].size(), 3u);
  EXPECT_EQ(s["config_name"], "mine");
  std::ofstream(dir_ / "bad.json") << R"({"mode": "adaptive", "target": 0.95})";
  EXPECT_EQ(invoke(quick_train((dir_ / "bad.json").string(), dir_ / "r2")).code, kExitUsage);
}

TEST_F(CliTest, DataErrorsExitThree) {
  auto args = quick_train("baseline", dir_ / "run");
  args.insert(args.end(), {"--data", (dir_ / "missing.tsv").string()});
  EXPECT_EQ(invoke(args).code, kExitData);
  std::ofstream(dir_ / "bad.tsv") << "fine\t1\nbroken line\n";
  args.back() = (dir_ / "bad.tsv").string();
  const Result r = invoke(args);
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find(":2:"), std::string::npos) << r.err;
}

TEST_F(CliTest, GenDataSplitsAndIsDeterministic) {
  ASSERT_EQ(invoke({"gen-data", "--seed", "7", "--size", "2000", "--out", (dir_ / "a").string()}).code, kExitOk);
  ASSERT_EQ(invoke({"gen-data", "--seed", "7", "--size", "2000", "--out", (dir_ / "b").string()}).code, kExitOk);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  EXPECT_EQ(lines(slurp(dir_ / "a" / "train.tsv")), 1801);
  EXPECT_EQ(lines(slurp(dir_ / "a" / "validation.tsv")), 201);
  EXPECT_EQ(slurp(dir_ / "a" / "train.tsv"), slurp(dir_ / "b" / "train.tsv"));
  std::ofstream(dir_ / "blocker") << "x";
  EXPECT_EQ(invoke({"gen-data", "--out", (dir_ / "blocker" / "sub").string()}).code, kExitData);
}

TEST_F(CliTest, SeedEnvironmentDefault) {
  ::setenv(kSeedEnv, "11", 1);
  const Result a = invoke({"gen-data", "--size", "50", "--out", (dir_ / "env").string()});
  ::setenv(kSeedEnv, "banana", 1);
  const Result bad = invoke({"gen-data", "--size", "50", "--out", (dir_ / "bad").string()});
  ::unsetenv(kSeedEnv);
  ASSERT_EQ(a.code, kExitOk);
  EXPECT_EQ(bad.code, kExitUsage);
  ASSERT_EQ(invoke({"gen-data", "--seed", "11", "--size", "50", "--out", (dir_ / "flag").string()}).code, kExitOk);
  EXPECT_EQ(slurp(dir_ / "env" / "train.tsv"), slurp(dir_ / "flag" / "train.tsv"));
}

TEST_F(CliTest, AnalyzeReports) {
  std::vector<std::string> runs;
  for (const std::string name : {"baseline", "light_sparse", "uniform_sparse", "aggressive_sparse"}) {
    ASSERT_EQ(invoke(quick_train(name, dir_ / name)).code, kExitOk);
    runs.push_back((dir_ / name).string());
  }
  std::vector<std::string> args{"analyze", "--out", (dir_ / "report").string(), "--runs"};
  args.insert(args.end(), runs.begin(), runs.end());
  const Result r = invoke(args);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(slurp(dir_ / "report" / "analysis.json"));
  EXPECT_TRUE(j["correlation"]["r"].is_number());
  EXPECT_EQ(j["correlation"]["points"], 4);
  const std::string scatter = slurp(dir_ / "report" / "analysis.csv");
  EXPECT_EQ(std::count(scatter.begin(), scatter.end(), '\n'), 5);
  EXPECT_TRUE(fs::exists(dir_ / "report" / "layer_sparsity.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "report" / "entropy.csv"));

  ASSERT_EQ(invoke({"analyze", "--out", (dir_ / "one").string(), "--runs", runs[0]}).code, kExitOk);
  const json one = json::parse(slurp(dir_ / "one" / "analysis.json"));
  EXPECT_TRUE(one["correlation"].is_null());
  EXPECT_EQ(one["correlation_status"], "insufficient points");

  const Result flat = invoke({"analyze", "--out", (dir_ / "flat").string(), "--runs", runs[0], runs[0]});
  ASSERT_EQ(flat.code, kExitOk);
  const json fj = json::parse(slurp(dir_ / "flat" / "analysis.json"));
  EXPECT_TRUE(fj["correlation"].is_null());
  EXPECT_EQ(fj["correlation_status"], "zero variance");

  EXPECT_EQ(invoke({"analyze", "--runs", (dir_ / "nothing").string()}).code, kExitData);
  std::ofstream(dir_ / runs[1] / "summary.json") << "{ not json";
  EXPECT_EQ(invoke({"analyze", "--out", (dir_ / "x").string(), "--runs", runs[1]}).code, kExitData);
}

}  // namespace
}  // namespace sparseattn::cli
