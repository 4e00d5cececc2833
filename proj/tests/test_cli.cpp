#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(SEGCLS_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::path(testing::TempDir()) / ("segcls_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Inspect, PublishedTotals) {
  EXPECT_NE(cli("inspect alexnet-bn").out.find("56.11M"), std::string::npos);
  EXPECT_NE(cli("inspect alexnet-bn --reduce global-avg-pool").out.find("2.59M"), std::string::npos);
  EXPECT_NE(cli("inspect alexnet-bn --reduce bneck-mid-1024").out.find("48.41M"), std::string::npos);
}

TEST(Inspect, JsonOutputAndMlpNote) {
  const auto r = cli("inspect mlp --json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["total"], 8808527);
  EXPECT_NE(j["note"].get<std::string>().find("9.48M"), std::string::npos);
}

TEST(Inspect, UnknownModelIsUsageError) {
  const auto r = cli("inspect nonsense");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("alexnet-bn"), std::string::npos);
}

TEST(Inspect, InvalidSpecFileIsShapeError) {
  const auto dir = scratch("spec");
  std::ofstream(dir / "bad.json") << R"({"name":"bad","input_shape":[1,4,4],"layers":[
      {"type":"conv2d","out_channels":2,"kernel":[5,5]},{"type":"global_avg_pool"},
      {"type":"output","classes":2,"activation":"sigmoid"}]})";
  const auto r = cli("inspect " + q(dir / "bad.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("layer 0"), std::string::npos) << r.out;
}

TEST(Inspect, SpecFileRoundTrip) {
  const auto dir = scratch("spec_ok");
  std::ofstream(dir / "ok.json") << R"({"name":"ok","input_shape":[1,8,8],"layers":[
      {"type":"conv2d","out_channels":2,"kernel":[3,3]},{"type":"global_avg_pool"},
      {"type":"output","classes":3,"activation":"softmax"}]})";
  const auto r = cli("inspect " + q(dir / "ok.json") + " --json");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(json::parse(r.out)["total"], 2 * 9 + 2 + 2 * 3 + 3);
}

TEST(Cli, MissingSubcommandAndBadFlag) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("inspect alexnet --reduce fc-").code, 1);
  EXPECT_EQ(cli("--precision f16 inspect alexnet").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, ConfigFileSetsSubcommandOptions) {
  const auto dir = scratch("config");
  std::ofstream(dir / "c.json") << R"({"seed": 3, "inspect": {"reduce": "fc-256"}})";
  const auto r = cli("--config " + q(dir / "c.json") + " inspect alexnet-bn");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("4.95M"), std::string::npos) << r.out;
}

TEST(Featurize, SkipCountSetsExitStatus) {
  const auto dir = scratch("skip");
  ASSERT_EQ(cli("synth --n-clips 3 --n-classes 2 --seconds 2 --out " + q(dir / "d")).code, 0);
  std::ofstream(dir / "d" / "wav" / "synth_0001.wav", std::ios::trunc) << "junk";
  const auto r = cli("featurize --manifest " + q(dir / "d/manifest.csv") + " --out " + q(dir / "f"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("skipped 1"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "f" / "synth_0000.0.lmel"));
  EXPECT_TRUE(fs::exists(dir / "f" / "norm.lnrm"));
}

class Workflow : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch("workflow");
    ASSERT_EQ(cli("--seed 1 synth --n-clips 20 --n-classes 3 --seconds 2 --out " + q(dir_ / "d")).code, 0);
    ASSERT_EQ(cli("--deterministic featurize --manifest " + q(dir_ / "d/manifest.csv") + " --out " + q(dir_ / "f"))
                  .code,
              0);
  }
  std::string data_args() const {
    return " --manifest " + q(dir_ / "d/manifest.csv") + " --features " + q(dir_ / "f");
  }
  static fs::path dir_;
};
fs::path Workflow::dir_;

TEST_F(Workflow, ZeroEpochsWritesInitialCheckpoint) {
  const auto r = cli("train" + data_args() + " --max-epochs 0 --out " + q(dir_ / "r0"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "r0/checkpoint.ssck"));
  EXPECT_TRUE(fs::exists(dir_ / "r0/run_config.json"));
  EXPECT_EQ(slurp(dir_ / "r0/history.jsonl"), "");
  const auto cfg = json::parse(slurp(dir_ / "r0/run_config.json"));
  EXPECT_EQ(cfg["optimizer"]["batch_size"], 60);
  EXPECT_EQ(cfg["model"]["layers"].back()["classes"], 3);
}

TEST_F(Workflow, TrainEvaluateAndDeterminism) {
  for (const char* run : {"ra", "rb"}) {
    const auto r = cli("--seed 7 --deterministic train" + data_args() + " --max-epochs 4 --val-fraction 0.25 --quiet --out " +
                       q(dir_ / run));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto e = cli("--deterministic evaluate --run " + q(dir_ / run) + " --manifest " +
                       q(dir_ / "d/manifest.csv") + " --out " + q(dir_ / run / "report.json"));
    ASSERT_EQ(e.code, 0) << e.out;
    EXPECT_NE(e.out.find("overall weighted AUC"), std::string::npos);
  }
  EXPECT_EQ(slurp(dir_ / "ra/checkpoint.ssck"), slurp(dir_ / "rb/checkpoint.ssck"));
  EXPECT_EQ(slurp(dir_ / "ra/report.json"), slurp(dir_ / "rb/report.json"));
  std::ifstream hist(dir_ / "ra/history.jsonl");
  std::string line;
  double prev = -1;
  int epochs = 0;
  while (std::getline(hist, line)) {
    const double best = json::parse(line)["best_val"];
    EXPECT_GE(best, prev);
    prev = best;
    ++epochs;
  }
  EXPECT_EQ(epochs, 4);
}

TEST_F(Workflow, ModeMismatchRejectedBeforeTraining) {
  std::ofstream(dir_ / "soft.json") << R"({"name":"s","input_shape":[1,64,98],"layers":[
      {"type":"conv2d","out_channels":2,"kernel":[64,3]},{"type":"global_avg_pool"},
      {"type":"output","classes":3,"activation":"softmax"}]})";
  const auto r = cli("train" + data_args() + " --model " + q(dir_ / "soft.json") + " --out " + q(dir_ / "rm"));
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_FALSE(fs::exists(dir_ / "rm/checkpoint.ssck"));
}

TEST_F(Workflow, SingleLabelModeNeedsOneLabelPerClip) {
  const auto r = cli("train" + data_args() + " --mode single_label --out " + q(dir_ / "rs"));
  // the multi-label corpus has clips with several labels
  EXPECT_EQ(r.code, 1) << r.out;
}

TEST_F(Workflow, EvaluateWithMissingFeaturesIsDataError) {
  ASSERT_EQ(cli("train" + data_args() + " --max-epochs 0 --out " + q(dir_ / "rx")).code, 0);
  ASSERT_EQ(cli("--seed 9 synth --n-clips 2 --n-classes 3 --seconds 1 --prefix other --out " + q(dir_ / "o")).code, 0);
  const auto r = cli("evaluate --run " + q(dir_ / "rx") + " --manifest " + q(dir_ / "o/manifest.csv"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("other_0000"), std::string::npos) << r.out;
}

TEST(SingleLabel, AccuracyReportInsteadOfAuc) {
  const auto dir = scratch("single");
  ASSERT_EQ(cli("synth --single-label --n-clips 15 --n-classes 15 --seconds 1 --out " + q(dir / "d")).code, 0);
  ASSERT_EQ(cli("featurize --manifest " + q(dir / "d/manifest.csv") + " --out " + q(dir / "f")).code, 0);
  const auto t = cli("train --mode single_label --max-epochs 2 --quiet --manifest " + q(dir / "d/manifest.csv") +
                     " --features " + q(dir / "f") + " --out " + q(dir / "r"));
  ASSERT_EQ(t.code, 0) << t.out;
  const auto e = cli("evaluate --run " + q(dir / "r") + " --manifest " + q(dir / "d/manifest.csv") + " --out " +
                     q(dir / "r/report.json"));
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("accuracy"), std::string::npos);
  const auto j = json::parse(slurp(dir / "r/report.json"));
  EXPECT_TRUE(j.contains("accuracy"));
  EXPECT_FALSE(j.contains("auc"));
  EXPECT_EQ(j["mode"], "single_label");
}
