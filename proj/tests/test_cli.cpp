#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lcm/cli.hpp"
#include "lcm/data_model.hpp"
#include "lcm/trainer.hpp"

using namespace lcm;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lcm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(path("run.json")) << R"({
      "synth": {"seed": 3, "channel_count": 3, "duration_s": 8, "sample_rate_hz": 256,
                "oscillations": [{"frequency_hz": 6, "amplitude": 1.5, "channels": [0, 1]}]},
      "labeled": {"per_class": 4},
      "preprocess": {"target_rate_hz": 64, "segment_s": 0.5, "lowpass_hz": 20, "apply_bandpass": false},
      "encoder": {"in_channels": 3, "mapped_channels": 4, "patch_len": 8, "windows": 4, "d": 16,
                  "layers": 2, "heads": 2, "mlp_ratio": 2, "kernel": 3},
      "schedule": {"lr_max": 1e-3, "warmup_epochs": 1},
      "train": {"batch_size": 8, "epochs": 2, "seed": 5},
      "probe": {"epochs": 50}
    })";
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GradcheckDefaultPasses) {
  const Result r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  const std::size_t at = r.out.rfind("max_rel_error=");
  ASSERT_NE(at, std::string::npos);
  EXPECT_LT(std::stod(r.out.substr(at + 14)), 1e-4);

  const Result bad = run({"gradcheck", "--tolerance", "1e-30"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_EQ(bad.err.rfind("error:", 0), 0u);
}

TEST_F(CliTest, ErrorsMapToExitCodes) {
  const Result missing = run({"pretrain", "--config", path("nope.json"), "--data", path("x.lcms"), "--out", path("c")});
  EXPECT_EQ(missing.code, 2);
  EXPECT_EQ(missing.err.rfind("error:", 0), 0u);

  std::ofstream(path("junk.bin")) << "JUNKJUNKJUNK";
  const Result magic = run({"inspect", path("junk.bin")});
  EXPECT_EQ(magic.code, 2);
  EXPECT_EQ(magic.err.rfind("error:", 0), 0u);

  const Result invalid = run({"pretrain", "--config", path("run.json"), "--data", path("x.lcms"), "--out",
                              path("c"), "--p-mask", "2"});
  EXPECT_EQ(invalid.code, 1);
  EXPECT_EQ(invalid.err.rfind("error:", 0), 0u);

  EXPECT_EQ(run({"pretrain", "--lr-mode", "step"}).code, 1);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
}

TEST_F(CliTest, HelpListsFlags) {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"synth", "--labeled"}, {"preprocess", "--in"},  {"pretrain", "--p-mask"},
      {"probe", "--checkpoint"}, {"gradcheck", "--coords"}, {"inspect", "--config"}};
  for (const auto& [cmd, flag] : cases) {
    const Result r = run({cmd, "--help"});
    EXPECT_EQ(r.code, 0) << cmd;
    EXPECT_NE(r.out.find(flag), std::string::npos) << cmd;
  }
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, SynthIsReproducible) {
  ASSERT_EQ(run({"synth", "--config", path("run.json"), "--out", path("a.lcmr")}).code, 0);
  ASSERT_EQ(run({"synth", "--config", path("run.json"), "--out", path("b.lcmr")}).code, 0);
  EXPECT_EQ(slurp(path("a.lcmr")), slurp(path("b.lcmr")));
  ASSERT_EQ(run({"synth", "--config", path("run.json"), "--seed", "4", "--out", path("c.lcmr")}).code, 0);
  EXPECT_NE(slurp(path("a.lcmr")), slurp(path("c.lcmr")));
  const Result info = run({"inspect", path("a.lcmr")});
  EXPECT_EQ(info.code, 0);
  EXPECT_NE(info.out.find("recording"), std::string::npos);
}

TEST_F(CliTest, EndToEndPipeline) {
  const std::string cfg = path("run.json");
  ASSERT_EQ(run({"synth", "--config", cfg, "--out", path("raw.lcmr")}).code, 0);
  ASSERT_EQ(run({"synth", "--config", cfg, "--labeled", "--out", path("lab_train.lcms")}).code, 0);
  ASSERT_EQ(run({"synth", "--config", cfg, "--labeled", "--seed", "9", "--out", path("lab_test.lcms")}).code, 0);

  const Result pre = run({"preprocess", "--config", cfg, "--in", path("raw.lcmr"), "--out", path("pre.lcms")});
  ASSERT_EQ(pre.code, 0) << pre.err;
  EXPECT_NE(pre.out.find("16 segments (3 x 32)"), std::string::npos) << pre.out;
  ASSERT_EQ(run({"preprocess", "--config", cfg, "--in", path("lab_train.lcms"), "--out", path("ptrain.lcms")}).code, 0);
  ASSERT_EQ(run({"preprocess", "--config", cfg, "--in", path("lab_test.lcms"), "--out", path("ptest.lcms")}).code, 0);
  EXPECT_TRUE(load_segments(path("ptrain.lcms")).labels.has_value());

  const Result train = run({"pretrain", "--config", cfg, "--data", path("pre.lcms"), "--out", path("model.lcmc"),
                            "--log", path("log.jsonl")});
  ASSERT_EQ(train.code, 0) << train.err;
  std::ifstream log(path("log.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const TrainLogRecord rec = parse_log_line(line);
    EXPECT_EQ(rec.step, lines);
    ++lines;
  }
  EXPECT_EQ(lines, 4u);  // 16 segments, batch 8, 2 epochs

  const Result info = run({"inspect", "--config", cfg, path("model.lcmc")});
  ASSERT_EQ(info.code, 0) << info.err;
  EXPECT_NE(info.out.find("param_count"), std::string::npos);

  const Result probe = run({"probe", "--config", cfg, "--checkpoint", path("model.lcmc"), "--train",
                            path("ptrain.lcms"), "--test", path("ptest.lcms")});
  ASSERT_EQ(probe.code, 0) << probe.err;
  EXPECT_NE(probe.out.find("\"balanced_accuracy\""), std::string::npos);
  EXPECT_NE(probe.out.find("\"auroc\""), std::string::npos);
}
