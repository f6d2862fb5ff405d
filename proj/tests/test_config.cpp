#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "lcm/config.hpp"
#include "lcm/error.hpp"

using namespace lcm;

TEST(Config, EmptyDocumentGivesDefaults) {
  const RunConfig c = parse_run_config("{}");
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_EQ(c.train.p_mask, 0.5);
  EXPECT_EQ(c.train.lambda, 1.0);
  EXPECT_EQ(c.train.schedule.lr_max, 1.5e-4);
  EXPECT_EQ(c.train.schedule.mode, LrMode::kWarmupCosine);
  EXPECT_EQ(c.synth_count, 1u);
  EXPECT_FALSE(c.preprocess.channel_selection.has_value());
  EXPECT_EQ(dump_run_config(c), dump_run_config(RunConfig{}));
}

TEST(Config, OverridesAreApplied) {
  const RunConfig c = parse_run_config(R"({
    "synth": {"seed": 9, "count": 3, "oscillations": [{"frequency_hz": 7.5, "amplitude": 2, "channels": [0, 2]}]},
    "preprocess": {"channel_selection": ["C3", "C4"], "apply_bandpass": false},
    "encoder": {"d": 32, "heads": 4},
    "schedule": {"mode": "polynomial", "decay_exponent": 2.0, "warmup_epochs": 1},
    "train": {"epochs": 5, "p_mask": 0.25},
    "probe": {"l2": 0.01}
  })");
  EXPECT_EQ(c.synth.seed, 9u);
  EXPECT_EQ(c.synth_count, 3u);
  ASSERT_EQ(c.synth.oscillations.size(), 1u);
  EXPECT_EQ(c.synth.oscillations[0].frequency_hz, 7.5);
  EXPECT_EQ(c.synth.oscillations[0].channels, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(c.preprocess.channel_selection, (std::vector<std::string>{"C3", "C4"}));
  EXPECT_FALSE(c.preprocess.apply_bandpass);
  EXPECT_EQ(c.train.encoder.d, 32u);
  EXPECT_EQ(c.train.schedule.mode, LrMode::kPolynomial);
  EXPECT_EQ(c.train.epochs, 5u);
  EXPECT_EQ(c.train.p_mask, 0.25);
  EXPECT_EQ(c.probe.options.l2, 0.01);
}

TEST(Config, DumpParsesBackToSameConfig) {
  const RunConfig c = parse_run_config(R"({"encoder": {"layers": 3}, "schedule": {"m_low": 0.99}, "train": {"seed": 4}})");
  const std::string text = dump_run_config(c);
  EXPECT_EQ(dump_run_config(parse_run_config(text)), text);
}

TEST(Config, UnknownKeysAreRejected) {
  try {
    (void)parse_run_config(R"({"train": {"batchsize": 8}})");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "config: unknown key 'batchsize' in section 'train'");
  }
  EXPECT_THROW((void)parse_run_config(R"({"model": {}})"), ValidationError);
  EXPECT_THROW((void)parse_run_config(R"({"synth": {"oscillations": [{"freq": 1}]}})"), ValidationError);
}

TEST(Config, MalformedValuesAreRejected) {
  EXPECT_THROW((void)parse_run_config("{"), ValidationError);
  EXPECT_THROW((void)parse_run_config("[]"), ValidationError);
  EXPECT_THROW((void)parse_run_config(R"({"train": {"epochs": "ten"}})"), ValidationError);
  EXPECT_THROW((void)parse_run_config(R"({"train": 3})"), ValidationError);
  EXPECT_THROW((void)parse_run_config(R"({"schedule": {"mode": "step"}})"), ValidationError);
  EXPECT_THROW((void)parse_run_config(R"({"train": {"p_mask": 1.5}})"), ValidationError);
  EXPECT_THROW((void)parse_run_config(R"({"encoder": {"d": 30, "heads": 4}})"), ValidationError);
  EXPECT_THROW((void)parse_run_config(R"({"synth": {"count": 0}})"), ValidationError);
}

TEST(Config, LoadFromFile) {
  const auto dir = std::filesystem::temp_directory_path() / ("lcm_config_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  std::filesystem::create_directories(dir);
  const auto path = dir / "run.json";
  std::ofstream(path) << R"({"train": {"batch_size": 16}})";
  EXPECT_EQ(load_run_config(path).train.batch_size, 16u);
  EXPECT_THROW((void)load_run_config(dir / "missing.json"), IoError);
  std::filesystem::remove_all(dir);
}
