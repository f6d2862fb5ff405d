#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lcm/eval.hpp"
#include "lcm/preprocessing.hpp"
#include "lcm/synthgen.hpp"
#include "lcm/trainer.hpp"

namespace lcm {

struct ProbeConfig {
  std::uint64_t seed = 0;
  ProbeOptions options;
};

/// Every knob of a run. Parsed from a JSON document whose top-level
/// sections are "synth", "labeled", "preprocess", "encoder", "schedule",
/// "train" and "probe"; every section and field is optional and unknown
/// keys are rejected.
struct RunConfig {
  SynthSpec synth;
  std::size_t synth_count = 1;  // recordings (or corpus segments) written by `synth`
  LabeledSpec labeled;
  PreprocConfig preprocess;
  TrainConfig train;  // train.encoder / train.schedule hold the encoder and schedule sections
  ProbeConfig probe;

  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Full configuration with every field spelled out.
std::string dump_run_config(const RunConfig& cfg);

}  // namespace lcm
