#pragma once

#include <cstdint>
#include <vector>

#include "lcm/data_model.hpp"

namespace lcm {

struct Oscillation {
  double frequency_hz = 10.0;
  double amplitude = 1.0;
  /// Channels carrying the oscillation; empty means all channels.
  /// One random phase per oscillation, shared by its channels.
  std::vector<std::size_t> channels;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t channel_count = 8;
  double duration_s = 4.0;
  double sample_rate_hz = 256.0;
  /// Power spectral density of the background falls as 1/f^exponent.
  double background_exponent = 1.0;
  /// Per-channel RMS of the background; 0 disables it.
  double background_rms = 1.0;
  double scale_to_mV = 1.0;
  std::vector<Oscillation> oscillations;

  std::size_t sample_count() const;
  void validate() const;
};

/// Deterministic synthetic recording: 1/f^a background plus sinusoids.
Recording synth_recording(const SynthSpec& spec);

struct LabeledSpec {
  int classes = 2;
  std::size_t per_class = 100;
  double band_low_hz = 8.0;
  double band_high_hz = 12.0;
  /// Class-1 band power divided by class-0 band power.
  double power_ratio = 4.0;
  /// Band-limited RMS of class 0, per channel.
  double band_rms = 0.5;

  void validate(const SynthSpec& base) const;
};

/// Two-class set of single-segment recordings (duration from `base`); class 1
/// carries `power_ratio` times the class-0 power inside the band. Segment i
/// uses an RNG stream derived from (base.seed, i), so segments are
/// order-independent. Labels alternate 0,1,0,1,...
SegmentBatch synth_labeled_dataset(const SynthSpec& base, const LabeledSpec& labeled);

/// Pretraining corpus: `count` segments drawn from `base` with per-segment
/// streams derived from (base.seed, i).
SegmentBatch synth_corpus(const SynthSpec& base, std::size_t count);

}  // namespace lcm
