#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lcm/tensor.hpp"

namespace lcm {

struct Montage {
  std::string montage_id;
  std::vector<std::string> channel_names;

  std::size_t channel_count() const noexcept { return channel_names.size(); }
  /// Unique, non-empty names; at least one channel.
  void validate() const;
  /// Index of `name`, or nullopt.
  std::optional<std::size_t> index_of(const std::string& name) const;
  /// Montage with channels "ch0".."ch{n-1}".
  static Montage numbered(std::size_t n, std::string id = "default");

  friend bool operator==(const Montage&, const Montage&) = default;
};

/// A continuous multichannel recording in its stored units.
/// `samples` is channel-major: row i is channel i.
struct Recording {
  Montage montage;
  double sample_rate_hz = 0.0;
  double scale_to_mV = 1.0;
  Matrix<float> samples;

  std::size_t channels() const noexcept { return samples.rows(); }
  std::size_t length() const noexcept { return samples.cols(); }
  void validate() const;

  friend bool operator==(const Recording&, const Recording&) = default;
};

/// Equal-shape segments with optional class labels.
struct SegmentBatch {
  std::vector<Matrix<float>> segments;
  std::optional<std::vector<int>> labels;
  double sample_rate_hz = 0.0;

  std::size_t size() const noexcept { return segments.size(); }
  std::size_t channels() const noexcept { return segments.empty() ? 0 : segments.front().rows(); }
  std::size_t length() const noexcept { return segments.empty() ? 0 : segments.front().cols(); }
  void validate() const;

  friend bool operator==(const SegmentBatch&, const SegmentBatch&) = default;
};

/// Named f32 tensors plus the schedule position. Tensor names carry a
/// group prefix: "theta/", "xi/", "adam_m/", "adam_v/".
struct Checkpoint {
  static constexpr std::uint16_t kFormatVersion = 1;

  std::uint16_t format_version = kFormatVersion;
  std::uint64_t step = 0;
  std::map<std::string, Tensor<float>> tensors;

  /// Every theta/ tensor has a same-shape xi/ tensor and vice versa.
  void validate() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// LCMR: "LCMR" | u16 version=1 | u32 M | f64 rate | u64 T | f64 scale_to_mV | f32[M*T]
inline constexpr std::uint16_t kRecordingVersion = 1;
inline constexpr std::size_t kRecordingHeaderBytes = 4 + 2 + 4 + 8 + 8 + 8;

std::uint64_t write_recording(const Recording& rec, std::ostream& out);
/// The montage is not part of LCMR; the result carries a numbered montage
/// sized to the channel count. Use `load_recording` to attach a sidecar.
Recording read_recording(std::istream& in);

/// Sidecar text: `montage_id=<id>` and `channels=<a,b,c>` lines.
std::string format_montage_sidecar(const Montage& montage);
Montage parse_montage_sidecar(const std::string& text);
std::filesystem::path sidecar_path(const std::filesystem::path& recording_path);

/// Writes `<path>` and `<path>.montage`.
void save_recording(const Recording& rec, const std::filesystem::path& path);
/// Reads `<path>`; attaches `<path>.montage` when it exists.
Recording load_recording(const std::filesystem::path& path);

// LCMC: "LCMC" | u16 version | u64 step | u32 tensor count |
//       per tensor (sorted by name): u16 name length | name | u8 rank | u32 dims[rank] | f32 data
std::uint64_t write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// LCMS segment archive: "LCMS" | u16 version=1 | u64 count | u32 M | u64 T | f64 rate |
//       u8 has_labels | i32 labels[count] if has_labels | f32 segments[count*M*T]
std::uint64_t write_segments(const SegmentBatch& batch, std::ostream& out);
SegmentBatch read_segments(std::istream& in);
void save_segments(const SegmentBatch& batch, const std::filesystem::path& path);
SegmentBatch load_segments(const std::filesystem::path& path);

/// First four bytes of a file, for format sniffing. Empty on short files.
std::string read_magic(const std::filesystem::path& path);

}  // namespace lcm
