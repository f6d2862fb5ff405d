#pragma once

#include <cstdint>
#include <vector>

#include "lcm/error.hpp"
#include "lcm/tensor.hpp"

namespace lcm {

/// Trainable montage alignment: mapped = weights * x, weights is M' x M.
template <typename T>
struct ChannelMap {
  Matrix<T> weights;
  std::size_t target_channels() const noexcept { return weights.rows(); }
  std::size_t source_channels() const noexcept { return weights.cols(); }
};

template <typename T>
Matrix<T> apply_channel_map(const Matrix<T>& x, const ChannelMap<T>& map);

/// Per-channel temporal windows. Token (channel i, window j) is row
/// i * windows + j of `patches`; each row holds patch_len samples.
template <typename T>
struct PatchGrid {
  std::size_t channels = 0;
  std::size_t windows = 0;
  std::size_t patch_len = 0;
  Matrix<T> patches;

  std::size_t tokens() const noexcept { return channels * windows; }
  std::span<const T> patch(std::size_t channel, std::size_t window) const {
    return patches.row(channel * windows + window);
  }
};

/// Cuts each row into floor(T / patch_len) windows; trailing samples are dropped.
template <typename T>
PatchGrid<T> patchify(const Matrix<T>& x, std::size_t patch_len);

/// Inverse of patchify over the retained samples.
template <typename T>
Matrix<T> unpatchify(const PatchGrid<T>& grid);

/// Bernoulli(p_mask) mask over a channels x windows grid; true = masked.
struct MaskPattern {
  std::size_t channels = 0;
  std::size_t windows = 0;
  double p_mask = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> masked;  // row-major, same order as PatchGrid tokens

  bool at(std::size_t channel, std::size_t window) const { return masked[channel * windows + window] != 0; }
  bool token(std::size_t index) const { return masked[index] != 0; }
  std::size_t count() const;
  std::size_t size() const noexcept { return masked.size(); }

  /// All-false pattern.
  static MaskPattern none(std::size_t channels, std::size_t windows);
  friend bool operator==(const MaskPattern&, const MaskPattern&) = default;
};

MaskPattern sample_mask(std::size_t channels, std::size_t windows, double p_mask, std::uint64_t seed);

}  // namespace lcm
