#include "lcm/tokenizer.hpp"

#include <algorithm>
#include <cmath>

#include "lcm/rng.hpp"
#include "lcm/simd.hpp"

namespace lcm {

template <typename T>
Matrix<T> apply_channel_map(const Matrix<T>& x, const ChannelMap<T>& map) {
  require(map.source_channels() == x.rows(),
          "channel map expects " + std::to_string(map.source_channels()) + " channels, got " +
              std::to_string(x.rows()));
  Matrix<T> out(map.target_channels(), x.cols());
  simd::gemm_nn(map.weights.data(), x.data(), out.data(), map.target_channels(), x.cols(), x.rows(), false);
  return out;
}

template <typename T>
PatchGrid<T> patchify(const Matrix<T>& x, std::size_t patch_len) {
  require(patch_len > 0, "patch length must be positive");
  require(x.cols() >= patch_len, "signal shorter than one patch");
  PatchGrid<T> grid;
  grid.channels = x.rows();
  grid.windows = x.cols() / patch_len;
  grid.patch_len = patch_len;
  grid.patches = Matrix<T>(grid.tokens(), patch_len);
  for (std::size_t i = 0; i < grid.channels; ++i) {
    for (std::size_t j = 0; j < grid.windows; ++j) {
      const auto src = x.row(i).subspan(j * patch_len, patch_len);
      std::copy(src.begin(), src.end(), grid.patches.row(i * grid.windows + j).begin());
    }
  }
  return grid;
}

template <typename T>
Matrix<T> unpatchify(const PatchGrid<T>& grid) {
  Matrix<T> x(grid.channels, grid.windows * grid.patch_len);
  for (std::size_t i = 0; i < grid.channels; ++i) {
    for (std::size_t j = 0; j < grid.windows; ++j) {
      const auto src = grid.patch(i, j);
      std::copy(src.begin(), src.end(), x.row(i).begin() + static_cast<std::ptrdiff_t>(j * grid.patch_len));
    }
  }
  return x;
}

std::size_t MaskPattern::count() const {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
}

MaskPattern MaskPattern::none(std::size_t channels, std::size_t windows) {
  return MaskPattern{channels, windows, 0.0, 0, std::vector<std::uint8_t>(channels * windows, 0)};
}

MaskPattern sample_mask(std::size_t channels, std::size_t windows, double p_mask, std::uint64_t seed) {
  require(std::isfinite(p_mask) && p_mask >= 0.0 && p_mask <= 1.0, "p_mask must lie in [0, 1]");
  MaskPattern mask{channels, windows, p_mask, seed, std::vector<std::uint8_t>(channels * windows, 0)};
  Rng rng(derive_seed(seed, rng_domain::kMask, 0));
  for (auto& m : mask.masked) m = uniform01(rng) < p_mask ? 1 : 0;
  return mask;
}

template Matrix<float> apply_channel_map(const Matrix<float>&, const ChannelMap<float>&);
template Matrix<double> apply_channel_map(const Matrix<double>&, const ChannelMap<double>&);
template PatchGrid<float> patchify(const Matrix<float>&, std::size_t);
template PatchGrid<double> patchify(const Matrix<double>&, std::size_t);
template Matrix<float> unpatchify(const PatchGrid<float>&);
template Matrix<double> unpatchify(const PatchGrid<double>&);

}  // namespace lcm
