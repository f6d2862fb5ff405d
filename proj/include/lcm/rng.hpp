#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace lcm {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `index` of a generator family rooted at `seed`, tagged by `domain`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t domain,
                                    std::uint64_t index) noexcept {
  return mix64(mix64(seed ^ mix64(domain)) + index);
}

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits; avoids
/// implementation-defined distribution algorithms.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Box-Muller standard normal. Deterministic across standard libraries.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
}

namespace rng_domain {
inline constexpr std::uint64_t kSynth = 1;
inline constexpr std::uint64_t kMask = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kProbe = 5;
inline constexpr std::uint64_t kGradCheck = 6;
}  // namespace rng_domain

}  // namespace lcm
