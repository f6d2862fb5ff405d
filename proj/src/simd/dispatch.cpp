#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string_view>

#include "lcm/simd.hpp"

namespace lcm::simd {

#ifndef LCM_HAVE_AVX2_TU
template <>
const KernelTable<float>* avx2_kernels<float>() noexcept {
  return nullptr;
}
template <>
const KernelTable<double>* avx2_kernels<double>() noexcept {
  return nullptr;
}
#endif

namespace {

bool cpu_has_avx2_fma() noexcept {
#if defined(LCM_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() noexcept {
  Isa isa = detected_isa();
  if (const char* env = std::getenv("LCM_ISA")) {
    if (std::string_view(env) == "scalar") isa = Isa::kScalar;
  }
  return isa;
}

std::atomic<Isa>& selection() noexcept {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

Isa detected_isa() noexcept {
  static const bool avx2 = cpu_has_avx2_fma();
  return avx2 ? Isa::kAvx2 : Isa::kScalar;
}

Isa active_isa() noexcept { return selection().load(std::memory_order_relaxed); }

bool set_isa(Isa isa) noexcept {
  if (isa == Isa::kAvx2 && detected_isa() != Isa::kAvx2) return false;
  selection().store(isa, std::memory_order_relaxed);
  return true;
}

template <typename T>
const KernelTable<T>& kernels() noexcept {
  if (active_isa() == Isa::kAvx2) return *avx2_kernels<T>();
  return scalar_kernels<T>();
}

template const KernelTable<float>& kernels<float>() noexcept;
template const KernelTable<double>& kernels<double>() noexcept;

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate) {
  const auto& kt = kernels<T>();
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T v = kt.dot(ai, b + j * k, k);
      ci[j] = accumulate ? ci[j] + v : v;
    }
  }
}

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate) {
  const auto& kt = kernels<T>();
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, T{0});
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      if (ai[p] != T{0}) kt.axpy(ai[p], b + p * n, ci, n);
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate) {
  const auto& kt = kernels<T>();
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (ap[i] != T{0}) kt.axpy(ap[i], bp, c + i * n, n);
    }
  }
}

template void gemm_nt<float>(const float*, const float*, float*, std::size_t, std::size_t,
                             std::size_t, bool);
template void gemm_nt<double>(const double*, const double*, double*, std::size_t, std::size_t,
                              std::size_t, bool);
template void gemm_nn<float>(const float*, const float*, float*, std::size_t, std::size_t,
                             std::size_t, bool);
template void gemm_nn<double>(const double*, const double*, double*, std::size_t, std::size_t,
                              std::size_t, bool);
template void gemm_tn<float>(const float*, const float*, float*, std::size_t, std::size_t,
                             std::size_t, bool);
template void gemm_tn<double>(const double*, const double*, double*, std::size_t, std::size_t,
                              std::size_t, bool);

}  // namespace lcm::simd
