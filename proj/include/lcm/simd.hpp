#pragma once

// Data-parallel inner loops used by the encoder, losses and optimizer.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant. The active table is chosen once at startup from CPUID; it can be
// pinned with `set_isa` (tests) or the LCM_ISA environment variable
// ("scalar" or "avx2"). Results are deterministic for a fixed ISA; the two
// ISAs differ only by floating-point reassociation.

#include <cstddef>
#include <span>
#include <string_view>

namespace lcm::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa) noexcept;

/// Best ISA supported by both the build and the running CPU.
Isa detected_isa() noexcept;
Isa active_isa() noexcept;
/// Returns false (and leaves the selection unchanged) if `isa` is unavailable.
bool set_isa(Isa isa) noexcept;

template <typename T>
struct AdamwCoeffs {
  T lr;
  T weight_decay;
  T beta1;
  T beta2;
  T eps;
  T bias_correction1;  // 1 - beta1^t
  T bias_correction2;  // 1 - beta2^t
};

template <typename T>
struct KernelTable {
  T (*dot)(const T* a, const T* b, std::size_t n);
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  T (*sum_squares)(const T* x, std::size_t n);
  // xi <- xi + (1 - m) (theta - xi)
  void (*ema)(T* xi, const T* theta, T m, std::size_t n);
  void (*adamw)(T* param, const T* grad, T* m, T* v, std::size_t n, const AdamwCoeffs<T>& c);
};

template <typename T>
const KernelTable<T>& scalar_kernels() noexcept;
template <typename T>
const KernelTable<T>* avx2_kernels() noexcept;  // nullptr when not compiled in

template <typename T>
const KernelTable<T>& kernels() noexcept;

template <typename T>
inline T dot(std::span<const T> a, std::span<const T> b) {
  return kernels<T>().dot(a.data(), b.data(), a.size());
}

template <typename T>
inline void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  kernels<T>().axpy(alpha, x.data(), y.data(), x.size());
}

template <typename T>
inline T sum_squares(std::span<const T> x) {
  return kernels<T>().sum_squares(x.data(), x.size());
}

// Dense row-major products built on the kernels above.
//   gemm_nt:  C (+)= A[m x k] * B[n x k]^T   (dot products over k)
//   gemm_nn:  C (+)= A[m x k] * B[k x n]     (axpy over rows of B)
//   gemm_tn:  C (+)= A[k x m]^T * B[k x n]   (axpy over rows of B)
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate);
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate);
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate);

}  // namespace lcm::simd
