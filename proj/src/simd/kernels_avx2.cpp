// Compiled with -mavx2 -mfma. Only reached after CPUID confirms support.
#include <immintrin.h>

#include <cmath>

#include "lcm/simd.hpp"

namespace lcm::simd {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t kLanes = 8;
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V zero() { return _mm256_setzero_ps(); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static V sub(V a, V b) { return _mm256_sub_ps(a, b); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V div(V a, V b) { return _mm256_div_ps(a, b); }
  static V sqrt(V a) { return _mm256_sqrt_ps(a); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t kLanes = 4;
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V zero() { return _mm256_setzero_pd(); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static V sub(V a, V b) { return _mm256_sub_pd(a, b); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V div(V a, V b) { return _mm256_div_pd(a, b); }
  static V sqrt(V a) { return _mm256_sqrt_pd(a); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

template <typename S>
typename S::T dot_avx2(const typename S::T* a, const typename S::T* b, std::size_t n) {
  constexpr std::size_t L = S::kLanes;
  typename S::V acc0 = S::zero();
  typename S::V acc1 = S::zero();
  std::size_t i = 0;
  for (; i + 2 * L <= n; i += 2 * L) {
    acc0 = S::fmadd(S::load(a + i), S::load(b + i), acc0);
    acc1 = S::fmadd(S::load(a + i + L), S::load(b + i + L), acc1);
  }
  for (; i + L <= n; i += L) acc0 = S::fmadd(S::load(a + i), S::load(b + i), acc0);
  typename S::T acc = S::hsum(S::add(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename S>
void axpy_avx2(typename S::T alpha, const typename S::T* x, typename S::T* y, std::size_t n) {
  constexpr std::size_t L = S::kLanes;
  const typename S::V va = S::set1(alpha);
  std::size_t i = 0;
  for (; i + L <= n; i += L) S::store(y + i, S::fmadd(va, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename S>
typename S::T sum_squares_avx2(const typename S::T* x, std::size_t n) {
  return dot_avx2<S>(x, x, n);
}

template <typename S>
void ema_avx2(typename S::T* xi, const typename S::T* theta, typename S::T m, std::size_t n) {
  constexpr std::size_t L = S::kLanes;
  using T = typename S::T;
  const T rate = T{1} - m;
  const typename S::V vr = S::set1(rate);
  std::size_t i = 0;
  for (; i + L <= n; i += L) {
    const typename S::V x = S::load(xi + i);
    S::store(xi + i, S::fmadd(vr, S::sub(S::load(theta + i), x), x));
  }
  for (; i < n; ++i) xi[i] += rate * (theta[i] - xi[i]);
}

template <typename S>
void adamw_avx2(typename S::T* param, const typename S::T* grad, typename S::T* m,
                typename S::T* v, std::size_t n, const AdamwCoeffs<typename S::T>& c) {
  constexpr std::size_t L = S::kLanes;
  using T = typename S::T;
  using V = typename S::V;
  const V b1 = S::set1(c.beta1), b2 = S::set1(c.beta2);
  const V omb1 = S::set1(T{1} - c.beta1), omb2 = S::set1(T{1} - c.beta2);
  const V bc1 = S::set1(c.bias_correction1), bc2 = S::set1(c.bias_correction2);
  const V eps = S::set1(c.eps), lr = S::set1(c.lr), wd = S::set1(c.weight_decay);
  std::size_t i = 0;
  for (; i + L <= n; i += L) {
    const V g = S::load(grad + i);
    const V mi = S::fmadd(b1, S::load(m + i), S::mul(omb1, g));
    const V vi = S::fmadd(b2, S::load(v + i), S::mul(S::mul(omb2, g), g));
    S::store(m + i, mi);
    S::store(v + i, vi);
    const V m_hat = S::div(mi, bc1);
    const V v_hat = S::div(vi, bc2);
    const V p = S::load(param + i);
    const V step = S::fmadd(wd, p, S::div(m_hat, S::add(S::sqrt(v_hat), eps)));
    S::store(param + i, S::sub(p, S::mul(lr, step)));
  }
  const T one_minus_b1 = T{1} - c.beta1;
  const T one_minus_b2 = T{1} - c.beta2;
  for (; i < n; ++i) {
    const T g = grad[i];
    m[i] = c.beta1 * m[i] + one_minus_b1 * g;
    v[i] = c.beta2 * v[i] + one_minus_b2 * g * g;
    const T m_hat = m[i] / c.bias_correction1;
    const T v_hat = v[i] / c.bias_correction2;
    const T p = param[i];
    param[i] = p - c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * p);
  }
}

template <typename S>
constexpr KernelTable<typename S::T> kAvx2Table{
    &dot_avx2<S>, &axpy_avx2<S>, &sum_squares_avx2<S>, &ema_avx2<S>, &adamw_avx2<S>,
};

}  // namespace

template <>
const KernelTable<float>* avx2_kernels<float>() noexcept {
  return &kAvx2Table<F32>;
}
template <>
const KernelTable<double>* avx2_kernels<double>() noexcept {
  return &kAvx2Table<F64>;
}

}  // namespace lcm::simd
