#include <cmath>

#include "lcm/simd.hpp"

namespace lcm::simd {
namespace {

template <typename T>
T dot_scalar(const T* a, const T* b, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy_scalar(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T sum_squares_scalar(const T* x, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

template <typename T>
void ema_scalar(T* xi, const T* theta, T m, std::size_t n) {
  const T rate = T{1} - m;
  for (std::size_t i = 0; i < n; ++i) xi[i] += rate * (theta[i] - xi[i]);
}

template <typename T>
void adamw_scalar(T* param, const T* grad, T* m, T* v, std::size_t n, const AdamwCoeffs<T>& c) {
  const T one_minus_b1 = T{1} - c.beta1;
  const T one_minus_b2 = T{1} - c.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    m[i] = c.beta1 * m[i] + one_minus_b1 * g;
    v[i] = c.beta2 * v[i] + one_minus_b2 * g * g;
    const T m_hat = m[i] / c.bias_correction1;
    const T v_hat = v[i] / c.bias_correction2;
    const T p = param[i];
    param[i] = p - c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * p);
  }
}

template <typename T>
constexpr KernelTable<T> kScalarTable{
    &dot_scalar<T>, &axpy_scalar<T>, &sum_squares_scalar<T>, &ema_scalar<T>, &adamw_scalar<T>,
};

}  // namespace

template <>
const KernelTable<float>& scalar_kernels<float>() noexcept {
  return kScalarTable<float>;
}
template <>
const KernelTable<double>& scalar_kernels<double>() noexcept {
  return kScalarTable<double>;
}

}  // namespace lcm::simd
