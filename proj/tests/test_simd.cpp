#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "lcm/rng.hpp"
#include "lcm/simd.hpp"

using namespace lcm;
using namespace lcm::simd;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(standard_normal(rng));
  return v;
}

template <typename T>
T tol() {
  return std::is_same_v<T, float> ? T(1e-5) : T(1e-13);
}

class IsaGuard {
 public:
  IsaGuard() : saved_(active_isa()) {}
  ~IsaGuard() { set_isa(saved_); }

 private:
  Isa saved_;
};

}  // namespace

template <typename T>
class KernelEquivalence : public ::testing::Test {};
using Scalars = ::testing::Types<float, double>;
TYPED_TEST_SUITE(KernelEquivalence, Scalars);

TYPED_TEST(KernelEquivalence, AvxMatchesScalarReference) {
  using T = TypeParam;
  const KernelTable<T>* fast = avx2_kernels<T>();
  if (fast == nullptr || detected_isa() != Isa::kAvx2) GTEST_SKIP() << "AVX2 not available";
  const KernelTable<T>& ref = scalar_kernels<T>();
  Rng rng(11);
  // Lengths straddle the vector width and its tails.
  for (std::size_t n : {0, 1, 3, 4, 7, 8, 9, 15, 16, 17, 31, 33, 64, 100, 257}) {
    const auto a = random_vec<T>(rng, n), b = random_vec<T>(rng, n);
    const T scale = std::sqrt(T(n) + 1);
    EXPECT_NEAR(fast->dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n), tol<T>() * scale * 4) << n;
    EXPECT_NEAR(fast->sum_squares(a.data(), n), ref.sum_squares(a.data(), n), tol<T>() * (T(n) + 1) * 4) << n;

    auto y1 = b, y2 = b;
    fast->axpy(T(0.37), a.data(), y1.data(), n);
    ref.axpy(T(0.37), a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], tol<T>());

    auto e1 = b, e2 = b;
    fast->ema(e1.data(), a.data(), T(0.996), n);
    ref.ema(e2.data(), a.data(), T(0.996), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(e1[i], e2[i], tol<T>());

    const AdamwCoeffs<T> c{T(1e-3), T(0.05), T(0.9), T(0.95), T(1e-8), T(0.1), T(0.05)};
    auto p1 = a, p2 = a, m1 = b, m2 = b;
    std::vector<T> v1(n), v2(n);
    for (std::size_t i = 0; i < n; ++i) v1[i] = v2[i] = std::abs(b[i]);
    const auto g = random_vec<T>(rng, n);
    fast->adamw(p1.data(), g.data(), m1.data(), v1.data(), n, c);
    ref.adamw(p2.data(), g.data(), m2.data(), v2.data(), n, c);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(p1[i], p2[i], tol<T>() * 10);
      EXPECT_NEAR(m1[i], m2[i], tol<T>());
      EXPECT_NEAR(v1[i], v2[i], tol<T>());
    }
  }
}

TYPED_TEST(KernelEquivalence, EmaIsExactAtFixedPoints) {
  using T = TypeParam;
  Rng rng(5);
  const auto theta = random_vec<T>(rng, 37);
  for (const KernelTable<T>* k : {&scalar_kernels<T>(), avx2_kernels<T>()}) {
    if (k == nullptr) continue;
    auto xi = random_vec<T>(rng, 37);
    const auto before = xi;
    k->ema(xi.data(), theta.data(), T(1), xi.size());
    EXPECT_EQ(xi, before);
    auto same = theta;
    k->ema(same.data(), theta.data(), T(0.3), same.size());
    EXPECT_EQ(same, theta);
  }
}

TYPED_TEST(KernelEquivalence, GemmMatchesNaiveProductOnEveryIsa) {
  using T = TypeParam;
  IsaGuard guard;
  Rng rng(9);
  const std::size_t m = 5, n = 7, k = 11;
  const auto a = random_vec<T>(rng, m * k), bt = random_vec<T>(rng, n * k), b = random_vec<T>(rng, k * n),
             at = random_vec<T>(rng, k * m);
  for (Isa isa : {Isa::kScalar, Isa::kAvx2}) {
    if (!set_isa(isa)) continue;
    std::vector<T> c1(m * n), c2(m * n), c3(m * n, T(1));
    gemm_nt(a.data(), bt.data(), c1.data(), m, n, k, false);
    gemm_nn(a.data(), b.data(), c2.data(), m, n, k, false);
    gemm_tn(at.data(), b.data(), c3.data(), m, n, k, true);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T r1 = 0, r2 = 0, r3 = 1;
        for (std::size_t l = 0; l < k; ++l) {
          r1 += a[i * k + l] * bt[j * k + l];
          r2 += a[i * k + l] * b[l * n + j];
          r3 += at[l * m + i] * b[l * n + j];
        }
        EXPECT_NEAR(c1[i * n + j], r1, tol<T>() * 10);
        EXPECT_NEAR(c2[i * n + j], r2, tol<T>() * 10);
        EXPECT_NEAR(c3[i * n + j], r3, tol<T>() * 10);
      }
    }
  }
}

TEST(Dispatch, SetIsaRoundTrips) {
  IsaGuard guard;
  EXPECT_TRUE(set_isa(Isa::kScalar));
  EXPECT_EQ(active_isa(), Isa::kScalar);
  EXPECT_EQ(isa_name(Isa::kScalar), "scalar");
  EXPECT_EQ(isa_name(Isa::kAvx2), "avx2");
  if (detected_isa() == Isa::kAvx2) {
    EXPECT_TRUE(set_isa(Isa::kAvx2));
    EXPECT_EQ(&kernels<float>(), avx2_kernels<float>());
  }
  set_isa(Isa::kScalar);
  EXPECT_EQ(&kernels<double>(), &scalar_kernels<double>());
}
