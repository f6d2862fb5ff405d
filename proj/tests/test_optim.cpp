#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lcm/error.hpp"
#include "lcm/optim.hpp"

using namespace lcm;

namespace {

ScheduleConfig reference_schedule() {
  ScheduleConfig s;
  s.total_epochs = 200;
  s.steps_per_epoch = 7;
  return s;
}

ParamStore<double> scalar_store(double v, const std::string& name = "w") {
  ParamStore<double> p;
  p[name] = Tensor<double>({1}, v);
  return p;
}

}  // namespace

TEST(LearningRate, WarmupCosineEndpoints) {
  const ScheduleConfig s = reference_schedule();
  EXPECT_EQ(lr_at(0, s), 0.0);
  EXPECT_NEAR(lr_at(s.warmup_steps(), s), 1.5e-4, 1e-12);
  EXPECT_NEAR(lr_at(s.total_steps(), s), 1e-6, 1e-12);
  EXPECT_NEAR(lr_at(s.warmup_steps() / 2, s), 1.5e-4 * double(s.warmup_steps() / 2) / double(s.warmup_steps()), 1e-15);
  // Halfway through the cosine phase sits at the midpoint.
  const std::uint64_t mid = s.warmup_steps() + (s.total_steps() - s.warmup_steps()) / 2;
  EXPECT_NEAR(lr_at(mid, s), 1e-6 + 0.5 * (1.5e-4 - 1e-6), 1e-9);
  for (std::uint64_t t = s.warmup_steps(); t < s.total_steps(); ++t) EXPECT_GE(lr_at(t, s), lr_at(t + 1, s));
  EXPECT_THROW((void)lr_at(s.total_steps() + 1, s), ValidationError);
}

TEST(LearningRate, PolynomialEndpointsAndShape) {
  ScheduleConfig s = reference_schedule();
  s.mode = LrMode::kPolynomial;
  s.decay_exponent = 2.0;
  EXPECT_EQ(lr_at(0, s), s.lr_max);
  EXPECT_EQ(lr_at(s.total_steps(), s), 0.0);
  const double t = 350, T = double(s.total_steps());
  EXPECT_NEAR(lr_at(350, s), s.lr_max * std::pow(1 - t / T, 2.0), 1e-18);
  EXPECT_EQ(parse_lr_mode("polynomial"), LrMode::kPolynomial);
  EXPECT_EQ(to_string(LrMode::kWarmupCosine), "warmup-cosine");
  EXPECT_THROW((void)parse_lr_mode("step"), ValidationError);
}

TEST(WeightDecay, CosineClosedForm) {
  ScheduleConfig s = reference_schedule();
  s.wd_init = 0.04;
  s.wd_final = 0.4;
  const std::uint64_t T = s.total_steps();
  EXPECT_NEAR(wd_at(0, s), s.wd_final, 1e-12);
  EXPECT_NEAR(wd_at(T, s), s.wd_init, 1e-12);
  EXPECT_NEAR(wd_at(T / 2, s), s.wd_init + (s.wd_final - s.wd_init) * (1 + std::cos(std::numbers::pi * double(T / 2) / double(T))) / 2, 1e-12);
  s.total_epochs = 2;
  s.steps_per_epoch = 1;
  EXPECT_NEAR(wd_at(1, s), (s.wd_init + s.wd_final) / 2, 1e-12);
  EXPECT_EQ(wd_at(5, reference_schedule()), 0.05);
}

TEST(Momentum, RampEndpointsAndMonotone) {
  const ScheduleConfig s = reference_schedule();
  EXPECT_EQ(momentum_at(0, s), 0.996);
  EXPECT_EQ(momentum_at(s.total_steps(), s), 1.0);
  for (std::uint64_t t = 0; t < s.total_steps(); ++t) EXPECT_LE(momentum_at(t, s), momentum_at(t + 1, s));
}

TEST(Schedule, Validation) {
  ScheduleConfig s = reference_schedule();
  s.warmup_epochs = 300;
  EXPECT_THROW(s.validate(), ValidationError);
  s = reference_schedule();
  s.m_low = 1.2;
  EXPECT_THROW(s.validate(), ValidationError);
  s = reference_schedule();
  s.steps_per_epoch = 0;
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(AdamW, ZeroGradientNoDecayLeavesParams) {
  ParamStore<double> p = scalar_store(0.7);
  auto state = AdamWState<double>::zeros_like(p);
  adamw_step(p, scalar_store(0.0), state, 1e-3, 0.0);
  EXPECT_EQ(p["w"].data[0], 0.7);
  EXPECT_EQ(state.t, 1u);
}

TEST(AdamW, ZeroLearningRateStillUpdatesMoments) {
  ParamStore<double> p = scalar_store(0.7);
  auto state = AdamWState<double>::zeros_like(p);
  adamw_step(p, scalar_store(2.0), state, 0.0, 0.05);
  EXPECT_EQ(p["w"].data[0], 0.7);
  EXPECT_NEAR(state.m["w"].data[0], 0.2, 1e-15);
  EXPECT_NEAR(state.v["w"].data[0], 0.2, 1e-15);
}

TEST(AdamW, ScalarFirstStepReference) {
  ParamStore<double> p = scalar_store(1.0);
  auto state = AdamWState<double>::zeros_like(p);
  adamw_step(p, scalar_store(1.0), state, 1e-3, 0.0);
  // m_hat = 1, v_hat = 1 at t = 1.
  EXPECT_NEAR(p["w"].data[0], 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8)), 1e-15);
}

TEST(AdamW, DecoupledDecayRespectsExemptions) {
  ParamStore<double> p = scalar_store(2.0, "blocks.0.attn.q_w");
  p["blocks.0.ln1.gain"] = Tensor<double>({1}, 2.0);
  ParamStore<double> g = zeros_like(p);
  auto state = AdamWState<double>::zeros_like(p);
  adamw_step(p, g, state, 0.1, 0.5);
  EXPECT_NEAR(p["blocks.0.attn.q_w"].data[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
  EXPECT_EQ(p["blocks.0.ln1.gain"].data[0], 2.0);
}

TEST(AdamW, NonFiniteGradientAbortsBeforeAnyUpdate) {
  ParamStore<double> p = scalar_store(1.0, "a");
  p["b"] = Tensor<double>({1}, 1.0);
  ParamStore<double> g = scalar_store(1.0, "a");
  g["b"] = Tensor<double>({1}, std::nan(""));
  auto state = AdamWState<double>::zeros_like(p);
  try {
    adamw_step(p, g, state, 1e-3, 0.0);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_STREQ(e.what(), "gradient overflow at tensor b");
  }
  EXPECT_EQ(p["a"].data[0], 1.0);
  EXPECT_EQ(state.t, 0u);
}

TEST(Ema, FixedPointsAndScalarExample) {
  ParamStore<double> theta = scalar_store(0.0), xi = scalar_store(1.0);
  ema_update(theta, xi, 0.996);
  EXPECT_NEAR(xi["w"].data[0], 0.996, 1e-15);
  ParamStore<double> frozen = scalar_store(0.123);
  ema_update(theta, frozen, 1.0);
  EXPECT_EQ(frozen["w"].data[0], 0.123);
  ParamStore<double> same = scalar_store(0.5), copy = scalar_store(0.5);
  ema_update(same, copy, 0.3);
  EXPECT_EQ(copy["w"].data[0], 0.5);
}

TEST(Ema, ContractionTowardFrozenTheta) {
  ParamStore<double> theta = scalar_store(0.0), xi = scalar_store(1.0);
  theta["v"] = Tensor<double>({3}, 1.0);
  xi["v"] = Tensor<double>({3}, -1.0);
  for (int k = 1; k <= 20; ++k) {
    ema_update(theta, xi, 0.999);
    double d = 0;
    d += xi["w"].data[0] * xi["w"].data[0];
    for (double v : xi["v"].data) d += (v - 1) * (v - 1);
    EXPECT_NEAR(std::sqrt(d), std::pow(0.999, k) * std::sqrt(13.0), 1e-9 * std::sqrt(13.0));
  }
}
