#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "lcm/model.hpp"

namespace lcm {

enum class LrMode { kWarmupCosine, kPolynomial };

LrMode parse_lr_mode(const std::string& text);
std::string to_string(LrMode mode);

struct ScheduleConfig {
  double lr_max = 1.5e-4;
  double lr_final = 1e-6;
  std::uint64_t warmup_epochs = 10;
  std::uint64_t total_epochs = 200;
  std::uint64_t steps_per_epoch = 1;
  double decay_exponent = 1.0;  // polynomial mode only
  LrMode mode = LrMode::kWarmupCosine;
  double wd_init = 0.05;
  double wd_final = 0.05;
  double m_low = 0.996;
  double m_high = 1.0;

  std::uint64_t total_steps() const noexcept { return total_epochs * steps_per_epoch; }
  std::uint64_t warmup_steps() const noexcept { return warmup_epochs * steps_per_epoch; }
  void validate() const;
};

/// Warmup-cosine: linear 0 -> lr_max over the warmup steps, then cosine to
/// lr_final at the last step. Polynomial: lr_max * (1 - t/T)^p.
double lr_at(std::uint64_t step, const ScheduleConfig& cfg);

/// Cosine weight decay: w_init + (w_final - w_init) (1 + cos(pi t / T)) / 2.
double wd_at(std::uint64_t step, const ScheduleConfig& cfg);

/// EMA momentum: cosine ramp from m_low at t = 0 to m_high at t = T.
double momentum_at(std::uint64_t step, const ScheduleConfig& cfg);

template <typename T>
struct AdamWState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.95;
  static constexpr double kEps = 1e-8;

  ParamStore<T> m;
  ParamStore<T> v;
  std::uint64_t t = 0;

  static AdamWState zeros_like(const ParamStore<T>& params);
};

using DecayRule = std::function<bool(const std::string&)>;

/// One bias-corrected AdamW step with decoupled decay
/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
/// Tensors for which `decays` returns false use wd = 0. All gradients are
/// checked before any parameter changes.
template <typename T>
void adamw_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamWState<T>& state, double lr, double wd,
                const DecayRule& decays = is_decayed);

/// xi <- m xi + (1 - m) theta, for every tensor.
template <typename T>
void ema_update(const ParamStore<T>& theta, ParamStore<T>& xi, double m);

}  // namespace lcm
