#include "lcm/optim.hpp"

#include <cmath>
#include <numbers>

#include "lcm/error.hpp"
#include "lcm/simd.hpp"

namespace lcm {
namespace {

double progress(std::uint64_t step, const ScheduleConfig& cfg) {
  const auto total = cfg.total_steps();
  require(step <= total, "step " + std::to_string(step) + " exceeds total steps " + std::to_string(total));
  return static_cast<double>(step) / static_cast<double>(total);
}

}  // namespace

LrMode parse_lr_mode(const std::string& text) {
  if (text == "warmup-cosine") return LrMode::kWarmupCosine;
  if (text == "polynomial") return LrMode::kPolynomial;
  throw ValidationError("unknown lr mode '" + text + "' (expected warmup-cosine or polynomial)");
}

std::string to_string(LrMode mode) { return mode == LrMode::kWarmupCosine ? "warmup-cosine" : "polynomial"; }

void ScheduleConfig::validate() const {
  require(std::isfinite(lr_max) && std::isfinite(lr_final) && lr_final > 0 && lr_final <= lr_max,
          "schedule: need 0 < lr_final <= lr_max");
  require(total_epochs >= 1 && steps_per_epoch >= 1, "schedule: total_epochs and steps_per_epoch must be >= 1");
  require(warmup_epochs < total_epochs, "schedule: warmup_epochs must be < total_epochs");
  require(std::isfinite(decay_exponent) && decay_exponent > 0, "schedule: decay_exponent must be positive");
  require(std::isfinite(wd_init) && std::isfinite(wd_final) && wd_init >= 0 && wd_final >= 0,
          "schedule: weight decay must be >= 0");
  require(0.9 <= m_low && m_low <= m_high && m_high <= 1.0, "schedule: need 0.9 <= m_low <= m_high <= 1");
}

double lr_at(std::uint64_t step, const ScheduleConfig& cfg) {
  const double frac = progress(step, cfg);
  if (cfg.mode == LrMode::kPolynomial) return cfg.lr_max * std::pow(1.0 - frac, cfg.decay_exponent);
  const auto warmup = cfg.warmup_steps();
  if (step < warmup) return cfg.lr_max * static_cast<double>(step) / static_cast<double>(warmup);
  const double span = static_cast<double>(cfg.total_steps() - warmup);
  const double phase = static_cast<double>(step - warmup) / span;
  return cfg.lr_final + 0.5 * (cfg.lr_max - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * phase));
}

double wd_at(std::uint64_t step, const ScheduleConfig& cfg) {
  const double frac = progress(step, cfg);
  return cfg.wd_init + 0.5 * (cfg.wd_final - cfg.wd_init) * (1.0 + std::cos(frac * std::numbers::pi));
}

double momentum_at(std::uint64_t step, const ScheduleConfig& cfg) {
  const double frac = progress(step, cfg);
  return cfg.m_low + (cfg.m_high - cfg.m_low) * 0.5 * (1.0 - std::cos(std::numbers::pi * frac));
}

template <typename T>
AdamWState<T> AdamWState<T>::zeros_like(const ParamStore<T>& params) {
  return AdamWState<T>{lcm::zeros_like(params), lcm::zeros_like(params), 0};
}

template <typename T>
void adamw_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamWState<T>& state, double lr, double wd,
                const DecayRule& decays) {
  require(std::isfinite(lr) && lr >= 0 && std::isfinite(wd) && wd >= 0, "adamw: lr and wd must be finite and >= 0");
  for (const auto& [name, param] : params) {
    const auto g = grads.find(name);
    require(g != grads.end(), "adamw: missing gradient for " + name);
    require(g->second.shape == param.shape, "adamw: gradient shape mismatch for " + name);
    require(state.m.count(name) && state.v.count(name) && state.m.at(name).shape == param.shape &&
                state.v.at(name).shape == param.shape,
            "adamw: optimizer state does not match " + name);
    for (T v : g->second.data) {
      if (!std::isfinite(v)) throw NumericError("gradient overflow at tensor " + name);
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  for (auto& [name, param] : params) {
    const simd::AdamwCoeffs<T> c{
        static_cast<T>(lr),
        static_cast<T>(decays(name) ? wd : 0.0),
        static_cast<T>(AdamWState<T>::kBeta1),
        static_cast<T>(AdamWState<T>::kBeta2),
        static_cast<T>(AdamWState<T>::kEps),
        static_cast<T>(1.0 - std::pow(AdamWState<T>::kBeta1, t)),
        static_cast<T>(1.0 - std::pow(AdamWState<T>::kBeta2, t)),
    };
    simd::kernels<T>().adamw(param.data.data(), grads.at(name).data.data(), state.m.at(name).data.data(),
                             state.v.at(name).data.data(), param.size(), c);
  }
}

template <typename T>
void ema_update(const ParamStore<T>& theta, ParamStore<T>& xi, double m) {
  require(std::isfinite(m) && m >= 0.0 && m <= 1.0, "ema: momentum must lie in [0, 1]");
  require(theta.size() == xi.size(), "ema: parameter sets differ in size");
  for (const auto& [name, t] : theta) {
    const auto it = xi.find(name);
    require(it != xi.end() && it->second.shape == t.shape, "ema: shape mismatch for " + name);
  }
  for (auto& [name, x] : xi) {
    simd::kernels<T>().ema(x.data.data(), theta.at(name).data.data(), static_cast<T>(m), x.size());
  }
}

template struct AdamWState<float>;
template struct AdamWState<double>;
template void adamw_step<float>(ParamStore<float>&, const ParamStore<float>&, AdamWState<float>&, double, double,
                                const DecayRule&);
template void adamw_step<double>(ParamStore<double>&, const ParamStore<double>&, AdamWState<double>&, double,
                                 double, const DecayRule&);
template void ema_update<float>(const ParamStore<float>&, ParamStore<float>&, double);
template void ema_update<double>(const ParamStore<double>&, ParamStore<double>&, double);

}  // namespace lcm
