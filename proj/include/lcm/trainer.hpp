#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lcm/data_model.hpp"
#include "lcm/losses.hpp"
#include "lcm/model.hpp"
#include "lcm/optim.hpp"

namespace lcm {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::uint64_t epochs = 200;
  double p_mask = 0.5;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  ScheduleConfig schedule;
  EncoderConfig encoder;
  /// Save a checkpoint every this many epochs (0 = only at the end).
  std::uint64_t checkpoint_every_epochs = 0;

  void validate() const;
};

/// Mutable training state owned by the training loop.
struct TrainState {
  ParamStore<float> theta;
  ParamStore<float> xi;
  AdamWState<float> adam;
  std::uint64_t step = 0;

  /// theta from the seeded initializer, xi a copy of theta, zero moments.
  static TrainState initial(const EncoderConfig& cfg, std::uint64_t seed);
  Checkpoint to_checkpoint() const;
  static TrainState from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& cfg);
};

struct TrainLogRecord {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double loss_alignment = 0.0;
  double loss_reconstruction = 0.0;
  double loss_total = 0.0;
  double lr = 0.0;
  double wd = 0.0;
  double momentum = 0.0;
  double g_first_mean = 0.0;
  double g_last_mean = 0.0;
  double g_min = 0.0;
  double g_max = 0.0;

  friend bool operator==(const TrainLogRecord&, const TrainLogRecord&) = default;
};

/// One JSON object, fields in declaration order:
/// epoch, step, L_A, L_R, L_total, lr, wd, m, g_first_mean, g_last_mean, g_min, g_max.
std::string to_json_line(const TrainLogRecord& record);
TrainLogRecord parse_log_line(const std::string& line);

struct GradStats {
  double first_mean = 0.0;
  double last_mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

using TensorGroup = std::function<bool(const std::string&)>;

/// Per-tensor L2 norms; min/max over all tensors, means over each group
/// (0 for an empty group).
template <typename T>
GradStats grad_stats(const ParamStore<T>& grads, const TensorGroup& first, const TensorGroup& last);
template <typename T>
GradStats grad_stats(const ParamStore<T>& grads, const EncoderConfig& cfg);

/// Batched objective L = L_A + lambda * L_R. L_A averages over every token
/// of every segment; L_R averages over every masked patch of the batch.
/// The target branch (xi) supplies h and the reconstruction targets, the
/// patches of its own channel-mapped input, and receives no gradient.
/// When `grads` is non-null, dL/dtheta is accumulated into it.
template <typename T>
LossReport batch_objective(const EncoderConfig& cfg, const ParamStore<T>& theta, const ParamStore<T>& xi,
                           const std::vector<const Matrix<T>*>& segments, const std::vector<MaskPattern>& masks,
                           double lambda, ParamStore<T>* grads);

/// Mask of segment `slot` in the batch at `step`.
MaskPattern mask_for(const TrainConfig& cfg, std::uint64_t step, std::size_t slot);

struct StepOverrides {
  std::optional<double> lr;
  std::optional<double> momentum;
};

/// Forward both encoders, losses, AdamW on theta, EMA on xi.
TrainLogRecord train_step(const std::vector<const Matrix<float>*>& batch, TrainState& state, std::uint64_t step,
                          const TrainConfig& cfg, const ScheduleConfig& schedule, const StepOverrides& overrides = {});

/// Schedule with total_epochs and steps_per_epoch fixed by the data size.
ScheduleConfig resolved_schedule(const TrainConfig& cfg, std::size_t segments);

struct PretrainHooks {
  std::function<void(const TrainLogRecord&)> on_log;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

/// Deterministic pretraining. Batch order is a seeded shuffle per epoch;
/// mask seeds derive from (seed, step). When `resume` is given, training
/// continues from its step with identical subsequent records.
Checkpoint run_pretraining(const TrainConfig& cfg, const SegmentBatch& data, const PretrainHooks& hooks = {},
                           const std::optional<Checkpoint>& resume = std::nullopt);

/// Segment indices of epoch `epoch` in delivery order.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t count);

struct GradCheckOptions {
  std::size_t coords_per_tensor = 32;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t batch = 2;
  double p_mask = 0.5;
  double lambda = 1.0;
  /// Restrict the check to tensors whose names start with one of these prefixes.
  std::vector<std::string> only_prefixes;
  /// Multiply the analytic gradient of this tensor by (1 + corrupt_factor) before comparing.
  std::optional<std::string> corrupt_tensor;
  double corrupt_factor = 0.1;
};

struct TensorCheck {
  std::string name;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const noexcept { return max_rel_error < tolerance; }
};

/// Absolute floor of the relative-error denominator. Central differences at
/// step 1e-5 carry roundoff of ulp(L) / 2e-5, a few 1e-10 for L ~ 30, so
/// gradients that vanish identically (the key bias) need a floor well above it.
inline constexpr double kGradCheckFloor = 1e-5;

/// |a - n| / max(|a|, |n|, kGradCheckFloor).
double relative_error(double analytic, double numeric);

/// Small encoder used by `lcm gradcheck` without a config:
/// M=3, M'=4, p_t=8, n_t=4, d=16, 2 layers, 2 heads, kernel 3.
EncoderConfig gradcheck_config();

/// Central-difference check of dL/dtheta in double precision on random data.
GradCheckReport grad_check(const EncoderConfig& cfg, std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace lcm
