#include "lcm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "lcm/error.hpp"
#include "lcm/rng.hpp"
#include "lcm/simd.hpp"

namespace lcm {
namespace {

constexpr const char* kGroups[] = {"theta/", "xi/", "adam_m/", "adam_v/"};

template <typename T>
Matrix<T> patches_of(const Matrix<T>& mapped, const EncoderConfig& cfg) {
  Matrix<T> out(cfg.tokens(), cfg.patch_len);
  for (std::size_t i = 0; i < cfg.mapped_channels; ++i) {
    for (std::size_t j = 0; j < cfg.windows; ++j) {
      std::copy_n(mapped.row(i).begin() + static_cast<std::ptrdiff_t>(j * cfg.patch_len), cfg.patch_len,
                  out.row(i * cfg.windows + j).begin());
    }
  }
  return out;
}

std::size_t uniform_below(Rng& rng, std::size_t bound) {
  // Rejection sampling keeps the draw unbiased and library-independent.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

}  // namespace

void TrainConfig::validate() const {
  require(batch_size >= 1, "train: batch_size must be >= 1");
  require(epochs >= 1, "train: epochs must be >= 1");
  require(std::isfinite(p_mask) && p_mask >= 0 && p_mask <= 1, "train: p_mask must lie in [0, 1]");
  require(std::isfinite(lambda) && lambda >= 0, "train: lambda must be >= 0");
  encoder.validate();
  ScheduleConfig s = schedule;
  s.total_epochs = epochs;
  s.validate();
}

TrainState TrainState::initial(const EncoderConfig& cfg, std::uint64_t seed) {
  TrainState state;
  state.theta = init_params<float>(cfg, seed);
  state.xi = state.theta;
  state.adam = AdamWState<float>::zeros_like(state.theta);
  return state;
}

Checkpoint TrainState::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.step = step;
  const ParamStore<float>* stores[] = {&theta, &xi, &adam.m, &adam.v};
  for (int g = 0; g < 4; ++g) {
    for (const auto& [name, t] : *stores[g]) ckpt.tensors.emplace(std::string(kGroups[g]) + name, t);
  }
  return ckpt;
}

TrainState TrainState::from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& cfg) {
  ckpt.validate();
  TrainState state;
  ParamStore<float>* stores[] = {&state.theta, &state.xi, &state.adam.m, &state.adam.v};
  for (const auto& [name, t] : ckpt.tensors) {
    bool matched = false;
    for (int g = 0; g < 4; ++g) {
      const std::string prefix = kGroups[g];
      if (name.starts_with(prefix)) {
        stores[g]->emplace(name.substr(prefix.size()), t);
        matched = true;
      }
    }
    require(matched, "checkpoint tensor " + name + " has no known group prefix");
  }
  check_params(state.theta, cfg);
  check_params(state.xi, cfg);
  if (state.adam.m.empty() && state.adam.v.empty()) {
    state.adam = AdamWState<float>::zeros_like(state.theta);
  } else {
    check_params(state.adam.m, cfg);
    check_params(state.adam.v, cfg);
  }
  state.step = ckpt.step;
  state.adam.t = ckpt.step;
  return state;
}

std::string to_json_line(const TrainLogRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["L_A"] = r.loss_alignment;
  j["L_R"] = r.loss_reconstruction;
  j["L_total"] = r.loss_total;
  j["lr"] = r.lr;
  j["wd"] = r.wd;
  j["m"] = r.momentum;
  j["g_first_mean"] = r.g_first_mean;
  j["g_last_mean"] = r.g_last_mean;
  j["g_min"] = r.g_min;
  j["g_max"] = r.g_max;
  return j.dump();
}

TrainLogRecord parse_log_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Reason::kMalformed, std::string("log line: ") + e.what());
  }
  TrainLogRecord r;
  try {
    r.epoch = j.at("epoch").get<std::uint64_t>();
    r.step = j.at("step").get<std::uint64_t>();
    r.loss_alignment = j.at("L_A").get<double>();
    r.loss_reconstruction = j.at("L_R").get<double>();
    r.loss_total = j.at("L_total").get<double>();
    r.lr = j.at("lr").get<double>();
    r.wd = j.at("wd").get<double>();
    r.momentum = j.at("m").get<double>();
    r.g_first_mean = j.at("g_first_mean").get<double>();
    r.g_last_mean = j.at("g_last_mean").get<double>();
    r.g_min = j.at("g_min").get<double>();
    r.g_max = j.at("g_max").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Reason::kMalformed, std::string("log line: ") + e.what());
  }
  return r;
}

template <typename T>
GradStats grad_stats(const ParamStore<T>& grads, const TensorGroup& first, const TensorGroup& last) {
  require(!grads.empty(), "grad_stats: no gradient tensors");
  GradStats s;
  s.min = std::numeric_limits<double>::infinity();
  s.max = 0.0;
  std::size_t n_first = 0, n_last = 0;
  for (const auto& [name, g] : grads) {
    double ss = 0.0;
    for (T v : g.data) ss += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(ss);
    s.min = std::min(s.min, norm);
    s.max = std::max(s.max, norm);
    if (first(name)) {
      s.first_mean += norm;
      ++n_first;
    }
    if (last(name)) {
      s.last_mean += norm;
      ++n_last;
    }
  }
  if (n_first) s.first_mean /= static_cast<double>(n_first);
  if (n_last) s.last_mean /= static_cast<double>(n_last);
  return s;
}

template <typename T>
GradStats grad_stats(const ParamStore<T>& grads, const EncoderConfig& cfg) {
  return grad_stats<T>(grads, in_first_layer, [&cfg](const std::string& n) { return in_last_layer(n, cfg); });
}

template <typename T>
LossReport batch_objective(const EncoderConfig& cfg, const ParamStore<T>& theta, const ParamStore<T>& xi,
                           const std::vector<const Matrix<T>*>& segments, const std::vector<MaskPattern>& masks,
                           double lambda, ParamStore<T>* grads) {
  require(!segments.empty(), "objective: empty batch");
  require(segments.size() == masks.size(), "objective: one mask per segment required");
  require(lambda >= 0, "lambda must be >= 0");
  std::size_t masked = 0;
  for (const auto& m : masks) masked += m.count();
  if (masked == 0) throw ValidationError("reconstruction loss undefined for |M| = 0");

  const Encoder<T> online(cfg, theta);
  const Encoder<T> target(cfg, xi);
  const double w_align = 1.0 / static_cast<double>(segments.size() * cfg.tokens());
  const double w_recon = 1.0 / static_cast<double>(masked);
  double align = 0.0, recon = 0.0;
  ForwardCache<T> cache;
  for (std::size_t b = 0; b < segments.size(); ++b) {
    const Matrix<T> target_mapped = target.map_channels(*segments[b]);
    const Matrix<T> h = target.forward_mapped(target_mapped, nullptr);
    const Matrix<T> target_patches = patches_of(target_mapped, cfg);

    const Matrix<T> z = online.forward(*segments[b], &masks[b], grads ? &cache : nullptr);
    const Matrix<T> x_hat = online.reconstruct(z);
    Matrix<T> dz, d_hat;
    if (grads) {
      dz = Matrix<T>(z.rows(), z.cols());
      d_hat = Matrix<T>(x_hat.rows(), x_hat.cols());
    }
    align += alignment_sum(h, z, w_align, grads ? &dz : nullptr);
    recon += reconstruction_sum(x_hat, target_patches, masks[b], w_recon, grads ? &d_hat : nullptr);
    if (grads) {
      for (auto& v : d_hat.values()) v *= static_cast<T>(lambda);
      online.backward(cache, dz, d_hat, *grads);
    }
  }
  return make_report(align, recon, lambda);
}

MaskPattern mask_for(const TrainConfig& cfg, std::uint64_t step, std::size_t slot) {
  return sample_mask(cfg.encoder.mapped_channels, cfg.encoder.windows, cfg.p_mask,
                     derive_seed(cfg.seed, step, slot));
}

TrainLogRecord train_step(const std::vector<const Matrix<float>*>& batch, TrainState& state, std::uint64_t step,
                          const TrainConfig& cfg, const ScheduleConfig& schedule, const StepOverrides& overrides) {
  require(!batch.empty(), "train_step: empty batch");
  for (const auto* seg : batch) {
    require(seg->rows() == cfg.encoder.in_channels && seg->cols() == cfg.encoder.segment_length(),
            "train_step: segment shape does not match the encoder configuration");
  }
  std::vector<MaskPattern> masks;
  masks.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) masks.push_back(mask_for(cfg, step, b));

  ParamStore<float> grads = zeros_like(state.theta);
  const LossReport loss = batch_objective(cfg.encoder, state.theta, state.xi, batch, masks, cfg.lambda, &grads);
  if (!std::isfinite(loss.total)) throw NumericError("loss divergence at step " + std::to_string(step));

  const GradStats stats = grad_stats(grads, cfg.encoder);
  const double lr = overrides.lr.value_or(lr_at(step, schedule));
  const double wd = wd_at(step, schedule);
  const double m = overrides.momentum.value_or(momentum_at(step, schedule));

  adamw_step(state.theta, grads, state.adam, lr, wd);
  ema_update(state.theta, state.xi, m);
  state.step = step + 1;

  TrainLogRecord rec;
  rec.epoch = step / schedule.steps_per_epoch;
  rec.step = step;
  rec.loss_alignment = loss.alignment;
  rec.loss_reconstruction = loss.reconstruction;
  rec.loss_total = loss.total;
  rec.lr = lr;
  rec.wd = wd;
  rec.momentum = m;
  rec.g_first_mean = stats.first_mean;
  rec.g_last_mean = stats.last_mean;
  rec.g_min = stats.min;
  rec.g_max = stats.max;
  return rec;
}

ScheduleConfig resolved_schedule(const TrainConfig& cfg, std::size_t segments) {
  ScheduleConfig s = cfg.schedule;
  s.total_epochs = cfg.epochs;
  s.steps_per_epoch = (segments + cfg.batch_size - 1) / cfg.batch_size;
  s.validate();
  return s;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t count) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(derive_seed(seed, rng_domain::kShuffle, epoch));
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[uniform_below(rng, i)]);
  return order;
}

Checkpoint run_pretraining(const TrainConfig& cfg, const SegmentBatch& data, const PretrainHooks& hooks,
                           const std::optional<Checkpoint>& resume) {
  cfg.validate();
  data.validate();
  require(data.size() >= 1, "pretraining data is empty");
  require(data.channels() == cfg.encoder.in_channels && data.length() == cfg.encoder.segment_length(),
          "pretraining segments are " + std::to_string(data.channels()) + " x " + std::to_string(data.length()) +
              ", encoder expects " + std::to_string(cfg.encoder.in_channels) + " x " +
              std::to_string(cfg.encoder.segment_length()));
  const ScheduleConfig schedule = resolved_schedule(cfg, data.size());
  const std::uint64_t total = schedule.total_steps();
  const std::uint64_t spe = schedule.steps_per_epoch;

  TrainState state = resume ? TrainState::from_checkpoint(*resume, cfg.encoder) : TrainState::initial(cfg.encoder, cfg.seed);
  require(state.step <= total, "checkpoint step lies beyond the configured schedule");

  std::uint64_t current_epoch = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::size_t> order;
  while (state.step < total) {
    const std::uint64_t step = state.step;
    const std::uint64_t epoch = step / spe;
    if (epoch != current_epoch) {
      order = epoch_order(cfg.seed, epoch, data.size());
      current_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(step % spe) * cfg.batch_size;
    const std::size_t end = std::min(begin + cfg.batch_size, data.size());
    std::vector<const Matrix<float>*> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&data.segments[order[i]]);
    const TrainLogRecord rec = train_step(batch, state, step, cfg, schedule);
    if (hooks.on_log) hooks.on_log(rec);
    const bool epoch_done = state.step % spe == 0;
    if (epoch_done && hooks.on_checkpoint && cfg.checkpoint_every_epochs > 0 && state.step < total &&
        (state.step / spe) % cfg.checkpoint_every_epochs == 0) {
      hooks.on_checkpoint(state.to_checkpoint());
    }
  }
  Checkpoint final_ckpt = state.to_checkpoint();
  if (hooks.on_checkpoint) hooks.on_checkpoint(final_ckpt);
  return final_ckpt;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

EncoderConfig gradcheck_config() {
  EncoderConfig cfg;
  cfg.in_channels = 3;
  cfg.mapped_channels = 4;
  cfg.patch_len = 8;
  cfg.windows = 4;
  cfg.d = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.kernel = 3;
  return cfg;
}

GradCheckReport grad_check(const EncoderConfig& cfg, std::uint64_t seed, const GradCheckOptions& options) {
  cfg.validate();
  require(options.batch >= 1 && options.coords_per_tensor >= 1 && options.step > 0, "gradcheck: bad options");
  Rng rng(derive_seed(seed, rng_domain::kGradCheck, 0));

  ParamStore<double> theta = init_params<double>(cfg, seed);
  // Generic point: lift every tensor off its structured init so no gradient is identically zero.
  for (auto& [name, t] : theta) {
    for (auto& v : t.data) v += 0.1 * standard_normal(rng);
  }
  ParamStore<double> xi = theta;
  for (auto& [name, t] : xi) {
    for (auto& v : t.data) v += 0.05 * standard_normal(rng);
  }

  std::vector<Matrix<double>> data;
  for (std::size_t b = 0; b < options.batch; ++b) {
    Matrix<double> seg(cfg.in_channels, cfg.segment_length());
    for (auto& v : seg.values()) v = standard_normal(rng);
    data.push_back(std::move(seg));
  }
  std::vector<const Matrix<double>*> segments;
  for (const auto& s : data) segments.push_back(&s);
  std::vector<MaskPattern> masks;
  std::size_t masked = 0;
  for (std::size_t b = 0; b < options.batch; ++b) {
    masks.push_back(sample_mask(cfg.mapped_channels, cfg.windows, options.p_mask, derive_seed(seed, 7, b)));
    masked += masks.back().count();
  }
  if (masked == 0) masks.front().masked.front() = 1;

  ParamStore<double> analytic = zeros_like(theta);
  batch_objective(cfg, theta, xi, segments, masks, options.lambda, &analytic);

  auto loss_at = [&](const ParamStore<double>& params) {
    return batch_objective<double>(cfg, params, xi, segments, masks, options.lambda, nullptr).total;
  };

  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (auto& [name, tensor] : theta) {
    if (!options.only_prefixes.empty() &&
        std::none_of(options.only_prefixes.begin(), options.only_prefixes.end(),
                     [&](const std::string& p) { return name.starts_with(p); })) {
      continue;
    }
    std::vector<std::size_t> coords(tensor.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > options.coords_per_tensor) {
      for (std::size_t i = 0; i < options.coords_per_tensor; ++i) {
        std::swap(coords[i], coords[i + uniform_below(rng, coords.size() - i)]);
      }
      coords.resize(options.coords_per_tensor);
    }
    TensorCheck check{name, coords.size(), 0.0};
    const bool corrupt = options.corrupt_tensor && *options.corrupt_tensor == name;
    for (std::size_t idx : coords) {
      const double saved = tensor.data[idx];
      tensor.data[idx] = saved + options.step;
      const double plus = loss_at(theta);
      tensor.data[idx] = saved - options.step;
      const double minus = loss_at(theta);
      tensor.data[idx] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      double a = analytic.at(name).data[idx];
      if (corrupt) a *= 1.0 + options.corrupt_factor;
      check.max_rel_error = std::max(check.max_rel_error, relative_error(a, numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.tensors.push_back(std::move(check));
  }
  require(!report.tensors.empty(), "gradcheck: no tensors matched the requested prefixes");
  return report;
}

template GradStats grad_stats<float>(const ParamStore<float>&, const TensorGroup&, const TensorGroup&);
template GradStats grad_stats<double>(const ParamStore<double>&, const TensorGroup&, const TensorGroup&);
template GradStats grad_stats<float>(const ParamStore<float>&, const EncoderConfig&);
template GradStats grad_stats<double>(const ParamStore<double>&, const EncoderConfig&);
template LossReport batch_objective<float>(const EncoderConfig&, const ParamStore<float>&, const ParamStore<float>&,
                                           const std::vector<const Matrix<float>*>&, const std::vector<MaskPattern>&,
                                           double, ParamStore<float>*);
template LossReport batch_objective<double>(const EncoderConfig&, const ParamStore<double>&,
                                            const ParamStore<double>&, const std::vector<const Matrix<double>*>&,
                                            const std::vector<MaskPattern>&, double, ParamStore<double>*);

}  // namespace lcm
