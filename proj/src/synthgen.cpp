#include "lcm/synthgen.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

#include "lcm/error.hpp"
#include "lcm/rng.hpp"

namespace lcm {
namespace {

// FFTW planning is not thread-safe.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Real inverse DFT of a half spectrum (n/2 + 1 bins) into n samples.
std::vector<double> inverse_real_fft(std::vector<std::complex<double>> spectrum, std::size_t n) {
  std::vector<double> out(n);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(spectrum.data()),
                                out.data(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

/// Random-phase noise with magnitude `shape(f)` per bin, scaled to `rms`.
template <typename Shape>
std::vector<double> spectral_noise(Rng& rng, std::size_t n, double rate, double rms, Shape shape) {
  std::vector<std::complex<double>> spec(n / 2 + 1);
  for (std::size_t k = 1; k < spec.size(); ++k) {
    const double f = static_cast<double>(k) * rate / static_cast<double>(n);
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);
    const double mag = shape(f);
    // The Nyquist bin of an even-length transform must be real.
    spec[k] = (n % 2 == 0 && k == n / 2) ? std::complex<double>(mag * std::cos(phase), 0.0)
                                          : std::polar(mag, phase);
  }
  auto x = inverse_real_fft(std::move(spec), n);
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double current = std::sqrt(ss / static_cast<double>(n));
  const double gain = current > 0.0 ? rms / current : 0.0;
  for (double& v : x) v *= gain;
  return x;
}

Matrix<double> synth_signal(const SynthSpec& spec, Rng& rng) {
  const std::size_t n = spec.sample_count();
  Matrix<double> x(spec.channel_count, n);
  if (spec.background_rms > 0.0) {
    const double alpha = spec.background_exponent;
    for (std::size_t c = 0; c < spec.channel_count; ++c) {
      const auto noise = spectral_noise(rng, n, spec.sample_rate_hz, spec.background_rms,
                                        [alpha](double f) { return std::pow(f, -alpha / 2.0); });
      std::copy(noise.begin(), noise.end(), x.row(c).begin());
    }
  }
  for (const auto& osc : spec.oscillations) {
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);
    const double w = 2.0 * std::numbers::pi * osc.frequency_hz / spec.sample_rate_hz;
    std::vector<double> wave(n);
    for (std::size_t t = 0; t < n; ++t) wave[t] = osc.amplitude * std::sin(w * static_cast<double>(t) + phase);
    auto add = [&](std::size_t c) {
      for (std::size_t t = 0; t < n; ++t) x(c, t) += wave[t];
    };
    if (osc.channels.empty()) {
      for (std::size_t c = 0; c < spec.channel_count; ++c) add(c);
    } else {
      for (auto c : osc.channels) add(c);
    }
  }
  return x;
}

}  // namespace

std::size_t SynthSpec::sample_count() const {
  return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
}

void SynthSpec::validate() const {
  require(channel_count >= 1, "synth: channel_count must be positive");
  require(std::isfinite(sample_rate_hz) && sample_rate_hz > 0, "synth: sample_rate_hz must be positive");
  require(std::isfinite(duration_s) && duration_s > 0, "synth: duration_s must be positive");
  require(sample_count() >= 2, "synth: duration too short for the sample rate");
  require(std::isfinite(background_exponent), "synth: background_exponent must be finite");
  require(std::isfinite(background_rms) && background_rms >= 0, "synth: background_rms must be >= 0");
  require(std::isfinite(scale_to_mV) && scale_to_mV > 0, "synth: scale_to_mV must be positive");
  for (const auto& osc : oscillations) {
    require(std::isfinite(osc.frequency_hz) && osc.frequency_hz > 0,
            "synth: oscillation frequency must be positive");
    require(osc.frequency_hz < sample_rate_hz / 2,
            "synth: oscillation frequency " + std::to_string(osc.frequency_hz) +
                " Hz is at or above Nyquist");
    require(std::isfinite(osc.amplitude) && osc.amplitude >= 0, "synth: oscillation amplitude must be >= 0");
    for (auto c : osc.channels) require(c < channel_count, "synth: oscillation channel out of range");
  }
}

Recording synth_recording(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, rng_domain::kSynth, 0));
  Recording rec;
  rec.montage = Montage::numbered(spec.channel_count, "synthetic");
  rec.sample_rate_hz = spec.sample_rate_hz;
  rec.scale_to_mV = spec.scale_to_mV;
  rec.samples = synth_signal(spec, rng).cast<float>();
  return rec;
}

void LabeledSpec::validate(const SynthSpec& base) const {
  base.validate();
  require(classes == 2, "synth: labeled datasets have exactly 2 classes");
  require(per_class >= 1, "synth: per_class must be >= 1");
  require(std::isfinite(power_ratio) && power_ratio > 1.0, "synth: power_ratio must be > 1");
  require(band_low_hz > 0 && band_low_hz < band_high_hz && band_high_hz < base.sample_rate_hz / 2,
          "synth: band must satisfy 0 < low < high < Nyquist");
  require(std::isfinite(band_rms) && band_rms > 0, "synth: band_rms must be positive");
}

SegmentBatch synth_labeled_dataset(const SynthSpec& base, const LabeledSpec& labeled) {
  labeled.validate(base);
  const std::size_t n = base.sample_count();
  const std::size_t total = labeled.per_class * 2;
  SegmentBatch batch;
  batch.sample_rate_hz = base.sample_rate_hz;
  std::vector<int> labels(total);
  for (std::size_t i = 0; i < total; ++i) {
    const int label = static_cast<int>(i % 2);
    labels[i] = label;
    Rng rng(derive_seed(base.seed, rng_domain::kSynth, i));
    Matrix<double> x = synth_signal(base, rng);
    const double rms = labeled.band_rms * (label == 1 ? std::sqrt(labeled.power_ratio) : 1.0);
    const double lo = labeled.band_low_hz, hi = labeled.band_high_hz;
    for (std::size_t c = 0; c < base.channel_count; ++c) {
      const auto band = spectral_noise(rng, n, base.sample_rate_hz, rms,
                                       [lo, hi](double f) { return (f >= lo && f <= hi) ? 1.0 : 0.0; });
      for (std::size_t t = 0; t < n; ++t) x(c, t) += band[t];
    }
    batch.segments.push_back(x.cast<float>());
  }
  batch.labels = std::move(labels);
  return batch;
}

SegmentBatch synth_corpus(const SynthSpec& base, std::size_t count) {
  base.validate();
  SegmentBatch batch;
  batch.sample_rate_hz = base.sample_rate_hz;
  batch.segments.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(base.seed, rng_domain::kSynth, i));
    batch.segments.push_back(synth_signal(base, rng).cast<float>());
  }
  return batch;
}

}  // namespace lcm
