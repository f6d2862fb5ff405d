#include "lcm/preprocessing.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "lcm/error.hpp"

namespace lcm {
namespace {

using cd = std::complex<double>;

/// Zeroth-order modified Bessel function of the first kind (power series).
double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

/// Steady-state transposed direct-form II state for a constant input of 1.
std::pair<double, double> step_state(const Biquad& s) {
  const double gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  const double z2 = s.b2 - s.a2 * gain;
  const double z1 = s.b1 - s.a1 * gain + z2;
  return {z1, z2};
}

void run_sections(const std::vector<Biquad>& sections, std::vector<double>& x) {
  double level = x.front();
  for (const auto& s : sections) {
    auto [z1_unit, z2_unit] = step_state(s);
    double z1 = z1_unit * level;
    double z2 = z2_unit * level;
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
    level *= (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  }
}

}  // namespace

void PreprocConfig::validate() const {
  require(std::isfinite(target_rate_hz) && target_rate_hz > 0, "preprocess: target_rate_hz must be positive");
  require(std::isfinite(segment_s) && segment_s > 0, "preprocess: segment_s must be positive");
  require(std::isfinite(lowpass_hz) && lowpass_hz > 0, "preprocess: lowpass_hz must be positive");
  require(lowpass_hz < target_rate_hz / 2, "preprocess: lowpass_hz must be below target Nyquist");
  if (channel_selection) require(!channel_selection->empty(), "preprocess: empty channel selection");
}

Matrix<double> average_reference(const Matrix<double>& x) {
  require(x.rows() >= 2, "average reference needs at least 2 channels");
  Matrix<double> out = x;
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (std::size_t t = 0; t < x.cols(); ++t) {
    double mean = 0.0;
    for (std::size_t c = 0; c < x.rows(); ++c) mean += x(c, t);
    mean *= inv;
    for (std::size_t c = 0; c < x.rows(); ++c) out(c, t) -= mean;
  }
  return out;
}

std::vector<Biquad> design_butterworth_lowpass(int order, double cutoff_hz, double rate_hz) {
  require(order >= 2 && order % 2 == 0, "butterworth order must be even and >= 2");
  require(cutoff_hz > 0 && cutoff_hz < rate_hz / 2, "butterworth cutoff must lie in (0, Nyquist)");
  const double fs2 = 2.0 * rate_hz;
  const double warped = fs2 * std::tan(std::numbers::pi * cutoff_hz / rate_hz);
  std::vector<Biquad> sections;
  for (int k = 0; k < order / 2; ++k) {
    const double angle = std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order);
    const cd analog = warped * std::polar(1.0, angle);
    const cd digital = (fs2 + analog) / (fs2 - analog);
    const double a1 = -2.0 * digital.real();
    const double a2 = std::norm(digital);
    const double g = (1.0 + a1 + a2) / 4.0;
    sections.push_back({g, 2.0 * g, g, a1, a2});
  }
  return sections;
}

double magnitude_response(const std::vector<Biquad>& sections, double f_hz, double rate_hz) {
  const cd z1 = std::polar(1.0, -2.0 * std::numbers::pi * f_hz / rate_hz);
  const cd z2 = z1 * z1;
  cd h = 1.0;
  for (const auto& s : sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return std::abs(h);
}

std::size_t filtfilt_padding(int order) { return static_cast<std::size_t>(3 * order); }

Matrix<double> filtfilt(const std::vector<Biquad>& sections, int order, const Matrix<double>& x) {
  const std::size_t pad = filtfilt_padding(order);
  const std::size_t n = x.cols();
  require(n > pad, "signal of " + std::to_string(n) + " samples is shorter than the filter warm-up (" +
                       std::to_string(pad + 1) + ")");
  Matrix<double> out(x.rows(), n);
  std::vector<double> buf(n + 2 * pad);
  for (std::size_t c = 0; c < x.rows(); ++c) {
    const auto row = x.row(c);
    for (std::size_t i = 0; i < pad; ++i) {
      buf[i] = 2.0 * row[0] - row[pad - i];
      buf[pad + n + i] = 2.0 * row[n - 1] - row[n - 2 - i];
    }
    std::copy(row.begin(), row.end(), buf.begin() + static_cast<std::ptrdiff_t>(pad));
    run_sections(sections, buf);
    std::reverse(buf.begin(), buf.end());
    run_sections(sections, buf);
    std::reverse(buf.begin(), buf.end());
    std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(pad), n, out.row(c).begin());
  }
  return out;
}

Matrix<double> lowpass(const Matrix<double>& x, double rate_hz, double cutoff_hz) {
  require(rate_hz > 2 * cutoff_hz, "low-pass needs a sample rate above twice the cutoff");
  return filtfilt(design_butterworth_lowpass(kLowpassOrder, cutoff_hz, rate_hz), kLowpassOrder, x);
}

Matrix<double> lowpass_38(const Matrix<double>& x, double rate_hz) { return lowpass(x, rate_hz, 38.0); }

std::pair<std::size_t, std::size_t> rational_ratio(double from_hz, double to_hz) {
  require(std::isfinite(from_hz) && from_hz > 0 && std::isfinite(to_hz) && to_hz > 0,
          "resample rates must be positive");
  const double ratio = to_hz / from_hz;
  for (std::size_t m = 1; m <= 100000; ++m) {
    const double l = std::round(ratio * static_cast<double>(m));
    if (l >= 1 && std::abs(l / static_cast<double>(m) - ratio) <= 1e-9 * ratio) {
      return {static_cast<std::size_t>(l), m};
    }
  }
  throw ValidationError("resample ratio " + std::to_string(ratio) + " has no small rational form");
}

Matrix<double> resample(const Matrix<double>& x, double from_hz, double to_hz) {
  const auto [up, down] = rational_ratio(from_hz, to_hz);
  constexpr std::size_t kTapsPerPhase = 64;
  constexpr double kBeta = 8.6;
  const std::size_t taps = kTapsPerPhase * up + 1;
  const std::size_t center = taps / 2;
  const double cutoff = 0.5 / static_cast<double>(std::max(up, down));  // cycles per upsampled sample
  std::vector<double> h(taps);
  const double i0_beta = bessel_i0(kBeta);
  for (std::size_t i = 0; i < taps; ++i) {
    const double r = (2.0 * static_cast<double>(i) / static_cast<double>(taps - 1)) - 1.0;
    const double window = bessel_i0(kBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
    const double t = static_cast<double>(i) - static_cast<double>(center);
    h[i] = static_cast<double>(up) * 2.0 * cutoff * sinc(2.0 * cutoff * t) * window;
  }
  const std::size_t n = x.cols();
  const std::size_t out_len = n * up / down;
  Matrix<double> out(x.rows(), out_len);
  for (std::size_t m = 0; m < out_len; ++m) {
    // Upsampled-domain position of output sample m is m*down; input k sits at k*up.
    const std::size_t pos = m * down + center;
    const std::size_t k_hi = std::min(pos / up, n - 1);
    const std::size_t k_lo = pos >= taps - 1 ? (pos - (taps - 1) + up - 1) / up : 0;
    for (std::size_t c = 0; c < x.rows(); ++c) {
      const auto row = x.row(c);
      double acc = 0.0;
      for (std::size_t k = k_lo; k <= k_hi; ++k) acc += row[k] * h[pos - k * up];
      out(c, m) = acc;
    }
  }
  return out;
}

SegmentBatch segment(const Matrix<double>& x, double rate_hz, double segment_s) {
  require(rate_hz > 0 && segment_s > 0, "segment: rate and duration must be positive");
  const double exact = rate_hz * segment_s;
  const double rounded = std::round(exact);
  require(rounded >= 1 && std::abs(exact - rounded) <= 1e-9 * exact,
          "segment: segment_s * rate_hz must be a positive integer");
  const auto len = static_cast<std::size_t>(rounded);
  require(x.cols() >= len, "recording shorter than one segment");
  SegmentBatch batch;
  batch.sample_rate_hz = rate_hz;
  const std::size_t count = x.cols() / len;
  for (std::size_t s = 0; s < count; ++s) {
    Matrix<float> seg(x.rows(), len);
    for (std::size_t c = 0; c < x.rows(); ++c) {
      for (std::size_t t = 0; t < len; ++t) seg(c, t) = static_cast<float>(x(c, s * len + t));
    }
    batch.segments.push_back(std::move(seg));
  }
  return batch;
}

SegmentBatch preprocess(const Recording& rec, const PreprocConfig& cfg) {
  rec.validate();
  cfg.validate();
  std::vector<std::size_t> rows;
  if (cfg.channel_selection) {
    for (const auto& name : *cfg.channel_selection) {
      const auto idx = rec.montage.index_of(name);
      require(idx.has_value(), "channel " + name + " not in montage " + rec.montage.montage_id);
      rows.push_back(*idx);
    }
  } else {
    rows.resize(rec.channels());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  Matrix<double> x(rows.size(), rec.length());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = rec.samples.row(rows[r]);
    for (std::size_t t = 0; t < rec.length(); ++t) x(r, t) = static_cast<double>(src[t]) * rec.scale_to_mV;
  }
  x = average_reference(x);
  if (cfg.apply_bandpass) x = lowpass(x, rec.sample_rate_hz, cfg.lowpass_hz);
  x = resample(x, rec.sample_rate_hz, cfg.target_rate_hz);
  return segment(x, cfg.target_rate_hz, cfg.segment_s);
}

}  // namespace lcm
