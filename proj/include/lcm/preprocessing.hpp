#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "lcm/data_model.hpp"

namespace lcm {

struct PreprocConfig {
  double target_rate_hz = 256.0;
  double segment_s = 4.0;
  double lowpass_hz = 38.0;
  bool apply_bandpass = true;
  std::optional<std::vector<std::string>> channel_selection;

  void validate() const;
};

/// Second-order section, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

inline constexpr int kLowpassOrder = 8;

/// Subtracts the cross-channel mean at every time step. Requires >= 2 channels.
Matrix<double> average_reference(const Matrix<double>& x);

/// Butterworth low-pass of even `order` via the bilinear transform with
/// prewarping; unity gain at DC.
std::vector<Biquad> design_butterworth_lowpass(int order, double cutoff_hz, double rate_hz);

/// |H(e^{j 2 pi f / rate})| of a single forward pass through `sections`.
double magnitude_response(const std::vector<Biquad>& sections, double f_hz, double rate_hz);

/// Samples of odd reflection on each side before the forward-backward pass.
std::size_t filtfilt_padding(int order);

/// Zero-phase forward-backward filtering of every row.
Matrix<double> filtfilt(const std::vector<Biquad>& sections, int order, const Matrix<double>& x);

/// Zero-phase Butterworth low-pass at `cutoff_hz`.
Matrix<double> lowpass(const Matrix<double>& x, double rate_hz, double cutoff_hz);
Matrix<double> lowpass_38(const Matrix<double>& x, double rate_hz);

/// Smallest L/M with L/M == to/from (to 1e-9 relative), M <= 100000.
std::pair<std::size_t, std::size_t> rational_ratio(double from_hz, double to_hz);

/// Rational polyphase resampler with a Kaiser-windowed sinc (beta 8.6,
/// 64 taps per phase). Output length is floor(T * to / from).
Matrix<double> resample(const Matrix<double>& x, double from_hz, double to_hz);

/// Non-overlapping windows of segment_s * rate samples; the remainder is dropped.
SegmentBatch segment(const Matrix<double>& x, double rate_hz, double segment_s);

/// Selection -> mV scaling -> average reference -> low-pass -> resample -> segment.
SegmentBatch preprocess(const Recording& rec, const PreprocConfig& cfg);

}  // namespace lcm
