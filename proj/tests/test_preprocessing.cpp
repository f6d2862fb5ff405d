#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "lcm/error.hpp"
#include "lcm/preprocessing.hpp"
#include "lcm/rng.hpp"
#include "oracles.hpp"

using namespace lcm;

namespace {

Matrix<double> sine(double f, double rate, std::size_t n, double amp = 1.0) {
  Matrix<double> x(1, n);
  for (std::size_t t = 0; t < n; ++t) x(0, t) = amp * std::sin(2 * std::numbers::pi * f * double(t) / rate);
  return x;
}

std::vector<double> row(const Matrix<double>& x, std::size_t r = 0) {
  return std::vector<double>(x.row(r).begin(), x.row(r).end());
}

// |H| from the biquad coefficients, evaluated independently of the library.
double biquad_gain(const std::vector<Biquad>& sections, double f, double rate) {
  const std::complex<double> z1 = std::polar(1.0, -2 * std::numbers::pi * f / rate);
  std::complex<double> h = 1.0;
  for (const auto& s : sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z1 * z1) / (1.0 + s.a1 * z1 + s.a2 * z1 * z1);
  return std::abs(h);
}

}  // namespace

TEST(AverageReference, CommonModeRemoved) {
  Matrix<double> x(4, 8);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t t = 0; t < 8; ++t) x(c, t) = std::sin(double(t));
  }
  const Matrix<double> y = average_reference(x);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(AverageReference, IdempotentOnReferencedData) {
  Rng rng(1);
  Matrix<double> x(4, 8);
  for (auto& v : x.values()) v = standard_normal(rng);
  const Matrix<double> once = average_reference(x), twice = average_reference(once);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice.values()[i], once.values()[i], 1e-6 * std::abs(once.values()[i]) + 1e-15);
}

TEST(AverageReference, ChannelMeanVanishes) {
  Rng rng(2);
  Matrix<double> x(4, 8);
  double scale = 0;
  for (auto& v : x.values()) {
    v = 10 * standard_normal(rng) + 3;
    scale = std::max(scale, std::abs(v));
  }
  const Matrix<double> y = average_reference(x);
  for (std::size_t t = 0; t < 8; ++t) {
    double mean = 0;
    for (std::size_t c = 0; c < 4; ++c) mean += y(c, t);
    EXPECT_LT(std::abs(mean / 4), 1e-6 * scale);
  }
  EXPECT_THROW((void)average_reference(Matrix<double>(1, 4)), ValidationError);
}

TEST(Butterworth, DesignMatchesAnalogPrototype) {
  const auto sections = design_butterworth_lowpass(kLowpassOrder, 38.0, 256.0);
  ASSERT_EQ(sections.size(), std::size_t(kLowpassOrder / 2));
  EXPECT_NEAR(biquad_gain(sections, 0.0, 256.0), 1.0, 1e-12);
  // Prewarped cutoff sits at -3 dB.
  EXPECT_NEAR(biquad_gain(sections, 38.0, 256.0), std::sqrt(0.5), 1e-9);
  for (double f : {1.0, 10.0, 30.0, 50.0, 100.0}) {
    EXPECT_NEAR(magnitude_response(sections, f, 256.0), biquad_gain(sections, f, 256.0), 1e-12);
    // Butterworth magnitude after bilinear prewarping.
    const double w = std::tan(std::numbers::pi * f / 256.0) / std::tan(std::numbers::pi * 38.0 / 256.0);
    EXPECT_NEAR(biquad_gain(sections, f, 256.0), 1.0 / std::sqrt(1.0 + std::pow(w, 2 * kLowpassOrder)), 1e-9);
  }
}

TEST(Lowpass, DcPassesUnchanged) {
  Matrix<double> x(2, 1024, 3.5);
  const Matrix<double> y = lowpass_38(x, 256.0);
  const double gain = biquad_gain(design_butterworth_lowpass(kLowpassOrder, 38.0, 256.0), 0.0, 256.0);
  for (double v : y.values()) EXPECT_NEAR(v, 3.5 * gain * gain, 3.5e-3);
}

TEST(Lowpass, SinesFollowSquaredFrequencyResponse) {
  const auto sections = design_butterworth_lowpass(kLowpassOrder, 38.0, 256.0);
  for (double f : {10.0, 30.0, 50.0}) {
    const Matrix<double> y = lowpass_38(sine(f, 256.0, 4096), 256.0);
    const double amp = oracle::sine_amplitude(row(y), f, 256.0, 512, 4096 - 512);
    const double expected = std::pow(biquad_gain(sections, f, 256.0), 2);  // forward-backward
    EXPECT_NEAR(amp, expected, 1e-3 + 0.01 * expected) << f;
  }
  const double a10 = oracle::sine_amplitude(row(lowpass_38(sine(10, 256, 4096), 256)), 10, 256, 512, 3584);
  const double a50 = oracle::sine_amplitude(row(lowpass_38(sine(50, 256, 4096), 256)), 50, 256, 512, 3584);
  EXPECT_NEAR(a10, 1.0, 0.1);
  EXPECT_LE(a50, 0.01);
}

TEST(Lowpass, ZeroPhase) {
  const Matrix<double> y = lowpass_38(sine(10, 256.0, 2048), 256.0);
  // Correlation with the cosine quadrature is ~0 when no phase shift is introduced.
  double sc = 0, ss = 0;
  for (std::size_t t = 256; t < 1792; ++t) {
    const double a = 2 * std::numbers::pi * 10 * double(t) / 256;
    sc += y(0, t) * std::cos(a);
    ss += y(0, t) * std::sin(a);
  }
  EXPECT_LT(std::abs(sc / ss), 1e-3);
}

TEST(Resample, LengthArithmetic) {
  EXPECT_EQ(resample(Matrix<double>(2, 1024), 512, 256).cols(), 512u);
  EXPECT_EQ(resample(Matrix<double>(1, 1000), 250, 256).cols(), 1024u);
  EXPECT_EQ(rational_ratio(512, 256), (std::pair<std::size_t, std::size_t>{1, 2}));
  EXPECT_EQ(rational_ratio(250, 256), (std::pair<std::size_t, std::size_t>{128, 125}));
}

TEST(Resample, IdentityRate) {
  Rng rng(4);
  Matrix<double> x(2, 300);
  for (auto& v : x.values()) v = standard_normal(rng);
  const Matrix<double> y = resample(x, 256, 256);
  ASSERT_EQ(y.cols(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.values()[i], x.values()[i], 1e-6);
}

TEST(Resample, PreservesTwentyHertzPeak) {
  const Matrix<double> y = resample(sine(20, 512, 2048), 512, 256);
  EXPECT_DOUBLE_EQ(oracle::peak_frequency(row(y), 256), 20.0);
  EXPECT_NEAR(oracle::sine_amplitude(row(y), 20, 256, 128, 896), 1.0, 0.01);
}

TEST(Resample, UpsamplingKeepsTone) {
  const Matrix<double> y = resample(sine(12, 200, 2000), 200, 256);
  EXPECT_EQ(y.cols(), 2560u);
  EXPECT_NEAR(oracle::sine_amplitude(row(y), 12, 256, 256, 2304), 1.0, 0.01);
}

TEST(Segment, FloorRule) {
  EXPECT_EQ(segment(Matrix<double>(2, 1024), 256, 4).size(), 1u);
  const SegmentBatch b = segment(Matrix<double>(2, 2560), 256, 4);
  EXPECT_EQ(b.size(), 2u);
  EXPECT_EQ(b.length(), 1024u);
  EXPECT_THROW((void)segment(Matrix<double>(2, 1000), 256, 4), ValidationError);
}

TEST(Segment, SegmentsAreConsecutiveWindows) {
  Matrix<double> x(1, 2048);
  for (std::size_t t = 0; t < 2048; ++t) x(0, t) = double(t);
  const SegmentBatch b = segment(x, 256, 4);
  EXPECT_EQ(b.segments[1](0, 0), 1024.0f);
  EXPECT_EQ(b.segments[1](0, 1023), 2047.0f);
}

TEST(Preprocess, ZeroRecordingGivesZeroSegments) {
  Recording r;
  r.montage = Montage::numbered(3);
  r.sample_rate_hz = 256;
  r.samples = Matrix<float>(3, 2048);
  const SegmentBatch b = preprocess(r, PreprocConfig{});
  ASSERT_EQ(b.size(), 2u);
  for (const auto& s : b.segments) {
    for (float v : s.values()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Preprocess, ScaleAppliedBeforeReference) {
  Recording r;
  r.montage = Montage::numbered(2);
  r.sample_rate_hz = 256;
  r.scale_to_mV = 1e-3;
  r.samples = Matrix<float>(2, 1024);
  for (std::size_t t = 0; t < 1024; ++t) r.samples(0, t) = 1.0f;  // channel 1 stays 0
  PreprocConfig cfg;
  cfg.apply_bandpass = false;
  const SegmentBatch b = preprocess(r, cfg);
  // Reference removes half of the 1e-3 offset on each channel.
  EXPECT_NEAR(b.segments[0](0, 10), 0.5e-3, 1e-9);
  EXPECT_NEAR(b.segments[0](1, 10), -0.5e-3, 1e-9);
}

TEST(Preprocess, TwentySecondsAt512HzGivesFiveSegments) {
  Recording r;
  r.montage = Montage::numbered(8);
  r.sample_rate_hz = 512;
  r.samples = Matrix<float>(8, 20 * 512);
  Rng rng(3);
  for (auto& v : r.samples.values()) v = float(standard_normal(rng));
  const SegmentBatch b = preprocess(r, PreprocConfig{});
  EXPECT_EQ(b.size(), 5u);
  EXPECT_EQ(b.channels(), 8u);
  EXPECT_EQ(b.length(), 1024u);
  EXPECT_EQ(b.sample_rate_hz, 256.0);
}

TEST(Preprocess, ChannelSelectionByName) {
  Recording r;
  r.montage = Montage{"m", {"Fz", "Cz", "Pz"}};
  r.sample_rate_hz = 256;
  r.samples = Matrix<float>(3, 1024);
  for (std::size_t t = 0; t < 1024; ++t) r.samples(2, t) = 1.0f;
  PreprocConfig cfg;
  cfg.apply_bandpass = false;
  cfg.channel_selection = std::vector<std::string>{"Pz", "Fz"};
  const SegmentBatch b = preprocess(r, cfg);
  EXPECT_EQ(b.channels(), 2u);
  EXPECT_NEAR(b.segments[0](0, 0), 0.5f, 1e-6);
  cfg.channel_selection = std::vector<std::string>{"O1", "Fz"};
  EXPECT_THROW((void)preprocess(r, cfg), ValidationError);
}
