#include <gtest/gtest.h>

#include <cmath>

#include "lcm/error.hpp"
#include "lcm/model.hpp"
#include "lcm/rng.hpp"
#include "lcm/trainer.hpp"
#include "oracles.hpp"

using namespace lcm;

namespace {

EncoderConfig tiny() {
  EncoderConfig c;
  c.in_channels = 3;
  c.mapped_channels = 4;
  c.patch_len = 8;
  c.windows = 4;
  c.d = 16;
  c.layers = 2;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  c.kernel = 3;
  return c;
}

Matrix<double> random_segment(const EncoderConfig& c, std::uint64_t seed, std::size_t rows = 0) {
  Rng rng(seed);
  Matrix<double> x(rows ? rows : c.in_channels, c.segment_length());
  for (auto& v : x.values()) v = standard_normal(rng);
  return x;
}

// Closed form written out independently of the library.
std::uint64_t formula(const EncoderConfig& c) {
  const std::uint64_t d = c.d, h = static_cast<std::uint64_t>(std::llround(c.mlp_ratio * double(c.d)));
  const std::uint64_t channel_map = c.mapped_channels * c.in_channels;
  const std::uint64_t embeddings = c.mapped_channels * d + d + c.windows * d;  // channel, mask, position
  const std::uint64_t stem = d * c.kernel + d + d * d + c.patch_len * d + d;  // conv, proj, linear patch path
  const std::uint64_t block = 2 * d + 4 * d * d + 4 * d + 2 * d + d * h + h + h * d + d;
  const std::uint64_t recon = 2 * d + c.patch_len * d + c.patch_len;  // final norm + head
  return channel_map + embeddings + stem + c.layers * block + recon;
}

}  // namespace

TEST(Params, CountMatchesClosedFormAndShapes) {
  for (EncoderConfig c : {tiny(), EncoderConfig{}}) {
    std::uint64_t summed = 0;
    for (const auto& [name, shape] : param_shapes(c)) summed += Tensor<float>::element_count(shape);
    EXPECT_EQ(param_count(c), formula(c));
    EXPECT_EQ(summed, formula(c));
  }
  EncoderConfig zero = tiny();
  zero.layers = 0;
  EXPECT_EQ(param_count(zero), formula(zero));
}

TEST(Params, BlockShareGrowsAboutFourfoldWithDoubledWidth) {
  EncoderConfig a = tiny(), b = tiny();
  b.d = 2 * a.d;
  auto share = [](EncoderConfig c) {
    EncoderConfig none = c;
    none.layers = 0;
    return double(param_count(c) - param_count(none));
  };
  const double ratio = share(b) / share(a);
  // Per block: (4 + 2r) d^2 + (r + 9) d with r the MLP ratio.
  const double r = a.mlp_ratio;
  auto block = [r](double d) { return (4 + 2 * r) * d * d + (r + 9) * d; };
  const double exact = block(2.0 * double(a.d)) / block(double(a.d));
  EXPECT_DOUBLE_EQ(ratio, exact);
  EXPECT_NEAR(ratio, 4.0, 0.2);
}

TEST(Params, DefaultDeskConfigTotal) {
  EXPECT_EQ(param_count(EncoderConfig{}), formula(EncoderConfig{}));
  // 256 + 3136 + 8768 + 4 * 49984 + 4288, counted by hand.
  EXPECT_EQ(param_count(EncoderConfig{}), 216384u);
}

TEST(Params, InitializationRules) {
  const EncoderConfig c = tiny();
  const auto p = init_params<double>(c, 1);
  check_params(p, c);
  EXPECT_EQ(p, init_params<double>(c, 1));
  for (const auto& [name, t] : p) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double v = t.data[i];
      if (name.ends_with(".gain")) {
        EXPECT_EQ(v, 1.0) << name;
      } else if (name.ends_with(".bias") || name.ends_with("_b") || name.ends_with(".b")) {
        EXPECT_EQ(v, 0.0) << name;
      } else if (name == "channel_map") {
        const std::size_t r = i / c.in_channels, col = i % c.in_channels;
        EXPECT_LE(std::abs(v - (col == r % c.in_channels ? 1.0 : 0.0)), 0.04) << name;
      } else {
        EXPECT_LE(std::abs(v), 0.04) << name;
      }
    }
  }
  auto broken = p;
  broken.erase("recon.w");
  EXPECT_THROW(check_params(broken, c), ValidationError);
}

TEST(Params, DecayAndLoggingGroups) {
  EXPECT_TRUE(is_decayed("blocks.0.attn.q_w"));
  EXPECT_TRUE(is_decayed("pos_embed"));
  EXPECT_TRUE(is_decayed("channel_map"));
  for (const char* n : {"channel_embed", "mask_token", "final_ln.gain", "blocks.1.ln2.bias", "recon.b",
                        "blocks.0.mlp.fc1_b", "stem.conv_b"}) {
    EXPECT_FALSE(is_decayed(n)) << n;
  }
  const EncoderConfig c = tiny();
  EXPECT_TRUE(in_first_layer("stem.conv_w"));
  EXPECT_TRUE(in_first_layer("patch_embed.b"));
  EXPECT_FALSE(in_first_layer("blocks.0.attn.q_w"));
  EXPECT_TRUE(in_last_layer("blocks.1.attn.q_w", c));
  EXPECT_TRUE(in_last_layer("recon.w", c));
  EXPECT_FALSE(in_last_layer("blocks.0.attn.q_w", c));
}

TEST(Encoder, MaskedContentDoesNotReachTokens) {
  const EncoderConfig c = tiny();
  const auto theta = init_params<double>(c, 2);
  const Encoder<double> enc(c, theta);
  const MaskPattern mask = sample_mask(c.mapped_channels, c.windows, 0.5, 3);
  Matrix<double> a = random_segment(c, 4, c.mapped_channels), b = a;
  Rng rng(5);
  for (std::size_t tok = 0; tok < mask.size(); ++tok) {
    if (!mask.token(tok)) continue;
    const std::size_t ch = tok / c.windows, w = tok % c.windows;
    for (std::size_t s = 0; s < c.patch_len; ++s) b(ch, w * c.patch_len + s) = 50 * standard_normal(rng);
  }
  EXPECT_EQ(enc.forward_mapped(a, &mask), enc.forward_mapped(b, &mask));
  EXPECT_NE(enc.forward_mapped(a, nullptr), enc.forward_mapped(b, nullptr));
}

TEST(Encoder, OnlineEqualsTargetWithoutMask) {
  const EncoderConfig c = tiny();
  const auto theta = init_params<double>(c, 6);
  const Matrix<double> x = random_segment(c, 7);
  const MaskPattern none = MaskPattern::none(c.mapped_channels, c.windows);
  EXPECT_EQ(encode_online(x, theta, c, none), encode_target(x, theta, c));
  EXPECT_EQ(encode_target(x, theta, c), encode_target(x, theta, c));
}

TEST(Encoder, ZeroSegmentOutputFollowsBiasesAndNorms) {
  EncoderConfig c = tiny();
  c.layers = 1;
  auto p = init_params<double>(c, 8);
  Rng rng(9);
  for (auto& [name, t] : p) {
    const bool keep = name.ends_with(".gain") || name.ends_with(".bias") || name.ends_with("_b") || name.ends_with(".b");
    for (auto& v : t.data) v = keep ? standard_normal(rng) : 0.0;
  }
  const Matrix<double> z = encode_target(Matrix<double>(c.in_channels, c.segment_length()), p, c);

  // Hand-rolled: content = patch bias; attention and MLP collapse to their output biases.
  const std::size_t d = c.d;
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) {
    x[i] = p["patch_embed.b"].data[i] + p["blocks.0.attn.out_b"].data[i] + p["blocks.0.mlp.fc2_b"].data[i];
  }
  const auto n = oracle::layer_norm(x);
  for (std::size_t tok = 0; tok < c.tokens(); ++tok) {
    for (std::size_t i = 0; i < d; ++i) {
      const double expected = n[i] * p["final_ln.gain"].data[i] + p["final_ln.bias"].data[i];
      EXPECT_NEAR(z(tok, i), expected, 1e-12);
    }
  }
}

TEST(Encoder, FloatTracksDouble) {
  const EncoderConfig c = tiny();
  const auto pd = init_params<double>(c, 10);
  ParamStore<float> pf;
  for (const auto& [n, t] : pd) pf.emplace(n, t.cast<float>());
  const Matrix<double> x = random_segment(c, 11);
  const Matrix<double> zd = encode_target(x, pd, c);
  const Matrix<float> zf = encode_target(x.cast<float>(), pf, c);
  for (std::size_t i = 0; i < zd.size(); ++i) EXPECT_NEAR(zf.values()[i], zd.values()[i], 1e-4);
}

TEST(Encoder, RejectsWrongInputShape) {
  const EncoderConfig c = tiny();
  const auto p = init_params<double>(c, 1);
  EXPECT_THROW((void)encode_target(Matrix<double>(c.in_channels + 1, c.segment_length()), p, c), ValidationError);
  EXPECT_THROW((void)encode_target(Matrix<double>(c.in_channels, c.segment_length() - 1), p, c), ValidationError);
}

TEST(Reconstructor, AffineDegenerateCaseAndShape) {
  const EncoderConfig c = tiny();
  auto p = init_params<double>(c, 12);
  std::fill(p["recon.w"].data.begin(), p["recon.w"].data.end(), 0.0);
  for (std::size_t s = 0; s < c.patch_len; ++s) p["recon.b"].data[s] = double(s) - 3.5;
  const PatchGrid<double> g = reconstruct(Matrix<double>(c.tokens(), c.d), p, c);
  EXPECT_EQ(g.channels, c.mapped_channels);
  EXPECT_EQ(g.windows, c.windows);
  EXPECT_EQ(g.patch_len, c.patch_len);
  const PatchGrid<double> shape = patchify(Matrix<double>(c.mapped_channels, c.segment_length()), c.patch_len);
  EXPECT_EQ(g.patches.rows(), shape.patches.rows());
  for (std::size_t tok = 0; tok < g.tokens(); ++tok) {
    for (std::size_t s = 0; s < c.patch_len; ++s) EXPECT_EQ(g.patches(tok, s), double(s) - 3.5);
  }
}

TEST(Reconstructor, HeadGradientMatchesFiniteDifferences) {
  GradCheckOptions opts;
  opts.only_prefixes = {"recon."};
  const GradCheckReport r = grad_check(tiny(), 13, opts);
  ASSERT_EQ(r.tensors.size(), 2u);
  EXPECT_LT(r.max_rel_error, 1e-6);
}
