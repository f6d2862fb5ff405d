#include "lcm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lcm/error.hpp"
#include "lcm/rng.hpp"
#include "lcm/simd.hpp"

namespace lcm {
namespace {

constexpr double kModelLnEps = 1e-5;

std::string block_name(std::size_t layer, const char* leaf) {
  return "blocks." + std::to_string(layer) + "." + leaf;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

// y = x W^T + b, x: n x in, W: out x in.
template <typename T>
void linear(const Matrix<T>& x, const Tensor<T>& w, const Tensor<T>* b, Matrix<T>& y) {
  const std::size_t out = w.shape[0], in = w.shape[1];
  y = Matrix<T>(x.rows(), out);
  simd::gemm_nt(x.data(), w.data.data(), y.data(), x.rows(), out, in, false);
  if (b) {
    for (std::size_t r = 0; r < y.rows(); ++r) simd::axpy<T>(T(1), b->data, y.row(r));
  }
}

// Accumulates dW, db and (optionally) dx for y = x W^T + b.
template <typename T>
void linear_backward(const Matrix<T>& x, const Tensor<T>& w, const Matrix<T>& dy, Tensor<T>& dw, Tensor<T>* db,
                     Matrix<T>* dx) {
  const std::size_t out = w.shape[0], in = w.shape[1];
  simd::gemm_tn(dy.data(), x.data(), dw.data.data(), out, in, dy.rows(), true);
  if (db) {
    for (std::size_t r = 0; r < dy.rows(); ++r) simd::axpy<T>(T(1), dy.row(r), db->data);
  }
  if (dx) simd::gemm_nn(dy.data(), w.data.data(), dx->data(), dy.rows(), in, out, true);
}

template <typename T>
void layer_norm(const Matrix<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, Matrix<T>& hat,
                std::vector<T>& rstd, Matrix<T>& out) {
  const std::size_t n = x.rows(), d = x.cols();
  hat = Matrix<T>(n, d);
  out = Matrix<T>(n, d);
  rstd.assign(n, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = x.row(r);
    T mean = 0;
    for (T v : row) mean += v;
    mean /= T(d);
    T var = 0;
    for (T v : row) var += (v - mean) * (v - mean);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + T(kModelLnEps));
    rstd[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (row[c] - mean) * rs;
      hat(r, c) = h;
      out(r, c) = h * gain.data[c] + bias.data[c];
    }
  }
}

template <typename T>
void layer_norm_backward(const Matrix<T>& hat, const std::vector<T>& rstd, const Tensor<T>& gain,
                         const Matrix<T>& dy, Tensor<T>& dgain, Tensor<T>& dbias, Matrix<T>& dx) {
  const std::size_t n = hat.rows(), d = hat.cols();
  std::vector<T> dhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    T mean_dhat = 0, mean_dhat_hat = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const T g = dy(r, c);
      dgain.data[c] += g * hat(r, c);
      dbias.data[c] += g;
      dhat[c] = g * gain.data[c];
      mean_dhat += dhat[c];
      mean_dhat_hat += dhat[c] * hat(r, c);
    }
    mean_dhat /= T(d);
    mean_dhat_hat /= T(d);
    for (std::size_t c = 0; c < d; ++c) {
      dx(r, c) += rstd[r] * (dhat[c] - mean_dhat - hat(r, c) * mean_dhat_hat);
    }
  }
}

template <typename T>
Matrix<T> head_slice(const Matrix<T>& x, std::size_t head, std::size_t width) {
  Matrix<T> out(x.rows(), width);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy_n(x.row(r).begin() + static_cast<std::ptrdiff_t>(head * width), width, out.row(r).begin());
  }
  return out;
}

template <typename T>
void add_head_slice(const Matrix<T>& src, std::size_t head, std::size_t width, Matrix<T>& dst) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    auto d = dst.row(r).subspan(head * width, width);
    const auto s = src.row(r);
    for (std::size_t c = 0; c < width; ++c) d[c] += s[c];
  }
}

template <typename T>
void truncated_normal(Rng& rng, std::vector<T>& out, double stddev) {
  for (auto& v : out) {
    double z;
    do {
      z = standard_normal(rng);
    } while (std::abs(z) > 2.0);
    v = static_cast<T>(z * stddev);
  }
}

bool ends_with(const std::string& s, const std::string& suffix) { return s.ends_with(suffix); }

}  // namespace

std::size_t EncoderConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(d)));
}

void EncoderConfig::validate() const {
  require(in_channels >= 1, "encoder: in_channels must be positive");
  require(mapped_channels >= 1, "encoder: mapped_channels must be positive");
  require(patch_len >= 1, "encoder: patch_len must be positive");
  require(windows >= 1, "encoder: windows must be positive");
  require(d >= 2, "encoder: d must be >= 2");
  require(heads >= 1 && d % heads == 0, "encoder: d must be divisible by heads");
  require(std::isfinite(mlp_ratio) && mlp_ratio > 0 && mlp_hidden() >= 1, "encoder: mlp_ratio must be positive");
  require(kernel >= 1 && kernel <= patch_len, "encoder: kernel must lie in [1, patch_len]");
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> param_shapes(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d, hid = cfg.mlp_hidden();
  std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes = {
      {"channel_map", {cfg.mapped_channels, cfg.in_channels}},
      {"channel_embed", {cfg.mapped_channels, d}},
      {"mask_token", {d}},
      {"stem.conv_w", {d, cfg.kernel}},
      {"stem.conv_b", {d}},
      {"stem.proj_w", {d, d}},
      {"patch_embed.w", {d, cfg.patch_len}},
      {"patch_embed.b", {d}},
      {"pos_embed", {cfg.windows, d}},
      {"final_ln.gain", {d}},
      {"final_ln.bias", {d}},
      {"recon.w", {cfg.patch_len, d}},
      {"recon.b", {cfg.patch_len}},
  };
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (auto [leaf, shape] : std::vector<std::pair<const char*, std::vector<std::size_t>>>{
             {"ln1.gain", {d}},       {"ln1.bias", {d}},      {"attn.q_w", {d, d}},  {"attn.q_b", {d}},
             {"attn.k_w", {d, d}},    {"attn.k_b", {d}},      {"attn.v_w", {d, d}},  {"attn.v_b", {d}},
             {"attn.out_w", {d, d}},  {"attn.out_b", {d}},    {"ln2.gain", {d}},     {"ln2.bias", {d}},
             {"mlp.fc1_w", {hid, d}}, {"mlp.fc1_b", {hid}},   {"mlp.fc2_w", {d, hid}}, {"mlp.fc2_b", {d}},
         }) {
      shapes.emplace_back(block_name(l, leaf), shape);
    }
  }
  std::sort(shapes.begin(), shapes.end());
  return shapes;
}

std::uint64_t param_count(const EncoderConfig& cfg) {
  cfg.validate();
  const std::uint64_t m = cfg.in_channels, mp = cfg.mapped_channels, d = cfg.d, k = cfg.kernel;
  const std::uint64_t pt = cfg.patch_len, nt = cfg.windows, hid = cfg.mlp_hidden();
  const std::uint64_t embedding = mp * m + mp * d + d + nt * d;
  const std::uint64_t stem = d * k + d + d * d + d * pt + d;
  const std::uint64_t block = 4 * (d * d + d) + 4 * d + (hid * d + hid) + (d * hid + d);
  const std::uint64_t head = 2 * d + pt * d + pt;
  return embedding + stem + cfg.layers * block + head;
}

template <typename T>
ParamStore<T> init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, rng_domain::kInit, 0));
  ParamStore<T> store;
  for (const auto& [name, shape] : param_shapes(cfg)) {
    Tensor<T> t(shape);
    if (ends_with(name, ".gain")) {
      std::fill(t.data.begin(), t.data.end(), T(1));
    } else if (ends_with(name, "_b") || ends_with(name, ".b") || ends_with(name, ".bias")) {
      // zeros
    } else {
      truncated_normal(rng, t.data, 0.02);
      if (name == "channel_map") {
        for (std::size_t i = 0; i < cfg.mapped_channels; ++i) t.data[i * cfg.in_channels + i % cfg.in_channels] += T(1);
      }
    }
    store.emplace(name, std::move(t));
  }
  return store;
}

template <typename T>
ParamStore<T> zeros_like(const ParamStore<T>& params) {
  ParamStore<T> out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor<T>(t.shape));
  return out;
}

template <typename T>
void check_params(const ParamStore<T>& params, const EncoderConfig& cfg) {
  const auto shapes = param_shapes(cfg);
  require(params.size() == shapes.size(), "parameter set has " + std::to_string(params.size()) +
                                              " tensors, configuration expects " + std::to_string(shapes.size()));
  for (const auto& [name, shape] : shapes) {
    const auto it = params.find(name);
    require(it != params.end(), "missing parameter tensor " + name);
    require(it->second.shape == shape, "parameter tensor " + name + " has the wrong shape");
  }
}

bool is_decayed(const std::string& name) {
  if (name == "channel_embed" || name == "mask_token") return false;
  if (ends_with(name, ".gain") || ends_with(name, ".bias")) return false;
  if (ends_with(name, "_b") || ends_with(name, ".b")) return false;
  return true;
}

bool in_first_layer(const std::string& name) {
  return name.starts_with("stem.") || name.starts_with("patch_embed.");
}

bool in_last_layer(const std::string& name, const EncoderConfig& cfg) {
  if (name.starts_with("recon.")) return true;
  if (cfg.layers == 0) return false;
  return name.starts_with("blocks." + std::to_string(cfg.layers - 1) + ".");
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, const ParamStore<T>& params) : cfg_(cfg), params_(params) {
  check_params(params, cfg);
}

template <typename T>
const Tensor<T>& Encoder<T>::p(const std::string& name) const {
  return params_.at(name);
}

template <typename T>
Matrix<T> Encoder<T>::map_channels(const Matrix<T>& segment) const {
  require(segment.rows() == cfg_.in_channels, "segment has " + std::to_string(segment.rows()) +
                                                  " channels, encoder expects " + std::to_string(cfg_.in_channels));
  require(segment.cols() >= cfg_.segment_length(), "segment has " + std::to_string(segment.cols()) +
                                                       " samples, encoder needs " +
                                                       std::to_string(cfg_.segment_length()));
  const std::size_t used = cfg_.segment_length();
  Matrix<T> head(segment.rows(), used);
  for (std::size_t r = 0; r < segment.rows(); ++r) {
    std::copy_n(segment.row(r).begin(), used, head.row(r).begin());
  }
  const auto& w = p("channel_map");
  return apply_channel_map(head, ChannelMap<T>{Matrix<T>(w.shape[0], w.shape[1], w.data)});
}

template <typename T>
Matrix<T> Encoder<T>::forward(const Matrix<T>& segment, const MaskPattern* mask, ForwardCache<T>* cache) const {
  Matrix<T> mapped = map_channels(segment);
  if (cache) {
    cache->segment = Matrix<T>(segment.rows(), cfg_.segment_length());
    for (std::size_t r = 0; r < segment.rows(); ++r) {
      std::copy_n(segment.row(r).begin(), cfg_.segment_length(), cache->segment.row(r).begin());
    }
  }
  return forward_mapped(mapped, mask, cache);
}

template <typename T>
Matrix<T> Encoder<T>::forward_mapped(const Matrix<T>& mapped, const MaskPattern* mask, ForwardCache<T>* cache) const {
  const auto& cfg = cfg_;
  require(mapped.rows() == cfg.mapped_channels && mapped.cols() >= cfg.segment_length(),
          "mapped signal has the wrong shape");
  const std::size_t n = cfg.tokens(), d = cfg.d, pt = cfg.patch_len, k = cfg.kernel;
  const std::size_t positions = cfg.conv_positions();
  if (mask) {
    require(mask->channels == cfg.mapped_channels && mask->windows == cfg.windows,
            "mask shape does not match the patch grid");
  }

  // Only the first n_t windows of each channel are used.
  Matrix<T> patches(n, pt);
  for (std::size_t i = 0; i < cfg.mapped_channels; ++i) {
    for (std::size_t j = 0; j < cfg.windows; ++j) {
      std::copy_n(mapped.row(i).begin() + static_cast<std::ptrdiff_t>(j * pt), pt,
                  patches.row(i * cfg.windows + j).begin());
    }
  }

  // Conv stem: per patch, valid 1-D convolution -> GELU -> mean over positions.
  const auto& conv_w = p("stem.conv_w");
  const auto& conv_b = p("stem.conv_b");
  Matrix<T> conv_pre(n * positions, d);
  Matrix<T> pooled(n, d);
  {
    Matrix<T> windows(positions, k);
    const T inv_positions = T(1) / T(positions);
    for (std::size_t tok = 0; tok < n; ++tok) {
      const auto patch = patches.row(tok);
      for (std::size_t u = 0; u < positions; ++u) std::copy_n(patch.begin() + static_cast<std::ptrdiff_t>(u), k, windows.row(u).begin());
      T* pre = conv_pre.data() + tok * positions * d;
      simd::gemm_nt(windows.data(), conv_w.data.data(), pre, positions, d, k, false);
      auto pool = pooled.row(tok);
      for (std::size_t u = 0; u < positions; ++u) {
        T* row = pre + u * d;
        for (std::size_t c = 0; c < d; ++c) {
          row[c] += conv_b.data[c];
          pool[c] += gelu(row[c]);
        }
      }
      for (auto& v : pool) v *= inv_positions;
    }
  }

  Matrix<T> x;
  linear(patches, p("patch_embed.w"), &p("patch_embed.b"), x);
  {
    Matrix<T> stem;
    linear(pooled, p("stem.proj_w"), static_cast<const Tensor<T>*>(nullptr), stem);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += stem.data()[i];
  }
  const auto& mask_token = p("mask_token");
  const auto& chan = p("channel_embed");
  const auto& pos = p("pos_embed");
  for (std::size_t i = 0; i < cfg.mapped_channels; ++i) {
    for (std::size_t j = 0; j < cfg.windows; ++j) {
      const std::size_t tok = i * cfg.windows + j;
      auto row = x.row(tok);
      if (mask && mask->token(tok)) std::copy(mask_token.data.begin(), mask_token.data.end(), row.begin());
      for (std::size_t c = 0; c < d; ++c) row[c] += chan.data[i * d + c] + pos.data[j * d + c];
    }
  }

  if (cache) {
    cache->mapped = mapped;
    cache->patches = patches;
    cache->conv_pre = std::move(conv_pre);
    cache->pooled = pooled;
    cache->mask = mask ? *mask : MaskPattern::none(cfg.mapped_channels, cfg.windows);
    cache->blocks.assign(cfg.layers, BlockCache<T>{});
  }

  const std::size_t heads = cfg.heads, hw = d / heads, hid = cfg.mlp_hidden();
  const T scale = T(1) / std::sqrt(T(hw));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    BlockCache<T> local;
    BlockCache<T>& bc = cache ? cache->blocks[l] : local;
    bc.input = x;
    layer_norm(x, p(block_name(l, "ln1.gain")), p(block_name(l, "ln1.bias")), bc.ln1_hat, bc.ln1_rstd, bc.ln1_out);
    linear(bc.ln1_out, p(block_name(l, "attn.q_w")), &p(block_name(l, "attn.q_b")), bc.q);
    linear(bc.ln1_out, p(block_name(l, "attn.k_w")), &p(block_name(l, "attn.k_b")), bc.k);
    linear(bc.ln1_out, p(block_name(l, "attn.v_w")), &p(block_name(l, "attn.v_b")), bc.v);
    bc.attn_concat = Matrix<T>(n, d);
    bc.probs.assign(heads, Matrix<T>());
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix<T> qh = head_slice(bc.q, h, hw), kh = head_slice(bc.k, h, hw), vh = head_slice(bc.v, h, hw);
      Matrix<T> s(n, n);
      simd::gemm_nt(qh.data(), kh.data(), s.data(), n, n, hw, false);
      for (std::size_t r = 0; r < n; ++r) {
        auto row = s.row(r);
        T mx = row[0] * scale;
        for (auto& v : row) {
          v *= scale;
          mx = std::max(mx, v);
        }
        T sum = 0;
        for (auto& v : row) {
          v = std::exp(v - mx);
          sum += v;
        }
        const T inv = T(1) / sum;
        for (auto& v : row) v *= inv;
      }
      Matrix<T> oh(n, hw);
      simd::gemm_nn(s.data(), vh.data(), oh.data(), n, hw, n, false);
      add_head_slice(oh, h, hw, bc.attn_concat);
      bc.probs[h] = std::move(s);
    }
    Matrix<T> attn_out;
    linear(bc.attn_concat, p(block_name(l, "attn.out_w")), &p(block_name(l, "attn.out_b")), attn_out);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += attn_out.data()[i];
    bc.mid = x;
    layer_norm(x, p(block_name(l, "ln2.gain")), p(block_name(l, "ln2.bias")), bc.ln2_hat, bc.ln2_rstd, bc.ln2_out);
    linear(bc.ln2_out, p(block_name(l, "mlp.fc1_w")), &p(block_name(l, "mlp.fc1_b")), bc.fc1_pre);
    bc.fc1_act = Matrix<T>(n, hid);
    for (std::size_t i = 0; i < bc.fc1_pre.size(); ++i) bc.fc1_act.data()[i] = gelu(bc.fc1_pre.data()[i]);
    Matrix<T> mlp_out;
    linear(bc.fc1_act, p(block_name(l, "mlp.fc2_w")), &p(block_name(l, "mlp.fc2_b")), mlp_out);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += mlp_out.data()[i];
  }

  Matrix<T> hat, z;
  std::vector<T> rstd;
  layer_norm(x, p("final_ln.gain"), p("final_ln.bias"), hat, rstd, z);
  if (cache) {
    cache->final_hat = std::move(hat);
    cache->final_rstd = std::move(rstd);
    cache->tokens = z;
  }
  return z;
}

template <typename T>
Matrix<T> Encoder<T>::reconstruct(const Matrix<T>& tokens) const {
  require(tokens.rows() == cfg_.tokens() && tokens.cols() == cfg_.d, "token sequence has the wrong shape");
  Matrix<T> out;
  linear(tokens, p("recon.w"), &p("recon.b"), out);
  return out;
}

template <typename T>
void Encoder<T>::backward(const ForwardCache<T>& cache, const Matrix<T>& d_tokens, const Matrix<T>& d_recon,
                          ParamStore<T>& grads) const {
  const auto& cfg = cfg_;
  const std::size_t n = cfg.tokens(), d = cfg.d, pt = cfg.patch_len, k = cfg.kernel;
  const std::size_t positions = cfg.conv_positions();
  const std::size_t heads = cfg.heads, hw = d / heads, hid = cfg.mlp_hidden();
  const T scale = T(1) / std::sqrt(T(hw));
  auto g = [&](const std::string& name) -> Tensor<T>& { return grads.at(name); };

  Matrix<T> dz = d_tokens.empty() ? Matrix<T>(n, d) : d_tokens;
  if (!d_recon.empty()) {
    linear_backward(cache.tokens, p("recon.w"), d_recon, g("recon.w"), &g("recon.b"), &dz);
  }

  Matrix<T> dx(n, d);
  layer_norm_backward(cache.final_hat, cache.final_rstd, p("final_ln.gain"), dz, g("final_ln.gain"),
                      g("final_ln.bias"), dx);

  for (std::size_t li = cfg.layers; li-- > 0;) {
    const BlockCache<T>& bc = cache.blocks[li];
    // MLP branch: x_out = mid + fc2(gelu(fc1(ln2(mid)))).
    Matrix<T> d_act(n, hid);
    linear_backward(bc.fc1_act, p(block_name(li, "mlp.fc2_w")), dx, g(block_name(li, "mlp.fc2_w")),
                    &g(block_name(li, "mlp.fc2_b")), &d_act);
    for (std::size_t i = 0; i < d_act.size(); ++i) d_act.data()[i] *= gelu_grad(bc.fc1_pre.data()[i]);
    Matrix<T> d_ln2(n, d);
    linear_backward(bc.ln2_out, p(block_name(li, "mlp.fc1_w")), d_act, g(block_name(li, "mlp.fc1_w")),
                    &g(block_name(li, "mlp.fc1_b")), &d_ln2);
    Matrix<T> d_mid = dx;
    layer_norm_backward(bc.ln2_hat, bc.ln2_rstd, p(block_name(li, "ln2.gain")), d_ln2, g(block_name(li, "ln2.gain")),
                        g(block_name(li, "ln2.bias")), d_mid);

    // Attention branch: mid = input + out(attn(ln1(input))).
    Matrix<T> d_concat(n, d);
    linear_backward(bc.attn_concat, p(block_name(li, "attn.out_w")), d_mid, g(block_name(li, "attn.out_w")),
                    &g(block_name(li, "attn.out_b")), &d_concat);
    Matrix<T> dq(n, d), dk(n, d), dv(n, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix<T>& probs = bc.probs[h];
      const Matrix<T> qh = head_slice(bc.q, h, hw), kh = head_slice(bc.k, h, hw), vh = head_slice(bc.v, h, hw);
      const Matrix<T> doh = head_slice(d_concat, h, hw);
      Matrix<T> dvh(n, hw), dp(n, n);
      simd::gemm_tn(probs.data(), doh.data(), dvh.data(), n, hw, n, false);
      simd::gemm_nt(doh.data(), vh.data(), dp.data(), n, n, hw, false);
      for (std::size_t r = 0; r < n; ++r) {
        const auto pr = probs.row(r);
        auto dr = dp.row(r);
        const T rowdot = simd::dot<T>(pr, std::span<const T>(dr.data(), dr.size()));
        for (std::size_t c = 0; c < n; ++c) dr[c] = pr[c] * (dr[c] - rowdot) * scale;
      }
      Matrix<T> dqh(n, hw), dkh(n, hw);
      simd::gemm_nn(dp.data(), kh.data(), dqh.data(), n, hw, n, false);
      simd::gemm_tn(dp.data(), qh.data(), dkh.data(), n, hw, n, false);
      add_head_slice(dqh, h, hw, dq);
      add_head_slice(dkh, h, hw, dk);
      add_head_slice(dvh, h, hw, dv);
    }
    Matrix<T> d_ln1(n, d);
    linear_backward(bc.ln1_out, p(block_name(li, "attn.q_w")), dq, g(block_name(li, "attn.q_w")),
                    &g(block_name(li, "attn.q_b")), &d_ln1);
    linear_backward(bc.ln1_out, p(block_name(li, "attn.k_w")), dk, g(block_name(li, "attn.k_w")),
                    &g(block_name(li, "attn.k_b")), &d_ln1);
    linear_backward(bc.ln1_out, p(block_name(li, "attn.v_w")), dv, g(block_name(li, "attn.v_w")),
                    &g(block_name(li, "attn.v_b")), &d_ln1);
    Matrix<T> d_in = d_mid;
    layer_norm_backward(bc.ln1_hat, bc.ln1_rstd, p(block_name(li, "ln1.gain")), d_ln1, g(block_name(li, "ln1.gain")),
                        g(block_name(li, "ln1.bias")), d_in);
    dx = std::move(d_in);
  }

  // Token assembly: x0 = content (or mask token) + C[i] + P[j].
  auto& d_chan = g("channel_embed");
  auto& d_pos = g("pos_embed");
  auto& d_mask = g("mask_token");
  Matrix<T> d_content(n, d);
  for (std::size_t i = 0; i < cfg.mapped_channels; ++i) {
    for (std::size_t j = 0; j < cfg.windows; ++j) {
      const std::size_t tok = i * cfg.windows + j;
      const auto row = dx.row(tok);
      for (std::size_t c = 0; c < d; ++c) {
        d_chan.data[i * d + c] += row[c];
        d_pos.data[j * d + c] += row[c];
      }
      if (cache.mask.token(tok)) {
        for (std::size_t c = 0; c < d; ++c) d_mask.data[c] += row[c];
      } else {
        std::copy(row.begin(), row.end(), d_content.row(tok).begin());
      }
    }
  }

  Matrix<T> d_patches(n, pt);
  linear_backward(cache.patches, p("patch_embed.w"), d_content, g("patch_embed.w"), &g("patch_embed.b"), &d_patches);
  Matrix<T> d_pooled(n, d);
  linear_backward(cache.pooled, p("stem.proj_w"), d_content, g("stem.proj_w"), static_cast<Tensor<T>*>(nullptr),
                  &d_pooled);

  const auto& conv_w = p("stem.conv_w");
  auto& d_conv_w = g("stem.conv_w");
  auto& d_conv_b = g("stem.conv_b");
  {
    const T inv_positions = T(1) / T(positions);
    Matrix<T> d_pre(positions, d);
    Matrix<T> windows(positions, k);
    Matrix<T> d_windows(positions, k);
    for (std::size_t tok = 0; tok < n; ++tok) {
      const auto dpool = d_pooled.row(tok);
      bool any = false;
      for (T v : dpool) any = any || v != T(0);
      if (!any) continue;
      const T* pre = cache.conv_pre.data() + tok * positions * d;
      for (std::size_t u = 0; u < positions; ++u) {
        for (std::size_t c = 0; c < d; ++c) {
          const T dv = dpool[c] * inv_positions * gelu_grad(pre[u * d + c]);
          d_pre(u, c) = dv;
          d_conv_b.data[c] += dv;
        }
      }
      const auto patch = cache.patches.row(tok);
      for (std::size_t u = 0; u < positions; ++u) std::copy_n(patch.begin() + static_cast<std::ptrdiff_t>(u), k, windows.row(u).begin());
      simd::gemm_tn(d_pre.data(), windows.data(), d_conv_w.data.data(), d, k, positions, true);
      simd::gemm_nn(d_pre.data(), conv_w.data.data(), d_windows.data(), positions, k, d, false);
      auto dpatch = d_patches.row(tok);
      for (std::size_t u = 0; u < positions; ++u) {
        for (std::size_t r = 0; r < k; ++r) dpatch[u + r] += d_windows(u, r);
      }
    }
  }

  // Channel map: mapped = W x; dW += d_mapped x^T.
  if (!cache.segment.empty()) {
    Matrix<T> d_mapped(cfg.mapped_channels, cfg.segment_length());
    for (std::size_t i = 0; i < cfg.mapped_channels; ++i) {
      for (std::size_t j = 0; j < cfg.windows; ++j) {
        std::copy_n(d_patches.row(i * cfg.windows + j).begin(), pt,
                    d_mapped.row(i).begin() + static_cast<std::ptrdiff_t>(j * pt));
      }
    }
    simd::gemm_nt(d_mapped.data(), cache.segment.data(), g("channel_map").data.data(), cfg.mapped_channels,
                  cfg.in_channels, cfg.segment_length(), true);
  }
}

template <typename T>
Matrix<T> encode_online(const Matrix<T>& segment, const ParamStore<T>& theta, const EncoderConfig& cfg,
                        const MaskPattern& mask) {
  return Encoder<T>(cfg, theta).forward(segment, &mask);
}

template <typename T>
Matrix<T> encode_target(const Matrix<T>& segment, const ParamStore<T>& xi, const EncoderConfig& cfg) {
  return Encoder<T>(cfg, xi).forward(segment, nullptr);
}

template <typename T>
PatchGrid<T> reconstruct(const Matrix<T>& tokens, const ParamStore<T>& params, const EncoderConfig& cfg) {
  PatchGrid<T> grid;
  grid.channels = cfg.mapped_channels;
  grid.windows = cfg.windows;
  grid.patch_len = cfg.patch_len;
  grid.patches = Encoder<T>(cfg, params).reconstruct(tokens);
  return grid;
}

#define LCM_INSTANTIATE_MODEL(T)                                                                        \
  template ParamStore<T> init_params<T>(const EncoderConfig&, std::uint64_t);                           \
  template ParamStore<T> zeros_like<T>(const ParamStore<T>&);                                           \
  template void check_params<T>(const ParamStore<T>&, const EncoderConfig&);                            \
  template class Encoder<T>;                                                                            \
  template Matrix<T> encode_online<T>(const Matrix<T>&, const ParamStore<T>&, const EncoderConfig&,     \
                                      const MaskPattern&);                                              \
  template Matrix<T> encode_target<T>(const Matrix<T>&, const ParamStore<T>&, const EncoderConfig&);    \
  template PatchGrid<T> reconstruct<T>(const Matrix<T>&, const ParamStore<T>&, const EncoderConfig&);

LCM_INSTANTIATE_MODEL(float)
LCM_INSTANTIATE_MODEL(double)

}  // namespace lcm
