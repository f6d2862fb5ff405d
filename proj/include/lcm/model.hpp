#pragma once

// Online/target encoder and reconstruction head.
//
// Token pipeline per segment (M input channels, n_t windows of p_t samples):
//   channel map W_c          M x T   -> M' x T
//   patchify                         -> N = M' * n_t patches of p_t samples
//   content embedding        patch   -> d   (linear patch projection plus a
//                                           conv stem: 1-D conv, GELU, mean pool, d x d)
//   masked tokens take the learned mask token as content
//   + channel embedding C[i] + positional embedding P[j]
//   pre-norm transformer blocks, final layer norm      -> z, N x d
// Reconstruction head: z -> N x p_t, a linear map per token.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lcm/tensor.hpp"
#include "lcm/tokenizer.hpp"

namespace lcm {

struct EncoderConfig {
  std::size_t in_channels = 8;       // M
  std::size_t mapped_channels = 32;  // M'
  std::size_t patch_len = 64;        // p_t
  std::size_t windows = 16;          // n_t
  std::size_t d = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  std::size_t kernel = 7;

  std::size_t tokens() const noexcept { return mapped_channels * windows; }
  std::size_t segment_length() const noexcept { return windows * patch_len; }
  std::size_t mlp_hidden() const;
  std::size_t conv_positions() const noexcept { return patch_len - kernel + 1; }
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

template <typename T>
using ParamStore = std::map<std::string, Tensor<T>>;

/// Names and shapes of every trainable tensor, sorted by name.
std::vector<std::pair<std::string, std::vector<std::size_t>>> param_shapes(const EncoderConfig& cfg);

/// Closed-form count of scalar parameters.
std::uint64_t param_count(const EncoderConfig& cfg);

/// Truncated-normal(0, 0.02) weights clipped at two standard deviations,
/// layer-norm gains 1, biases 0. Channel map starts at the identity-like
/// pattern W[i][i mod M] = 1 plus noise so early training sees the signal.
template <typename T>
ParamStore<T> init_params(const EncoderConfig& cfg, std::uint64_t seed);

template <typename T>
ParamStore<T> zeros_like(const ParamStore<T>& params);

/// Throws ValidationError unless `params` holds exactly the tensors of `cfg`.
template <typename T>
void check_params(const ParamStore<T>& params, const EncoderConfig& cfg);

/// Decoupled weight decay applies to this tensor.
bool is_decayed(const std::string& name);
/// Gradient-logging groups.
bool in_first_layer(const std::string& name);
bool in_last_layer(const std::string& name, const EncoderConfig& cfg);

template <typename T>
struct BlockCache {
  Matrix<T> input, ln1_hat, ln1_out, q, k, v, attn_concat, mid, ln2_hat, ln2_out, fc1_pre, fc1_act;
  std::vector<T> ln1_rstd, ln2_rstd;
  std::vector<Matrix<T>> probs;  // one N x N matrix per head
};

template <typename T>
struct ForwardCache {
  Matrix<T> segment;     // M x T_used input
  Matrix<T> mapped;      // M' x T_used
  Matrix<T> patches;     // N x p_t
  Matrix<T> conv_pre;    // (N * L) x d
  Matrix<T> pooled;      // N x d
  MaskPattern mask;
  std::vector<BlockCache<T>> blocks;
  Matrix<T> final_hat;
  std::vector<T> final_rstd;
  Matrix<T> tokens;      // z, N x d
};

/// Read-only view binding a configuration to a parameter set.
template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, const ParamStore<T>& params);

  const EncoderConfig& config() const noexcept { return cfg_; }

  /// Mapped signal W_c * x over the first n_t * p_t samples.
  Matrix<T> map_channels(const Matrix<T>& segment) const;

  /// Full forward from an input segment. `mask` may be null (no masking).
  Matrix<T> forward(const Matrix<T>& segment, const MaskPattern* mask, ForwardCache<T>* cache = nullptr) const;

  /// Forward from an already mapped M' x T signal (skips W_c).
  Matrix<T> forward_mapped(const Matrix<T>& mapped, const MaskPattern* mask,
                           ForwardCache<T>* cache = nullptr) const;

  /// Patch predictions, N x p_t.
  Matrix<T> reconstruct(const Matrix<T>& tokens) const;

  /// Accumulates parameter gradients given dL/dz and dL/dx_hat (either may
  /// be empty). `cache` must come from forward() of this encoder.
  void backward(const ForwardCache<T>& cache, const Matrix<T>& d_tokens, const Matrix<T>& d_recon,
                ParamStore<T>& grads) const;

 private:
  const Tensor<T>& p(const std::string& name) const;

  EncoderConfig cfg_;
  const ParamStore<T>& params_;
};

/// z = f_theta(x) with masked patches replaced by the mask token.
template <typename T>
Matrix<T> encode_online(const Matrix<T>& segment, const ParamStore<T>& theta, const EncoderConfig& cfg,
                        const MaskPattern& mask);

/// h = f_xi(x) on the full, unmasked input.
template <typename T>
Matrix<T> encode_target(const Matrix<T>& segment, const ParamStore<T>& xi, const EncoderConfig& cfg);

/// Patch predictions reshaped as a PatchGrid (M' x n_t x p_t).
template <typename T>
PatchGrid<T> reconstruct(const Matrix<T>& tokens, const ParamStore<T>& params, const EncoderConfig& cfg);

}  // namespace lcm
