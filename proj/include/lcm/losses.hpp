#pragma once

#include <vector>

#include "lcm/tensor.hpp"
#include "lcm/tokenizer.hpp"

namespace lcm {

inline constexpr double kLossLnEps = 1e-5;

struct LossReport {
  double alignment = 0.0;       // L_A
  double reconstruction = 0.0;  // L_R
  double total = 0.0;           // L_A + lambda * L_R
  double lambda = 1.0;
};

/// (v - mean) / sqrt(var + 1e-5), no learnable affine.
template <typename T>
std::vector<T> layer_norm_nonaffine(std::span<const T> v);

/// Mean over tokens of ||LN(h_i) - LN(z_i)||^2. h is a constant (stop-gradient).
template <typename T>
double alignment_loss(const Matrix<T>& h, const Matrix<T>& z);

/// Mean over masked patches of ||x_hat - x||^2. Throws if the mask is empty.
template <typename T>
double reconstruction_loss(const PatchGrid<T>& predicted, const PatchGrid<T>& target, const MaskPattern& mask);

double total_loss(double alignment, double reconstruction, double lambda);
LossReport make_report(double alignment, double reconstruction, double lambda);

// Building blocks for batched objectives: each returns weight * (sum over
// tokens/patches of the squared distance) and, when `grad` is non-null,
// adds weight * d(sum)/d(z or x_hat) into it.
template <typename T>
double alignment_sum(const Matrix<T>& h, const Matrix<T>& z, double weight, Matrix<T>* grad_z);

template <typename T>
double reconstruction_sum(const Matrix<T>& predicted, const Matrix<T>& target, const MaskPattern& mask,
                          double weight, Matrix<T>* grad_predicted);

}  // namespace lcm
