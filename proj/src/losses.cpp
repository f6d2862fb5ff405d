#include "lcm/losses.hpp"

#include <cmath>

#include "lcm/error.hpp"

namespace lcm {

template <typename T>
std::vector<T> layer_norm_nonaffine(std::span<const T> v) {
  require(v.size() >= 2, "layer norm needs at least 2 features");
  T mean = 0;
  for (T x : v) mean += x;
  mean /= T(v.size());
  T var = 0;
  for (T x : v) var += (x - mean) * (x - mean);
  var /= T(v.size());
  const T rstd = T(1) / std::sqrt(var + T(kLossLnEps));
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) * rstd;
  return out;
}

template <typename T>
double alignment_sum(const Matrix<T>& h, const Matrix<T>& z, double weight, Matrix<T>* grad_z) {
  require(h.rows() == z.rows() && h.cols() == z.cols(), "alignment loss: h and z differ in shape");
  const std::size_t d = z.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto nh = layer_norm_nonaffine<T>(h.row(r));
    // Recompute the z statistics here; the backward pass needs rstd and the normalized row.
    const auto zr = z.row(r);
    T mean = 0;
    for (T x : zr) mean += x;
    mean /= T(d);
    T var = 0;
    for (T x : zr) var += (x - mean) * (x - mean);
    var /= T(d);
    const T rstd = T(1) / std::sqrt(var + T(kLossLnEps));
    std::vector<T> nz(d), diff(d);
    double row_sum = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      nz[c] = (zr[c] - mean) * rstd;
      diff[c] = nz[c] - nh[c];
      row_sum += static_cast<double>(diff[c]) * static_cast<double>(diff[c]);
    }
    total += row_sum;
    if (grad_z) {
      // d/dnz = 2 * diff * weight; then back through the non-affine norm.
      T mean_g = 0, mean_g_nz = 0;
      std::vector<T> gn(d);
      for (std::size_t c = 0; c < d; ++c) {
        gn[c] = T(2 * weight) * diff[c];
        mean_g += gn[c];
        mean_g_nz += gn[c] * nz[c];
      }
      mean_g /= T(d);
      mean_g_nz /= T(d);
      auto out = grad_z->row(r);
      for (std::size_t c = 0; c < d; ++c) out[c] += rstd * (gn[c] - mean_g - nz[c] * mean_g_nz);
    }
  }
  return weight * total;
}

template <typename T>
double alignment_loss(const Matrix<T>& h, const Matrix<T>& z) {
  require(h.rows() == z.rows() && h.cols() == z.cols(), "alignment loss: h and z differ in shape");
  require(z.rows() >= 1, "alignment loss: empty token sequence");
  return alignment_sum<T>(h, z, 1.0 / static_cast<double>(z.rows()), nullptr);
}

template <typename T>
double reconstruction_sum(const Matrix<T>& predicted, const Matrix<T>& target, const MaskPattern& mask,
                          double weight, Matrix<T>* grad_predicted) {
  require(predicted.rows() == target.rows() && predicted.cols() == target.cols(),
          "reconstruction loss: prediction and target differ in shape");
  require(mask.size() == predicted.rows(), "reconstruction loss: mask does not match the patch grid");
  double total = 0.0;
  for (std::size_t tok = 0; tok < predicted.rows(); ++tok) {
    if (!mask.token(tok)) continue;
    const auto p = predicted.row(tok);
    const auto t = target.row(tok);
    for (std::size_t s = 0; s < p.size(); ++s) {
      const double e = static_cast<double>(p[s]) - static_cast<double>(t[s]);
      total += e * e;
      if (grad_predicted) (*grad_predicted)(tok, s) += static_cast<T>(2.0 * weight * e);
    }
  }
  return weight * total;
}

template <typename T>
double reconstruction_loss(const PatchGrid<T>& predicted, const PatchGrid<T>& target, const MaskPattern& mask) {
  require(predicted.channels == target.channels && predicted.windows == target.windows &&
              predicted.patch_len == target.patch_len,
          "reconstruction loss: prediction and target grids differ");
  require(mask.channels == target.channels && mask.windows == target.windows,
          "reconstruction loss: mask does not match the patch grid");
  const std::size_t masked = mask.count();
  if (masked == 0) throw ValidationError("reconstruction loss undefined for |M| = 0");
  return reconstruction_sum<T>(predicted.patches, target.patches, mask, 1.0 / static_cast<double>(masked), nullptr);
}

double total_loss(double alignment, double reconstruction, double lambda) {
  require(lambda >= 0, "lambda must be >= 0");
  return alignment + lambda * reconstruction;
}

LossReport make_report(double alignment, double reconstruction, double lambda) {
  return LossReport{alignment, reconstruction, total_loss(alignment, reconstruction, lambda), lambda};
}

#define LCM_INSTANTIATE_LOSSES(T)                                                                           \
  template std::vector<T> layer_norm_nonaffine<T>(std::span<const T>);                                      \
  template double alignment_loss<T>(const Matrix<T>&, const Matrix<T>&);                                    \
  template double reconstruction_loss<T>(const PatchGrid<T>&, const PatchGrid<T>&, const MaskPattern&);     \
  template double alignment_sum<T>(const Matrix<T>&, const Matrix<T>&, double, Matrix<T>*);                 \
  template double reconstruction_sum<T>(const Matrix<T>&, const Matrix<T>&, const MaskPattern&, double,     \
                                        Matrix<T>*);

LCM_INSTANTIATE_LOSSES(float)
LCM_INSTANTIATE_LOSSES(double)

}  // namespace lcm
