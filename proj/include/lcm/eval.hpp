#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lcm/data_model.hpp"
#include "lcm/model.hpp"

namespace lcm {

/// One pooled feature vector per segment.
struct FeatureSet {
  Matrix<double> features;  // n x d
  std::vector<int> labels;  // empty when the source batch is unlabeled
};

/// Target-encoder forward without masking, mean over tokens.
FeatureSet extract_features(const SegmentBatch& batch, const ParamStore<float>& xi, const EncoderConfig& cfg);
/// Uses the checkpoint's xi/ tensors.
FeatureSet extract_features(const SegmentBatch& batch, const Checkpoint& ckpt, const EncoderConfig& cfg);

/// Multinomial logistic regression on standardized features.
struct LinearProbe {
  std::vector<double> mean;   // feature standardization, length d
  std::vector<double> scale;  // 1 / std, length d
  Matrix<double> weights;     // d x classes
  std::vector<double> bias;   // classes

  std::size_t classes() const noexcept { return bias.size(); }
  /// Softmax probabilities, n x classes.
  Matrix<double> predict_proba(const Matrix<double>& features) const;
  /// Argmax; ties go to the lowest class index.
  std::vector<int> predict(const Matrix<double>& features) const;

  friend bool operator==(const LinearProbe&, const LinearProbe&) = default;
};

struct ProbeOptions {
  std::uint64_t epochs = 500;
  double step_size = 0.5;
  double l2 = 1e-4;
};

/// Full-batch gradient descent with a fixed step; weights start from a
/// small seeded normal draw.
LinearProbe fit_probe(const FeatureSet& train, std::uint64_t seed, const ProbeOptions& options = {});

/// Returns argmax index of `row`; lowest index on ties.
int argmax_lowest(std::span<const double> row);

struct MetricsReport {
  double balanced_accuracy = 0.0;
  double cohens_kappa = 0.0;
  double weighted_f1 = 0.0;
  std::optional<double> auroc;  // needs scores
};

/// `scores` (optional) is n x C with one column per class label; binary
/// AUROC uses the column of the larger label, multiclass is macro one-vs-rest.
MetricsReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& truth,
                              const std::optional<Matrix<double>>& scores = std::nullopt);

/// Rank-statistic AUROC; ties count half. `positive[i]` marks positives.
double auroc_binary(std::span<const double> scores, const std::vector<bool>& positive);

std::string to_json_line(const MetricsReport& report);

}  // namespace lcm
