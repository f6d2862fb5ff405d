#include "lcm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "lcm/error.hpp"
#include "lcm/rng.hpp"

namespace lcm {

FeatureSet extract_features(const SegmentBatch& batch, const ParamStore<float>& xi, const EncoderConfig& cfg) {
  batch.validate();
  const Encoder<float> encoder(cfg, xi);
  FeatureSet out;
  out.features = Matrix<double>(batch.size(), cfg.d);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Matrix<float> h = encoder.forward(batch.segments[s], nullptr);
    auto row = out.features.row(s);
    for (std::size_t t = 0; t < h.rows(); ++t) {
      for (std::size_t c = 0; c < cfg.d; ++c) row[c] += static_cast<double>(h(t, c));
    }
    for (auto& v : row) v /= static_cast<double>(h.rows());
  }
  if (batch.labels) out.labels = *batch.labels;
  return out;
}

FeatureSet extract_features(const SegmentBatch& batch, const Checkpoint& ckpt, const EncoderConfig& cfg) {
  ParamStore<float> xi;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.starts_with("xi/")) xi.emplace(name.substr(3), t);
  }
  require(!xi.empty(), "checkpoint has no target-encoder (xi/) tensors");
  return extract_features(batch, xi, cfg);
}

int argmax_lowest(std::span<const double> row) {
  int best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

Matrix<double> LinearProbe::predict_proba(const Matrix<double>& features) const {
  require(features.cols() == mean.size(), "probe: feature width mismatch");
  const std::size_t n = features.rows(), d = mean.size(), k = classes();
  Matrix<double> probs(n, k);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x[j] = (features(i, j) - mean[j]) * scale[j];
    auto row = probs.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double v = bias[c];
      for (std::size_t j = 0; j < d; ++j) v += x[j] * weights(j, c);
      row[c] = v;
      mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return probs;
}

std::vector<int> LinearProbe::predict(const Matrix<double>& features) const {
  const Matrix<double> probs = predict_proba(features);
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = argmax_lowest(probs.row(i));
  return out;
}

LinearProbe fit_probe(const FeatureSet& train, std::uint64_t seed, const ProbeOptions& options) {
  const std::size_t n = train.features.rows(), d = train.features.cols();
  require(n >= 1 && train.labels.size() == n, "probe: labels must align with feature rows");
  require(options.step_size > 0 && options.l2 >= 0, "probe: bad options");
  int max_label = 0;
  for (int l : train.labels) {
    require(l >= 0, "probe: labels must be non-negative");
    max_label = std::max(max_label, l);
  }
  std::vector<int> distinct = train.labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  require(distinct.size() >= 2, "probe: training set has a single class");
  const std::size_t k = static_cast<std::size_t>(max_label) + 1;

  LinearProbe probe;
  probe.mean.assign(d, 0.0);
  probe.scale.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += train.features(i, j);
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (train.features(i, j) - m) * (train.features(i, j) - m);
    var /= static_cast<double>(n);
    probe.mean[j] = m;
    probe.scale[j] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  probe.weights = Matrix<double>(d, k);
  probe.bias.assign(k, 0.0);
  Rng rng(derive_seed(seed, rng_domain::kProbe, 0));
  for (auto& w : probe.weights.values()) w = 0.01 * standard_normal(rng);

  Matrix<double> grad_w(d, k);
  std::vector<double> grad_b(k);
  for (std::uint64_t epoch = 0; epoch < options.epochs; ++epoch) {
    const Matrix<double> probs = probe.predict_proba(train.features);
    std::fill(grad_w.values().begin(), grad_w.values().end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        const double r = (probs(i, c) - (train.labels[i] == static_cast<int>(c) ? 1.0 : 0.0)) / static_cast<double>(n);
        grad_b[c] += r;
        for (std::size_t j = 0; j < d; ++j) grad_w(j, c) += r * (train.features(i, j) - probe.mean[j]) * probe.scale[j];
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t c = 0; c < k; ++c) {
        probe.weights(j, c) -= options.step_size * (grad_w(j, c) + options.l2 * probe.weights(j, c));
      }
    }
    for (std::size_t c = 0; c < k; ++c) probe.bias[c] -= options.step_size * grad_b[c];
  }
  return probe;
}

double auroc_binary(std::span<const double> scores, const std::vector<bool>& positive) {
  require(scores.size() == positive.size(), "auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney count stays integral with half-weighted ties.
  std::uint64_t twice = 0, neg_below = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos_g = 0, neg_g = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (positive[order[j]]) ++pos_g; else ++neg_g;
      ++j;
    }
    twice += 2 * neg_below * pos_g + pos_g * neg_g;
    neg_below += neg_g;
    n_pos += pos_g;
    n_neg += neg_g;
    i = j;
  }
  require(n_pos > 0 && n_neg > 0, "AUROC undefined without both positives and negatives");
  return static_cast<double>(twice) / static_cast<double>(2 * n_pos * n_neg);
}

MetricsReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& truth,
                              const std::optional<Matrix<double>>& scores) {
  require(!truth.empty() && predicted.size() == truth.size(), "metrics: predictions and truth must align");
  std::vector<int> universe = truth;
  std::sort(universe.begin(), universe.end());
  universe.erase(std::unique(universe.begin(), universe.end()), universe.end());
  require(universe.size() >= 2, "metrics: truth has a single class; kappa and AUROC are undefined");
  const std::size_t k = universe.size(), n = truth.size();
  auto index_of = [&](int label) -> std::size_t {
    const auto it = std::lower_bound(universe.begin(), universe.end(), label);
    require(it != universe.end() && *it == label,
            "metrics: predicted class " + std::to_string(label) + " is outside the truth label set");
    return static_cast<std::size_t>(it - universe.begin());
  };

  std::vector<std::uint64_t> confusion(k * k, 0);  // [truth][predicted]
  for (std::size_t i = 0; i < n; ++i) confusion[index_of(truth[i]) * k + index_of(predicted[i])] += 1;

  std::vector<std::uint64_t> row(k, 0), col(k, 0);
  std::uint64_t diag = 0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      row[a] += confusion[a * k + b];
      col[b] += confusion[a * k + b];
    }
    diag += confusion[a * k + a];
  }
  const double nn = static_cast<double>(n);

  MetricsReport report;
  double recall_sum = 0.0, f1_weighted = 0.0, expected = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(confusion[c * k + c]);
    recall_sum += tp / static_cast<double>(row[c]);
    const double denom = 2.0 * tp + static_cast<double>(row[c] - confusion[c * k + c]) +
                         static_cast<double>(col[c] - confusion[c * k + c]);
    const double f1 = denom > 0 ? 2.0 * tp / denom : 0.0;
    f1_weighted += static_cast<double>(row[c]) / nn * f1;
    expected += (static_cast<double>(row[c]) / nn) * (static_cast<double>(col[c]) / nn);
  }
  const double observed = static_cast<double>(diag) / nn;
  report.balanced_accuracy = recall_sum / static_cast<double>(k);
  report.cohens_kappa = (observed - expected) / (1.0 - expected);
  report.weighted_f1 = f1_weighted;

  if (scores) {
    require(scores->rows() == n, "metrics: score rows must match predictions");
    require(scores->cols() > static_cast<std::size_t>(universe.back()), "metrics: score matrix lacks class columns");
    std::vector<double> column(n);
    auto one_vs_rest = [&](int label) {
      std::vector<bool> positive(n);
      for (std::size_t i = 0; i < n; ++i) {
        column[i] = (*scores)(i, static_cast<std::size_t>(label));
        positive[i] = truth[i] == label;
      }
      return auroc_binary(column, positive);
    };
    if (k == 2) {
      report.auroc = one_vs_rest(universe[1]);
    } else {
      double sum = 0.0;
      for (int label : universe) sum += one_vs_rest(label);
      report.auroc = sum / static_cast<double>(k);
    }
  }
  return report;
}

std::string to_json_line(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["balanced_accuracy"] = report.balanced_accuracy;
  j["cohens_kappa"] = report.cohens_kappa;
  j["weighted_f1"] = report.weighted_f1;
  if (report.auroc) j["auroc"] = *report.auroc;
  else j["auroc"] = nullptr;
  return j.dump();
}

}  // namespace lcm
