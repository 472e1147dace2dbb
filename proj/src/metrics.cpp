#include "urep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "urep/error.hpp"

namespace urep {

int ScoredLabelSet::predicted(std::size_t sample) const {
  int best = 0;
  for (int c = 1; c < num_classes; ++c) {
    if (score(sample, c) > score(sample, best)) best = c;
  }
  return best;
}

void ScoredLabelSet::validate() const {
  if (num_classes < 2) throw ContractError("classification needs at least 2 classes");
  if (scores.size() != labels.size() * static_cast<std::size_t>(num_classes)) {
    throw ShapeError("score matrix does not match label count");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ContractError("label " + std::to_string(labels[i]) + " outside " + std::to_string(num_classes) + " classes");
    }
    double row = 0;
    for (int c = 0; c < num_classes; ++c) row += score(i, c);
    if (std::abs(row - 1.0) > 1e-5) throw ContractError("score row " + std::to_string(i) + " does not sum to 1");
  }
}

double auc_rank(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw ShapeError("auc: score and label counts differ");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average 1-based ranks over tie groups; all ranks are multiples of 1/2
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t t = i; t <= j; ++t) {
      if (positive[order[t]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ClassificationMetrics classification_metrics(const ScoredLabelSet& set) {
  set.validate();
  const auto n = set.size();
  const int k = set.num_classes;
  ClassificationMetrics m;
  if (n == 0) throw DataError("classification metrics over an empty set");

  std::vector<int> pred(n);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    pred[i] = set.predicted(i);
    if (pred[i] == set.labels[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  struct PerClass {
    double sensitivity, precision, f_score, auc;
  };
  auto per_class = [&](int c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    std::vector<double> s(n);
    std::unique_ptr<bool[]> pos(new bool[n]);
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_c = set.labels[i] == c;
      const bool says_c = pred[i] == c;
      tp += is_c && says_c;
      fp += !is_c && says_c;
      fn += is_c && !says_c;
      s[i] = set.score(i, c);
      pos[i] = is_c;
    }
    PerClass r{};
    r.sensitivity = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : std::nan("");
    r.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    r.f_score = (r.sensitivity + r.precision) > 0 ? 2 * r.sensitivity * r.precision / (r.sensitivity + r.precision) : 0.0;
    r.auc = auc_rank(s, std::span<const bool>(pos.get(), n));
    return r;
  };

  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (int l : set.labels) ++counts[static_cast<std::size_t>(l)];

  if (k == 2) {
    const auto r = per_class(1);
    m.sensitivity = r.sensitivity;
    m.precision = r.precision;
    m.f_score = r.f_score;
    m.auc = r.auc;
    for (int c = 0; c < 2; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        m.warnings.push_back("class " + std::to_string(c) + " absent from labels; sensitivity/AUC undefined");
      }
    }
    return m;
  }

  double sens = 0, prec = 0, f = 0, auc = 0;
  int used = 0;
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      m.warnings.push_back("class " + std::to_string(c) + " absent from labels; excluded from macro average");
      continue;
    }
    const auto r = per_class(c);
    sens += r.sensitivity;
    prec += r.precision;
    f += r.f_score;
    if (std::isnan(r.auc)) {
      m.warnings.push_back("class " + std::to_string(c) + " has no negatives; AUC undefined");
      auc = std::nan("");
    } else {
      auc += r.auc;
    }
    ++used;
  }
  m.sensitivity = sens / used;
  m.precision = prec / used;
  m.f_score = f / used;
  m.auc = auc / used;
  return m;
}

namespace {

template <typename T>
SegmentationMetrics seg_metrics(std::span<const T> pred, std::span<const T> truth, double threshold) {
  if (pred.size() != truth.size()) throw ShapeError("segmentation metrics: size mismatch");
  if (pred.empty()) throw DataError("segmentation metrics over an empty mask");
  std::size_t correct = 0, inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold;
    const bool t = truth[i] >= T(0.5);
    correct += p == t;
    inter += p && t;
    uni += p || t;
  }
  SegmentationMetrics m;
  m.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  m.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  return m;
}

template <typename T>
double psnr_impl(std::span<const T> clean, std::span<const T> recon) {
  if (clean.size() != recon.size()) throw ShapeError("psnr: size mismatch");
  if (clean.empty()) throw DataError("psnr over an empty image");
  double se = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = static_cast<double>(clean[i]) - static_cast<double>(recon[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(clean.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace

SegmentationMetrics segmentation_metrics(std::span<const float> pred, std::span<const float> truth, double threshold) {
  return seg_metrics(pred, truth, threshold);
}
SegmentationMetrics segmentation_metrics(std::span<const double> pred, std::span<const double> truth,
                                         double threshold) {
  return seg_metrics(pred, truth, threshold);
}
double psnr(std::span<const float> clean, std::span<const float> reconstructed) {
  return psnr_impl(clean, reconstructed);
}
double psnr(std::span<const double> clean, std::span<const double> reconstructed) {
  return psnr_impl(clean, reconstructed);
}

}  // namespace urep
