#pragma once

#include <span>
#include <string>
#include <vector>

namespace urep {

/// Per-sample class probabilities (row-major [N, K]) with integer labels.
struct ScoredLabelSet {
  int num_classes = 2;
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  double score(std::size_t sample, int cls) const {
    return scores[sample * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(cls)];
  }
  int predicted(std::size_t sample) const;
  /// Throws ContractError on bad labels or rows not summing to 1 (1e-5).
  void validate() const;
};

struct ClassificationMetrics {
  double accuracy = 0;
  double sensitivity = 0;
  double precision = 0;
  double f_score = 0;
  double auc = 0;
  /// Classes excluded from an average, undefined quantities.
  std::vector<std::string> warnings;
};

/// Binary tasks report the positive class (label 1). With more classes,
/// sensitivity, precision and F-score are macro averages and AUC is the
/// one-vs-rest macro AUC; classes absent from the labels are skipped with a
/// warning. Undefined results are NaN.
ClassificationMetrics classification_metrics(const ScoredLabelSet& set);

/// Mann-Whitney U / (n_pos * n_neg); ties count one half. NaN if either
/// group is empty.
double auc_rank(std::span<const double> scores, std::span<const bool> positive);

struct SegmentationMetrics {
  double pixel_accuracy = 0;
  double iou = 0;
};

/// Binarizes pred at `threshold` (p >= threshold is positive). IoU is 1 when
/// both masks are empty.
SegmentationMetrics segmentation_metrics(std::span<const float> pred, std::span<const float> truth,
                                         double threshold = 0.5);
SegmentationMetrics segmentation_metrics(std::span<const double> pred, std::span<const double> truth,
                                         double threshold = 0.5);

/// 10 log10(1 / MSE) for images in [0, 1]; +infinity when the images match.
double psnr(std::span<const float> clean, std::span<const float> reconstructed);
double psnr(std::span<const double> clean, std::span<const double> reconstructed);

}  // namespace urep
