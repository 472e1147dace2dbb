#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "urep/metrics.hpp"
#include "urep/train.hpp"

namespace urep {

/// Metrics of one task on one split. Only the group matching the task kind
/// is set; "denoise" rows carry PSNR only.
struct TaskEvaluation {
  std::string task;
  std::size_t samples = 0;
  std::optional<ClassificationMetrics> classification;
  std::optional<SegmentationMetrics> segmentation;
  std::optional<double> psnr_denoised;
  std::optional<double> psnr_noisy;
};

struct EvalOptions {
  /// Heads to evaluate, plus "denoise" for the reconstruction. Empty means
  /// every head, and "denoise" when the backbone was trained as a denoiser.
  std::vector<std::string> tasks;
  double noise_sigma = 0.03;
  std::uint64_t noise_seed = 1;
};

/// Throws CompatibilityError for a task the model cannot answer and
/// MissingLabelsError when the set lacks the ground truth a metric needs.
std::vector<TaskEvaluation> evaluate(URepModel<float>& model, const ImageSet& set, const EvalOptions& options);

/// Columns: task, n, accuracy, sensitivity, precision, f_score, auc, iou,
/// pixel_accuracy, psnr, psnr_noisy. '-' marks metrics that do not apply.
std::string format_metrics_report(const std::vector<TaskEvaluation>& rows);

/// Columns: epoch, train_loss, val_loss, lr, seconds, best. With timing off,
/// seconds is '-'.
std::string format_train_log(const TrainRecord& record, bool timing = true);

struct CompareOptions {
  std::vector<std::string> tasks{"seg", "cls"};
  int kernel = 3;
  /// Shared by every model in both pipelines.
  TrainBudget budget{8, 0, 8, 3e-3, true};
  int hidden = 64;
  double dropout = 0.25;
  double noise_sigma = 0.03;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 1;
  bool timing = true;
};

struct CompareRow {
  std::string approach;  // shared | traditional
  std::string task;
  double val_loss = 0;
  std::string metric;
  double value = 0;
  double seconds = 0;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  double shared_seconds = 0;
  double traditional_seconds = 0;
  std::string report;
};

/// Shared pipeline: one denoising CDAE, then a frozen-backbone head per task.
/// Traditional pipeline: the same denoiser trained on its own plus one
/// randomly initialized full model per task. Both use identical seeds and
/// budgets; metrics come from `test`.
CompareResult compare_pipelines(const ImageSet& train, const ImageSet& val, const ImageSet& test,
                                const CompareOptions& options);

/// Report layout: a header line, '#'-prefixed section lines, one row per
/// approach and task, and a final `total` line per approach.
std::string format_compare_report(const CompareResult& result, bool timing = true);

}  // namespace urep
