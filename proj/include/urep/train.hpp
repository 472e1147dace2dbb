#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "urep/data.hpp"
#include "urep/grid_search.hpp"
#include "urep/model.hpp"

namespace urep {

/// Which ground truth a task learns from.
enum class Target { mask, class_label, quality };

struct TaskSpec {
  std::string task_id;
  HeadKind kind;
  Target target;
};

/// "seg" (mask), "cls" (class label), "quality" (good = 0, low = 1).
TaskSpec task_spec(std::string_view task_id);

/// One split of a dataset as batched tensors. Missing labels are -1.
struct ImageSet {
  Tensor<float> images;  // [N, 1, H, W]
  std::optional<Tensor<float>> masks;
  std::vector<int> class_labels;
  std::vector<int> quality_labels;

  std::size_t size() const noexcept { return class_labels.size(); }
  int image_size() const { return static_cast<int>(images.dim(2)); }
  Tensor<float> gather_images(std::span<const std::size_t> idx) const;
  Tensor<float> gather_masks(std::span<const std::size_t> idx) const;
  std::vector<int> gather_labels(Target t, std::span<const std::size_t> idx) const;
  /// Indices carrying ground truth for `t`.
  std::vector<std::size_t> labeled(Target t) const;
  /// Number of classes seen for a label target (at least 2).
  int class_count(Target t) const;
};

ImageSet make_image_set(const std::vector<Sample>& samples);
ImageSet make_image_set(const Dataset& d, Split split);
/// Gathers rows of any [N, ...] tensor.
Tensor<float> gather_rows(const Tensor<float>& t, std::span<const std::size_t> idx);

struct TrainBudget {
  int epochs = 20;
  /// 0 runs the full epoch budget; otherwise patience-based stopping.
  int patience = 0;
  int batch_size = 16;
  double lr = 1e-3;
  bool plateau = true;
};

using BatchLoss = std::function<Var<float>(Graph<float>&)>;

/// A training problem for fit(): the parameters to update, the state to
/// snapshot at the best epoch, a planner producing one epoch of mini-batch
/// losses, and a deterministic validation loss.
struct FitProblem {
  std::vector<Tensor<float>*> params;
  std::vector<Tensor<float>*> state;
  std::function<std::vector<BatchLoss>(Rng&)> plan_epoch;
  std::function<double()> validate;
};

/// Mini-batch training with reduce-on-plateau, optional patience stopping
/// and best-epoch restore (strict improvement; ties keep the earlier epoch).
/// A non-finite loss throws NumericError.
TrainRecord fit(FitProblem& problem, const TrainBudget& budget, OptimizerKind optimizer, Rng& rng);

/// Shuffled index chunks; a trailing chunk of 1 joins the previous one so
/// batch norm always sees at least 2 samples.
std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> indices, int batch_size, Rng& rng);

struct BackboneSearch {
  /// Axes: kernel, optimizer, and for the dilated CNN dilation and dropout
  /// (of the source head). Missing axes fall back to the base config.
  HyperparameterSpace space;
  BackboneConfig base = BackboneConfig::cdae();
  TrainBudget budget;
  double noise_sigma = 0.03;
  std::uint64_t seed = 1;
  /// Supervised mode: the labeled source task.
  std::string source_task = "cls";
  bool timing = true;
};

struct BackboneResult {
  URepModel<float> model;
  GridResult grid;
  std::string report;
};

/// Grid search over CDAEs trained to map noisy images (x + N(0, sigma^2),
/// clipped) to clean ones under MSE, for a fixed epoch budget.
BackboneResult train_backbone_unsupervised(const ImageSet& train, const ImageSet& val, const BackboneSearch& search);

/// Grid search over dilated CNNs with a classification head for the source
/// task, trained under CCE. The best head is kept as the source task's head.
BackboneResult train_backbone_supervised(const ImageSet& train, const ImageSet& val, const BackboneSearch& search);

/// Mean denoising MSE of the model on a set with fixed noise.
double denoise_loss(URepModel<float>& model, const ImageSet& set, double sigma, std::uint64_t seed);
/// Seed of the fixed noise the denoising search validates against.
std::uint64_t validation_noise_seed(std::uint64_t search_seed) noexcept;
/// Deterministic noisy copy of a set's images.
Tensor<float> noisy_images(const Tensor<float>& clean, double sigma, std::uint64_t seed);

struct HeadTraining {
  TrainBudget budget{50, 10, 16, 1e-3, true};
  bool freeze_backbone = false;
  std::uint64_t seed = 1;
};

/// Loss of one head on a batch: segmentation (BCE + Dice) or CCE.
Var<float> task_loss(URepModel<float>& model, TaskHead<float>& head, Graph<float>& g, const ImageSet& set,
                     std::span<const std::size_t> idx, Mode mode, Rng& rng);

/// Trains the head named `task_id` (already in model.heads). Without
/// freezing, the head fine-tunes a private copy of the backbone and the
/// shared one stays untouched; with freezing, backbone features are computed
/// once and only the head learns.
TrainRecord train_head(URepModel<float>& model, const std::string& task_id, const ImageSet& train,
                       const ImageSet& val, const HeadTraining& options);

struct HeadSearchResult {
  GridResult grid;
  std::string report;
  TrainRecord record;
};

/// Grid search over head hyperparameters (axes dropout and optimizer). Each
/// point attaches a fresh head; the best one is added to the model,
/// replacing any head with the same task id.
HeadSearchResult search_head(URepModel<float>& model, const HeadConfig& base, const HyperparameterSpace& space,
                             const ImageSet& train, const ImageSet& val, const HeadTraining& options,
                             bool timing = true);

struct JointLoss {
  Var<float> total;
  std::vector<Var<float>> parts;
};

/// sum_i w_i * loss_i over the heads on one shared batch.
JointLoss joint_loss(URepModel<float>& model, std::span<TaskHead<float>* const> heads, std::span<const double> weights,
                     Graph<float>& g, const ImageSet& set, std::span<const std::size_t> idx, Mode mode, Rng& rng);

/// Trains the shared backbone and the named heads together. When every task
/// is labeled on the same samples each step uses the weighted sum of task
/// losses; otherwise steps alternate between per-task batches. Heads drop
/// any private backbone copy and use the shared one.
TrainRecord train_joint(URepModel<float>& model, const std::vector<std::string>& task_ids,
                        const std::vector<double>& weights, const ImageSet& train, const ImageSet& val,
                        const TrainBudget& budget, OptimizerKind optimizer, std::uint64_t seed);

/// Head outputs over a whole set in infer mode.
Tensor<float> predict(URepModel<float>& model, TaskHead<float>& head, const Tensor<float>& images);

/// Reconstructions from a denoising backbone in infer mode.
Tensor<float> reconstruct(URepModel<float>& model, const Tensor<float>& images);

/// Summarizes a TrainRecord as model provenance entries.
void record_provenance(URepModel<float>& model, const TrainRecord& record, const std::string& prefix);

}  // namespace urep
