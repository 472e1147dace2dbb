#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "urep/tensor.hpp"

namespace urep {

enum class OptimizerKind { sgd, adam, rmsprop };

std::string_view to_string(OptimizerKind kind) noexcept;
/// Accepts "sgd", "adam", "rmsprop" (case-insensitive).
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;   // adam
  double rho = 0.9;       // rmsprop
  double eps = 1e-8;      // adam, rmsprop
};

/// Update rules. Moment buffers are created on the first step and matched to
/// parameters by position, so the parameter list must keep its order.
///
///   sgd:     v = momentum * v + g;            p -= lr * v
///   adam:    m = b1 m + (1 - b1) g;  s = b2 s + (1 - b2) g^2
///            p -= lr * (m / (1 - b1^t)) / (sqrt(s / (1 - b2^t)) + eps)
///   rmsprop: s = rho s + (1 - rho) g^2;       p -= lr * g / (sqrt(s) + eps)
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  /// Applies one update from each parameter's accumulated grad. Throws
  /// ContractError when a parameter has no gradient, unless
  /// `skip_without_grad` is set; skipped parameters keep their moments and
  /// their own bias-correction step count.
  void step(std::span<Tensor<T>* const> params, bool skip_without_grad = false);
  static void zero_grad(std::span<Tensor<T>* const> params);

  double lr() const noexcept { return config_.lr; }
  void set_lr(double lr);
  const OptimizerConfig& config() const noexcept { return config_; }
  long steps() const noexcept { return t_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  std::vector<long> param_steps_;
  long t_ = 0;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

/// Improvement threshold shared by the plateau schedule and early stopping.
inline constexpr double kMinImprovement = 1e-4;

struct PlateauConfig {
  double factor = 0.5;
  int patience = 3;
  double min_lr = 1e-5;
};

/// Reduce-on-plateau: after `patience` consecutive epochs without an
/// improvement larger than kMinImprovement over the best loss, lr is
/// multiplied by `factor` (never below min_lr) and the counter restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, PlateauConfig config = {});
  double observe(double val_loss);
  double lr() const noexcept { return lr_; }

 private:
  PlateauConfig config_;
  double lr_;
  double best_;
  int bad_epochs_ = 0;
  bool started_ = false;
};

/// Learning rate after replaying `history` through a PlateauScheduler.
double plateau_schedule(std::span<const double> history, double initial_lr, PlateauConfig config = {});

/// True iff the last `patience` epochs each failed to beat the best earlier
/// loss by more than kMinImprovement.
bool early_stop(std::span<const double> history, int patience);

struct EpochRecord {
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
  double seconds = 0;
};

enum class TrainStatus { completed, early_stopped };
std::string_view to_string(TrainStatus status) noexcept;

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  TrainStatus status = TrainStatus::completed;

  double best_val_loss() const;
  double total_seconds() const noexcept;
  std::vector<double> val_history() const;
};

}  // namespace urep
