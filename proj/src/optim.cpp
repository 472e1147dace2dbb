#include "urep/optim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace urep {

std::string_view to_string(OptimizerKind kind) noexcept {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::rmsprop: return "rmsprop";
  }
  return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "sgd") return OptimizerKind::sgd;
  if (lower == "adam") return OptimizerKind::adam;
  if (lower == "rmsprop") return OptimizerKind::rmsprop;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig config) : config_(config) {
  set_lr(config.lr);
}

template <typename T>
void Optimizer<T>::set_lr(double lr) {
  if (!(lr > 0)) throw ContractError("learning rate must be positive");
  config_.lr = lr;
}

template <typename T>
void Optimizer<T>::zero_grad(std::span<Tensor<T>* const> params) {
  for (auto* p : params) p->clear_grad();
}

template <typename T>
void Optimizer<T>::step(std::span<Tensor<T>* const> params, bool skip_without_grad) {
  if (first_.empty()) {
    first_.resize(params.size());
    second_.resize(params.size());
    param_steps_.assign(params.size(), 0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_[i].assign(params[i]->size(), T(0));
      if (config_.kind != OptimizerKind::sgd) second_[i].assign(params[i]->size(), T(0));
    }
  }
  if (first_.size() != params.size()) throw ContractError("optimizer parameter list changed between steps");
  ++t_;
  const T lr = static_cast<T>(config_.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (!p.has_grad()) {
      if (skip_without_grad) continue;
      throw ContractError("parameter " + std::to_string(i) + " has no gradient");
    }
    if (first_[i].size() != p.size()) throw ContractError("moment buffer does not match parameter " + std::to_string(i));
    const auto t = static_cast<double>(++param_steps_[i]);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    auto g = p.grad();
    auto w = p.data();
    auto& m = first_[i];
    auto& s = second_[i];
    switch (config_.kind) {
      case OptimizerKind::sgd: {
        const T mu = static_cast<T>(config_.momentum);
        for (std::size_t j = 0; j < w.size(); ++j) {
          m[j] = mu * m[j] + g[j];
          w[j] -= lr * m[j];
        }
        break;
      }
      case OptimizerKind::adam: {
        const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
        const T c1 = static_cast<T>(bc1), c2 = static_cast<T>(bc2), eps = static_cast<T>(config_.eps);
        for (std::size_t j = 0; j < w.size(); ++j) {
          m[j] = b1 * m[j] + (T(1) - b1) * g[j];
          s[j] = b2 * s[j] + (T(1) - b2) * g[j] * g[j];
          w[j] -= lr * (m[j] / c1) / (std::sqrt(s[j] / c2) + eps);
        }
        break;
      }
      case OptimizerKind::rmsprop: {
        const T rho = static_cast<T>(config_.rho), eps = static_cast<T>(config_.eps);
        for (std::size_t j = 0; j < w.size(); ++j) {
          s[j] = rho * s[j] + (T(1) - rho) * g[j] * g[j];
          w[j] -= lr * g[j] / (std::sqrt(s[j]) + eps);
        }
        break;
      }
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

PlateauScheduler::PlateauScheduler(double initial_lr, PlateauConfig config)
    : config_(config), lr_(initial_lr), best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::observe(double val_loss) {
  if (!started_ || val_loss < best_ - kMinImprovement) {
    best_ = started_ ? std::min(best_, val_loss) : val_loss;
    started_ = true;
    bad_epochs_ = 0;
    return lr_;
  }
  if (++bad_epochs_ >= config_.patience) {
    lr_ = std::max(lr_ * config_.factor, config_.min_lr);
    bad_epochs_ = 0;
  }
  return lr_;
}

double plateau_schedule(std::span<const double> history, double initial_lr, PlateauConfig config) {
  if (history.empty()) throw ContractError("plateau schedule needs a nonempty history");
  PlateauScheduler s(initial_lr, config);
  for (double v : history) s.observe(v);
  return s.lr();
}

bool early_stop(std::span<const double> history, int patience) {
  if (patience < 1) throw ContractError("patience must be >= 1");
  double best = std::numeric_limits<double>::infinity();
  std::size_t since = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i == 0 || history[i] < best - kMinImprovement) {
      best = std::min(best, history[i]);
      since = 0;
    } else {
      ++since;
    }
  }
  return since >= static_cast<std::size_t>(patience);
}

std::string_view to_string(TrainStatus status) noexcept {
  return status == TrainStatus::completed ? "completed" : "early-stopped";
}

double TrainRecord::best_val_loss() const {
  if (epochs.empty()) return std::numeric_limits<double>::infinity();
  return epochs.at(best_epoch).val_loss;
}

double TrainRecord::total_seconds() const noexcept {
  double s = 0;
  for (const auto& e : epochs) s += e.seconds;
  return s;
}

std::vector<double> TrainRecord::val_history() const {
  std::vector<double> h;
  h.reserve(epochs.size());
  for (const auto& e : epochs) h.push_back(e.val_loss);
  return h;
}

}  // namespace urep
