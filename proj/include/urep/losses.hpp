#pragma once

#include <vector>

#include "urep/graph.hpp"

namespace urep {

/// Probabilities are clipped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;
/// Smoothing added to the Dice numerator and denominator.
inline constexpr double kDiceEps = 1e-6;

/// -(1/j) * sum(y log p + (1 - y) log(1 - p)) over all j elements.
template <typename T>
Var<T> bce_loss(Var<T> pred, const Tensor<T>& target);

/// Soft Dice: 1 - (2 sum(p y) + eps) / (sum(p) + sum(y) + eps).
template <typename T>
Var<T> dice_loss(Var<T> pred, const Tensor<T>& target);

/// BCE + Dice, the segmentation objective.
template <typename T>
Var<T> segmentation_loss(Var<T> pred, const Tensor<T>& target);

/// Mean over rows of -log p[label] for probabilities [N, K].
template <typename T>
Var<T> cce_loss(Var<T> probs, const std::vector<int>& labels);

/// Mean squared difference.
template <typename T>
Var<T> mse_loss(Var<T> a, Var<T> b);

}  // namespace urep
