#pragma once

#include <vector>

#include "urep/graph.hpp"

namespace urep {

// Elementwise binary ops accept equal shapes, or a rank-0 scalar on either
// side. Anything else is a ShapeError.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);

template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> add_scalar(Var<T> x, T offset);

template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> exp(Var<T> x);
/// Inputs must be > 0; clip first.
template <typename T> Var<T> log(Var<T> x);
/// Gradient passes where low <= x <= high, zero elsewhere.
template <typename T> Var<T> clip(Var<T> x, T low, T high);
template <typename T> Var<T> sigmoid(Var<T> x);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);

/// Reductions over `axes` (all axes when empty). Reduced axes are dropped.
template <typename T> Var<T> sum(Var<T> x, std::vector<int> axes = {});
template <typename T> Var<T> mean(Var<T> x, std::vector<int> axes = {});
/// Gradient flows to the first maximal element of each reduced slice.
template <typename T> Var<T> max(Var<T> x, std::vector<int> axes = {});

template <typename T> Var<T> reshape(Var<T> x, Shape shape);

/// out[n, j] = x[n, j] + bias[j] for x [N, F] or x [N, C, H, W] with bias [C].
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);

/// out[n] = x[n, index[n]] for x [N, K].
template <typename T> Var<T> select(Var<T> x, std::vector<int> index);

}  // namespace urep
