#pragma once

#include <utility>

#include "urep/graph.hpp"
#include "urep/ops.hpp"

namespace urep {

enum class Padding { same, valid };
enum class Mode { train, infer };

/// Square 2D convolution geometry.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::same;

  void validate() const;
  int effective_kernel() const noexcept { return dilation * (kernel - 1) + 1; }
  /// Padding before and after along one spatial axis. `same` pads so that the
  /// output is ceil(input / stride), putting the odd pixel after.
  std::pair<int, int> pads(int input) const;
  int output_size(int input) const;
};

/// x [N, Cin, H, W], weight [Cout, Cin, k, k], bias [Cout].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, const ConvSpec& spec);

/// Nearest-neighbour upsampling; each pixel becomes a factor x factor block.
template <typename T>
Var<T> upsample_nearest(Var<T> x, int factor = 2);

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(int channels = 1);
  int channels() const noexcept { return static_cast<int>(gamma.size()); }
};

/// Train mode normalizes with biased batch statistics and folds the unbiased
/// batch variance into the running estimate; infer mode uses running stats.
/// gamma and beta are the graph-bound copies of state.gamma / state.beta.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode);

/// [N, C, H, W] -> [N, C]
template <typename T>
Var<T> global_avg_pool(Var<T> x);

/// x [N, in] * weight [in, out] + bias [out]
template <typename T>
Var<T> dense(Var<T> x, Var<T> weight, Var<T> bias);

/// Inverted dropout.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, Rng& rng);

/// Row softmax of [N, K] with max subtraction.
template <typename T>
Var<T> softmax(Var<T> x);

/// x + N(0, sigma^2) per element, clipped to [0, 1]. Not part of any graph.
template <typename T>
Tensor<T> add_gaussian_noise(const Tensor<T>& x, double sigma, Rng& rng);

/// He-uniform: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
template <typename T>
Tensor<T> he_uniform(Shape shape, std::int64_t fan_in, Rng& rng);

}  // namespace urep
