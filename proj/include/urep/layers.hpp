#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "urep/nn.hpp"

namespace urep {

enum class LayerKind { conv, batch_norm, relu, upsample, gap, dense, dropout, softmax, sigmoid };

std::string_view to_string(LayerKind kind) noexcept;

template <typename T>
struct Layer {
  LayerKind kind = LayerKind::relu;
  ConvSpec conv{};          // conv
  int in_features = 0;      // dense
  int out_features = 0;     // dense
  double rate = 0;          // dropout
  int factor = 2;           // upsample
  // conv: weight, bias. dense: weight [in, out], bias. batch_norm: in bn.
  std::vector<Tensor<T>> params;
  BatchNormState<T> bn{1};
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

/// Ordered layer list owning its parameters. Layers are appended through the
/// add_* builders; output_shape() checks that adjacent layers compose.
template <typename T>
class LayerStack {
 public:
  LayerStack() = default;
  explicit LayerStack(std::string name) : name_(std::move(name)) {}

  LayerStack& add_conv(const ConvSpec& spec, Rng& rng);
  LayerStack& add_batch_norm(int channels);
  LayerStack& add_relu();
  LayerStack& add_upsample(int factor = 2);
  LayerStack& add_gap();
  LayerStack& add_dense(int in_features, int out_features, Rng& rng);
  LayerStack& add_dropout(double rate);
  LayerStack& add_softmax();
  LayerStack& add_sigmoid();

  const std::string& name() const noexcept { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  std::size_t size() const noexcept { return layers_.size(); }
  bool empty() const noexcept { return layers_.empty(); }
  const Layer<T>& layer(std::size_t i) const { return layers_.at(i); }
  Layer<T>& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<Layer<T>>& layers() const noexcept { return layers_; }

  /// Output shape for an input shape; throws ShapeError if a layer does not
  /// accept what the previous one produces.
  Shape output_shape(const Shape& input) const;

  Var<T> forward(Graph<T>& g, Var<T> x, Mode mode, Rng& rng) { return forward_range(g, x, mode, rng, 0, size()); }
  /// Runs layers [begin, end).
  Var<T> forward_range(Graph<T>& g, Var<T> x, Mode mode, Rng& rng, std::size_t begin, std::size_t end);

  /// Learnable tensors, named "<stack>.<layer>.<param>".
  std::vector<NamedTensor<T>> parameters();
  /// Learnable tensors plus batch-norm running statistics.
  std::vector<NamedTensor<T>> state();
  std::vector<Tensor<T>*> parameter_ptrs();
  std::size_t parameter_count() const;

  void set_trainable(bool on);

 private:
  std::string name_;
  std::vector<Layer<T>> layers_;
};

extern template class LayerStack<float>;
extern template class LayerStack<double>;

}  // namespace urep
