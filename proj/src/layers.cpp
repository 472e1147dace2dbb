#include "urep/layers.hpp"

namespace urep {

std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::upsample: return "upsample";
    case LayerKind::gap: return "gap";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::softmax: return "softmax";
    case LayerKind::sigmoid: return "sigmoid";
  }
  return "?";
}

template <typename T>
LayerStack<T>& LayerStack<T>::add_conv(const ConvSpec& spec, Rng& rng) {
  spec.validate();
  Layer<T> l;
  l.kind = LayerKind::conv;
  l.conv = spec;
  const std::int64_t fan_in = static_cast<std::int64_t>(spec.in_channels) * spec.kernel * spec.kernel;
  l.params.push_back(he_uniform<T>({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, fan_in, rng));
  l.params.push_back(Tensor<T>::zeros({spec.out_channels}));
  for (auto& p : l.params) p.set_requires_grad(true);
  layers_.push_back(std::move(l));
  return *this;
}

template <typename T>
LayerStack<T>& LayerStack<T>::add_batch_norm(int channels) {
  Layer<T> l;
  l.kind = LayerKind::batch_norm;
  l.bn = BatchNormState<T>(channels);
  layers_.push_back(std::move(l));
  return *this;
}

template <typename T>
LayerStack<T>& LayerStack<T>::add_relu() {
  Layer<T> l;
  l.kind = LayerKind::relu;
  layers_.push_back(std::move(l));
  return *this;
}

template <typename T>
LayerStack<T>& LayerStack<T>::add_upsample(int factor) {
  if (factor != 2) throw ContractError("decoder upsampling factor must be 2");
  Layer<T> l;
  l.kind = LayerKind::upsample;
  l.factor = factor;
  layers_.push_back(std::move(l));
  return *this;
}

template <typename T>
LayerStack<T>& LayerStack<T>::add_gap() {
  Layer<T> l;
  l.kind = LayerKind::gap;
  layers_.push_back(std::move(l));
  return *this;
}

template <typename T>
LayerStack<T>& LayerStack<T>::add_dense(int in_features, int out_features, Rng& rng) {
  if (in_features < 1 || out_features < 1) throw ShapeError("dense layer sizes must be positive");
  Layer<T> l;
  l.kind = LayerKind::dense;
  l.in_features = in_features;
  l.out_features = out_features;
  l.params.push_back(he_uniform<T>({in_features, out_features}, in_features, rng));
  l.params.push_back(Tensor<T>::zeros({out_features}));
  for (auto& p : l.params) p.set_requires_grad(true);
  layers_.push_back(std::move(l));
  return *this;
}

template <typename T>
LayerStack<T>& LayerStack<T>::add_dropout(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must be in [0, 1)");
  Layer<T> l;
  l.kind = LayerKind::dropout;
  l.rate = rate;
  layers_.push_back(std::move(l));
  return *this;
}

template <typename T>
LayerStack<T>& LayerStack<T>::add_softmax() {
  Layer<T> l;
  l.kind = LayerKind::softmax;
  layers_.push_back(std::move(l));
  return *this;
}

template <typename T>
LayerStack<T>& LayerStack<T>::add_sigmoid() {
  Layer<T> l;
  l.kind = LayerKind::sigmoid;
  layers_.push_back(std::move(l));
  return *this;
}

template <typename T>
Shape LayerStack<T>::output_shape(const Shape& input) const {
  Shape s = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string where = name_ + " layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
    switch (l.kind) {
      case LayerKind::conv:
        if (s.size() != 4 || s[1] != l.conv.in_channels) {
          throw ShapeError(where + " expects " + std::to_string(l.conv.in_channels) + " channels, got " + to_string(s));
        }
        try {
          s = {s[0], l.conv.out_channels, l.conv.output_size(static_cast<int>(s[2])),
               l.conv.output_size(static_cast<int>(s[3]))};
        } catch (const ShapeError& e) {
          throw ShapeError(where + ": " + e.what());
        }
        break;
      case LayerKind::batch_norm:
        if (s.size() < 2 || s[1] != l.bn.channels()) throw ShapeError(where + " channel mismatch for " + to_string(s));
        break;
      case LayerKind::upsample:
        if (s.size() != 4) throw ShapeError(where + " expects [N, C, H, W]");
        s[2] *= l.factor;
        s[3] *= l.factor;
        break;
      case LayerKind::gap:
        if (s.size() != 4) throw ShapeError(where + " expects [N, C, H, W]");
        s = {s[0], s[1]};
        break;
      case LayerKind::dense:
        if (s.size() != 2 || s[1] != l.in_features) {
          throw ShapeError(where + " expects [N, " + std::to_string(l.in_features) + "], got " + to_string(s));
        }
        s = {s[0], l.out_features};
        break;
      case LayerKind::softmax:
        if (s.size() != 2 || s[1] < 2) throw ShapeError(where + " expects [N, K>=2]");
        break;
      case LayerKind::relu:
      case LayerKind::dropout:
      case LayerKind::sigmoid:
        break;
    }
  }
  return s;
}

template <typename T>
Var<T> LayerStack<T>::forward_range(Graph<T>& g, Var<T> x, Mode mode, Rng& rng, std::size_t begin, std::size_t end) {
  if (begin > end || end > layers_.size()) throw ContractError("layer range out of bounds");
  for (std::size_t i = begin; i < end; ++i) {
    auto& l = layers_[i];
    switch (l.kind) {
      case LayerKind::conv:
        x = conv2d(x, g.param(l.params[0]), g.param(l.params[1]), l.conv);
        break;
      case LayerKind::batch_norm:
        x = batch_norm(x, g.param(l.bn.gamma), g.param(l.bn.beta), l.bn, mode);
        break;
      case LayerKind::relu:
        x = relu(x);
        break;
      case LayerKind::upsample:
        x = upsample_nearest(x, l.factor);
        break;
      case LayerKind::gap:
        x = global_avg_pool(x);
        break;
      case LayerKind::dense:
        x = dense(x, g.param(l.params[0]), g.param(l.params[1]));
        break;
      case LayerKind::dropout:
        x = dropout(x, l.rate, mode, rng);
        break;
      case LayerKind::softmax:
        x = softmax(x);
        break;
      case LayerKind::sigmoid:
        x = sigmoid(x);
        break;
    }
  }
  return x;
}

template <typename T>
std::vector<NamedTensor<T>> LayerStack<T>::parameters() {
  std::vector<NamedTensor<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& l = layers_[i];
    const std::string prefix = name_ + "." + std::to_string(i) + ".";
    if (l.kind == LayerKind::conv || l.kind == LayerKind::dense) {
      out.push_back({prefix + "weight", &l.params[0]});
      out.push_back({prefix + "bias", &l.params[1]});
    } else if (l.kind == LayerKind::batch_norm) {
      out.push_back({prefix + "gamma", &l.bn.gamma});
      out.push_back({prefix + "beta", &l.bn.beta});
    }
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> LayerStack<T>::state() {
  std::vector<NamedTensor<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& l = layers_[i];
    const std::string prefix = name_ + "." + std::to_string(i) + ".";
    if (l.kind == LayerKind::conv || l.kind == LayerKind::dense) {
      out.push_back({prefix + "weight", &l.params[0]});
      out.push_back({prefix + "bias", &l.params[1]});
    } else if (l.kind == LayerKind::batch_norm) {
      out.push_back({prefix + "gamma", &l.bn.gamma});
      out.push_back({prefix + "beta", &l.bn.beta});
      out.push_back({prefix + "running_mean", &l.bn.running_mean});
      out.push_back({prefix + "running_var", &l.bn.running_var});
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> LayerStack<T>::parameter_ptrs() {
  std::vector<Tensor<T>*> out;
  for (auto& nt : parameters()) out.push_back(nt.tensor);
  return out;
}

template <typename T>
std::size_t LayerStack<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    for (const auto& p : l.params) n += p.size();
    if (l.kind == LayerKind::batch_norm) n += l.bn.gamma.size() + l.bn.beta.size();
  }
  return n;
}

template <typename T>
void LayerStack<T>::set_trainable(bool on) {
  for (auto& nt : parameters()) {
    nt.tensor->set_requires_grad(on);
    if (!on) nt.tensor->clear_grad();
  }
}

template class LayerStack<float>;
template class LayerStack<double>;

}  // namespace urep
