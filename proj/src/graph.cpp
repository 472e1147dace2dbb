#include "urep/graph.hpp"

#include <algorithm>

namespace urep {

std::string_view op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::variable: return "variable";
    case OpKind::param: return "param";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::relu: return "relu";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::clip: return "clip";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::matmul: return "matmul";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::max: return "max";
    case OpKind::reshape: return "reshape";
    case OpKind::conv2d: return "conv2d";
    case OpKind::upsample: return "upsample";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::add_bias: return "add_bias";
    case OpKind::dropout: return "dropout";
    case OpKind::softmax: return "softmax";
    case OpKind::select: return "select";
    case OpKind::bce: return "bce";
    case OpKind::dice: return "dice";
    case OpKind::cce: return "cce";
    case OpKind::mse: return "mse";
  }
  return "unknown";
}

template <typename T>
Graph<T>::Graph() {
#ifdef NDEBUG
  debug_checks_ = false;
#else
  debug_checks_ = true;
#endif
}

template <typename T>
std::size_t Graph<T>::check(Var<T> v) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractError("variable does not belong to this graph");
  }
  return static_cast<std::size_t>(v.id);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n{OpKind::constant, {}, std::move(value), {}, false, nullptr, {}};
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::variable(Tensor<T> value) {
  Node n{OpKind::variable, {}, std::move(value), {}, grad_enabled_, nullptr, {}};
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::param(Tensor<T>& p) {
  Tensor<T> copy = p.detached();
  const bool needs = grad_enabled_ && p.requires_grad();
  Node n{OpKind::param, {}, std::move(copy), {}, needs, needs ? &p : nullptr, {}};
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::record(OpKind kind, std::initializer_list<Var<T>> inputs, Tensor<T> out,
                        BackwardFn backward) {
  Node n;
  n.kind = kind;
  bool needs = false;
  for (const auto& in : inputs) {
    const auto idx = check(in);
    n.inputs.push_back(in.id);
    needs = needs || nodes_[idx].requires_grad;
  }
  needs = needs && grad_enabled_;
  if (debug_checks_ && out.has_nan()) {
    throw NumericError(std::string("NaN produced by ") + std::string(op_name(kind)));
  }
  n.value = std::move(out);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
std::span<T> Graph<T>::grad_if(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <typename T>
std::span<const T> Graph<T>::grad(Var<T> v) const {
  return nodes_[check(v)].grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  const auto last = check(loss);
  if (nodes_[last].value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(nodes_[last].value.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[last].requires_grad) return;
  nodes_[last].grad.assign(1, T(1));
  for (std::size_t i = last + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.external != nullptr) n.external->accumulate_grad(n.grad);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace urep
