#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "urep/tensor.hpp"

namespace urep {

enum class OpKind {
  constant,
  variable,
  param,
  add,
  sub,
  mul,
  div,
  scale,
  add_scalar,
  relu,
  exp,
  log,
  clip,
  sigmoid,
  matmul,
  sum,
  mean,
  max,
  reshape,
  conv2d,
  upsample,
  batch_norm,
  global_avg_pool,
  add_bias,
  dropout,
  softmax,
  select,
  bce,
  dice,
  cce,
  mse,
};

std::string_view op_name(OpKind kind) noexcept;

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return graph != nullptr && id >= 0; }
};

/// Append-only tape for reverse-mode differentiation.
///
/// Nodes are recorded in evaluation order, so every input precedes its
/// consumer; backward() walks the tape in exact reverse insertion order.
/// A graph is built for one forward pass and then discarded.
template <typename T>
class Graph {
 public:
  /// Called with the node's output gradient; adds into input gradients.
  using BackwardFn = std::function<void(Graph&, std::span<const T>)>;

  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Input that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// Leaf owned by the graph that receives a gradient (read it with grad()).
  Var<T> variable(Tensor<T> value);
  /// Leaf bound to an external tensor; backward() accumulates into p's grad
  /// when p.requires_grad() is set.
  Var<T> param(Tensor<T>& p);

  /// Used by op implementations. `backward` is dropped when no input needs a
  /// gradient or gradients are disabled.
  Var<T> record(OpKind kind, std::initializer_list<Var<T>> inputs, Tensor<T> out, BackwardFn backward);

  const Tensor<T>& value(Var<T> v) const { return nodes_[check(v)].value; }
  bool requires_grad(Var<T> v) const { return nodes_[check(v)].requires_grad; }
  OpKind kind(Var<T> v) const { return nodes_[check(v)].kind; }
  const std::vector<int>& inputs(Var<T> v) const { return nodes_[check(v)].inputs; }

  /// Gradient buffer of a node, allocated (zeroed) on first use. Returns an
  /// empty span for nodes that do not require a gradient.
  std::span<T> grad_if(int id);

  /// Gradient computed for v by the last backward(); empty if none reached it.
  std::span<const T> grad(Var<T> v) const;

  void backward(Var<T> loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  /// NaN checks on every recorded output and divide-by-zero checks.
  void set_debug_checks(bool on) noexcept { debug_checks_ = on; }
  bool debug_checks() const noexcept { return debug_checks_; }

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Tensor<T> value;
    Buffer<T> grad;
    bool requires_grad = false;
    Tensor<T>* external = nullptr;
    BackwardFn backward;
  };

  std::size_t check(Var<T> v) const;

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool debug_checks_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace urep
