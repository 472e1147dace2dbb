#include "urep/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <memory>
#include <cmath>
#include <limits>

namespace urep {
namespace {

template <typename T>
Graph<T>& graph_of(Var<T> a) {
  if (!a.valid()) throw ContractError("invalid variable");
  return *a.graph;
}

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (!a.valid() || !b.valid() || a.graph != b.graph) throw ContractError("variables from different graphs");
  return *a.graph;
}

// Elementwise binary op with scalar broadcast. df_da / df_db take (x, y, out).
template <typename T, typename F, typename DA, typename DB>
Var<T> binary(OpKind kind, Var<T> a, Var<T> b, F f, DA df_da, DB df_db) {
  auto& g = graph_of(a, b);
  const auto& va = a.value();
  const auto& vb = b.value();
  const bool a_scalar = va.rank() == 0 && vb.rank() != 0;
  const bool b_scalar = vb.rank() == 0 && va.rank() != 0;
  if (!a_scalar && !b_scalar && va.shape() != vb.shape()) {
    throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + to_string(va.shape()) + " vs " +
                     to_string(vb.shape()));
  }
  Tensor<T> out(a_scalar ? vb.shape() : va.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(va[a_scalar ? 0 : i], vb[b_scalar ? 0 : i]);
  }
  const int ia = a.id;
  const int ib = b.id;
  const int iout = static_cast<int>(g.size());
  return g.record(kind, {a, b}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    const auto& x = gr.value({&gr, ia});
    const auto& y = gr.value({&gr, ib});
    const auto& o = gr.value({&gr, iout});
    if (auto ga = gr.grad_if(ia); !ga.empty()) {
      for (std::size_t i = 0; i < go.size(); ++i) {
        ga[a_scalar ? 0 : i] += go[i] * df_da(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i], o[i]);
      }
    }
    if (auto gb = gr.grad_if(ib); !gb.empty()) {
      for (std::size_t i = 0; i < go.size(); ++i) {
        gb[b_scalar ? 0 : i] += go[i] * df_db(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i], o[i]);
      }
    }
  });
}

// Elementwise unary op; df takes (x, out).
template <typename T, typename F, typename D>
Var<T> unary(OpKind kind, Var<T> x, F f, D df) {
  auto& g = graph_of(x);
  const auto& vx = x.value();
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(vx[i]);
  const int ix = x.id;
  const int iout = static_cast<int>(g.size());
  return g.record(kind, {x}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    auto gx = gr.grad_if(ix);
    if (gx.empty()) return;
    const auto& in = gr.value({&gr, ix});
    const auto& o = gr.value({&gr, iout});
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * df(in[i], o[i]);
  });
}

// Maps every input element to its output slot for an axis reduction.
struct Reduction {
  Shape out_shape;
  std::vector<std::size_t> target;
  std::size_t count = 1;
};

Reduction plan_reduction(const Shape& shape, std::vector<int> axes) {
  const int rank = static_cast<int>(shape.size());
  if (axes.empty()) {
    for (int a = 0; a < rank; ++a) axes.push_back(a);
  }
  std::vector<bool> reduced(shape.size(), false);
  for (int a : axes) {
    const int ax = a < 0 ? a + rank : a;
    if (ax < 0 || ax >= rank) throw ShapeError("invalid axis " + std::to_string(a) + " for shape " + to_string(shape));
    if (reduced[static_cast<std::size_t>(ax)]) throw ShapeError("duplicate axis " + std::to_string(a));
    reduced[static_cast<std::size_t>(ax)] = true;
  }
  Reduction r;
  for (int a = 0; a < rank; ++a) {
    if (reduced[static_cast<std::size_t>(a)]) {
      r.count *= static_cast<std::size_t>(shape[static_cast<std::size_t>(a)]);
    } else {
      r.out_shape.push_back(shape[static_cast<std::size_t>(a)]);
    }
  }
  const auto n = static_cast<std::size_t>(numel(shape));
  r.target.resize(n);
  std::vector<std::int64_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t t = 0;
    for (int a = 0; a < rank; ++a) {
      if (!reduced[static_cast<std::size_t>(a)]) {
        t = t * static_cast<std::size_t>(shape[static_cast<std::size_t>(a)]) +
            static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]);
      }
    }
    r.target[flat] = t;
    for (int a = rank - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < shape[static_cast<std::size_t>(a)]) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
  return r;
}

template <typename T>
Var<T> sum_like(OpKind kind, Var<T> x, std::vector<int> axes, bool average) {
  auto& g = graph_of(x);
  const auto& vx = x.value();
  auto plan = std::make_shared<Reduction>(plan_reduction(vx.shape(), std::move(axes)));
  Tensor<T> out(plan->out_shape);
  for (std::size_t i = 0; i < vx.size(); ++i) out[plan->target[i]] += vx[i];
  const T factor = average ? T(1) / static_cast<T>(plan->count) : T(1);
  if (average) {
    for (auto& v : out.data()) v *= factor;
  }
  const int ix = x.id;
  return g.record(kind, {x}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    auto gx = gr.grad_if(ix);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[plan->target[i]] * factor;
  });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(
      OpKind::add, a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(
      OpKind::sub, a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(
      OpKind::mul, a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  if (a.valid() && a.graph->debug_checks()) {
    for (T v : b.value().data()) {
      if (v == T(0)) throw NumericError("division by exact zero");
    }
  }
  return binary(
      OpKind::div, a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T o) { return -o / y; });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return unary(
      OpKind::scale, x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T offset) {
  return unary(
      OpKind::add_scalar, x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(
      OpKind::relu, x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary(
      OpKind::exp, x, [](T v) { return std::exp(v); }, [](T, T o) { return o; });
}

template <typename T>
Var<T> log(Var<T> x) {
  if (x.valid() && x.graph->debug_checks()) {
    for (T v : x.value().data()) {
      if (!(v > T(0))) throw NumericError("log of non-positive value");
    }
  }
  return unary(
      OpKind::log, x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> clip(Var<T> x, T low, T high) {
  if (!(low <= high)) throw ContractError("clip bounds out of order");
  return unary(
      OpKind::clip, x, [=](T v) { return std::clamp(v, low, high); },
      [=](T v, T) { return (v >= low && v <= high) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(
      OpKind::sigmoid, x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T o) { return o * (T(1) - o); });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  auto& g = graph_of(a, b);
  const auto& va = a.value();
  const auto& vb = b.value();
  if (va.rank() != 2 || vb.rank() != 2) throw ShapeError("matmul needs rank-2 operands");
  const auto m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  if (vb.dim(0) != k) {
    throw ShapeError("matmul inner extents differ: " + to_string(va.shape()) + " x " + to_string(vb.shape()));
  }
  Tensor<T> out({m, n});
  Map(out.data().data(), m, n).noalias() = CMap(va.data().data(), m, k) * CMap(vb.data().data(), k, n);
  const int ia = a.id, ib = b.id;
  return g.record(OpKind::matmul, {a, b}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    CMap gout(go.data(), m, n);
    if (auto ga = gr.grad_if(ia); !ga.empty()) {
      const auto& y = gr.value({&gr, ib});
      Map(ga.data(), m, k).noalias() += gout * CMap(y.data().data(), k, n).transpose();
    }
    if (auto gb = gr.grad_if(ib); !gb.empty()) {
      const auto& x = gr.value({&gr, ia});
      Map(gb.data(), k, n).noalias() += CMap(x.data().data(), m, k).transpose() * gout;
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x, std::vector<int> axes) {
  return sum_like(OpKind::sum, x, std::move(axes), false);
}

template <typename T>
Var<T> mean(Var<T> x, std::vector<int> axes) {
  return sum_like(OpKind::mean, x, std::move(axes), true);
}

template <typename T>
Var<T> max(Var<T> x, std::vector<int> axes) {
  auto& g = graph_of(x);
  const auto& vx = x.value();
  const auto plan = plan_reduction(vx.shape(), std::move(axes));
  Tensor<T> out = Tensor<T>::full(plan.out_shape, -std::numeric_limits<T>::infinity());
  auto winner = std::make_shared<std::vector<std::size_t>>(out.size(), 0);
  std::vector<bool> seen(out.size(), false);
  for (std::size_t i = 0; i < vx.size(); ++i) {
    const auto t = plan.target[i];
    if (!seen[t] || vx[i] > out[t]) {
      out[t] = vx[i];
      (*winner)[t] = i;
      seen[t] = true;
    }
  }
  const int ix = x.id;
  return g.record(OpKind::max, {x}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    auto gx = gr.grad_if(ix);
    if (gx.empty()) return;
    for (std::size_t t = 0; t < go.size(); ++t) gx[(*winner)[t]] += go[t];
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto& g = graph_of(x);
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const int ix = x.id;
  return g.record(OpKind::reshape, {x}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    auto gx = gr.grad_if(ix);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  auto& g = graph_of(x, bias);
  const auto& vx = x.value();
  const auto& vb = bias.value();
  if ((vx.rank() != 2 && vx.rank() != 4) || vb.rank() != 1 || vb.dim(0) != vx.dim(1)) {
    throw ShapeError("add_bias: bias " + to_string(vb.shape()) + " does not fit " + to_string(vx.shape()));
  }
  const auto batch = static_cast<std::size_t>(vx.dim(0));
  const auto channels = static_cast<std::size_t>(vx.dim(1));
  const std::size_t inner = vx.size() / (batch * channels);
  Tensor<T> out = vx.detached();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      T* p = out.data().data() + (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += vb[c];
    }
  }
  const int ix = x.id, ibias = bias.id;
  return g.record(OpKind::add_bias, {x, bias}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    if (auto gx = gr.grad_if(ix); !gx.empty()) {
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (auto gb = gr.grad_if(ibias); !gb.empty()) {
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const T* p = go.data() + (n * channels + c) * inner;
          T acc = 0;
          for (std::size_t i = 0; i < inner; ++i) acc += p[i];
          gb[c] += acc;
        }
      }
    }
  });
}

template <typename T>
Var<T> select(Var<T> x, std::vector<int> index) {
  auto& g = graph_of(x);
  const auto& vx = x.value();
  if (vx.rank() != 2 || static_cast<std::int64_t>(index.size()) != vx.dim(0)) {
    throw ShapeError("select needs [N, K] input and N indices");
  }
  const auto k = vx.dim(1);
  Tensor<T> out({vx.dim(0)});
  for (std::size_t n = 0; n < index.size(); ++n) {
    if (index[n] < 0 || index[n] >= k) throw ContractError("select index out of range");
    out[n] = vx[n * static_cast<std::size_t>(k) + static_cast<std::size_t>(index[n])];
  }
  const int ix = x.id;
  return g.record(OpKind::select, {x}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    auto gx = gr.grad_if(ix);
    if (gx.empty()) return;
    for (std::size_t n = 0; n < index.size(); ++n) {
      gx[n * static_cast<std::size_t>(k) + static_cast<std::size_t>(index[n])] += go[n];
    }
  });
}

#define UREP_INSTANTIATE_OPS(T)                                        \
  template Var<T> add<T>(Var<T>, Var<T>);                              \
  template Var<T> sub<T>(Var<T>, Var<T>);                              \
  template Var<T> mul<T>(Var<T>, Var<T>);                              \
  template Var<T> div<T>(Var<T>, Var<T>);                              \
  template Var<T> scale<T>(Var<T>, T);                                 \
  template Var<T> add_scalar<T>(Var<T>, T);                            \
  template Var<T> relu<T>(Var<T>);                                     \
  template Var<T> exp<T>(Var<T>);                                      \
  template Var<T> log<T>(Var<T>);                                      \
  template Var<T> clip<T>(Var<T>, T, T);                               \
  template Var<T> sigmoid<T>(Var<T>);                                  \
  template Var<T> matmul<T>(Var<T>, Var<T>);                           \
  template Var<T> sum<T>(Var<T>, std::vector<int>);                    \
  template Var<T> mean<T>(Var<T>, std::vector<int>);                   \
  template Var<T> max<T>(Var<T>, std::vector<int>);                    \
  template Var<T> reshape<T>(Var<T>, Shape);                           \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                         \
  template Var<T> select<T>(Var<T>, std::vector<int>);

UREP_INSTANTIATE_OPS(float)
UREP_INSTANTIATE_OPS(double)

}  // namespace urep
