#include "urep/losses.hpp"

#include <algorithm>
#include <cmath>

#include "urep/ops.hpp"

namespace urep {
namespace {

template <typename T>
void require_same_shape(const char* what, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> bce_loss(Var<T> pred, const Tensor<T>& target) {
  const auto& p = pred.value();
  require_same_shape("bce_loss", p, target);
  const T lo = static_cast<T>(kProbEps), hi = static_cast<T>(1.0 - kProbEps);
  const std::size_t j = p.size();
  double acc = 0;
  for (std::size_t i = 0; i < j; ++i) {
    const double q = std::clamp(p[i], lo, hi);
    const double y = target[i];
    acc += y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  auto& g = *pred.graph;
  const int ip = pred.id;
  return g.record(OpKind::bce, {pred}, Tensor<T>::scalar(static_cast<T>(-acc / static_cast<double>(j))),
                  [=, y = target](Graph<T>& gr, std::span<const T> go) {
                    auto gp = gr.grad_if(ip);
                    if (gp.empty()) return;
                    const auto& pv = gr.value({&gr, ip});
                    const T scale = go[0] / static_cast<T>(j);
                    for (std::size_t i = 0; i < j; ++i) {
                      const T q = pv[i];
                      if (q < lo || q > hi) continue;
                      gp[i] += -scale * (y[i] / q - (T(1) - y[i]) / (T(1) - q));
                    }
                  });
}

template <typename T>
Var<T> dice_loss(Var<T> pred, const Tensor<T>& target) {
  const auto& p = pred.value();
  require_same_shape("dice_loss", p, target);
  double inter = 0, sp = 0, sy = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += static_cast<double>(p[i]) * target[i];
    sp += p[i];
    sy += target[i];
  }
  const double num = 2.0 * inter + kDiceEps;
  const double den = sp + sy + kDiceEps;
  auto& g = *pred.graph;
  const int ip = pred.id;
  return g.record(OpKind::dice, {pred}, Tensor<T>::scalar(static_cast<T>(1.0 - num / den)),
                  [=, y = target](Graph<T>& gr, std::span<const T> go) {
                    auto gp = gr.grad_if(ip);
                    if (gp.empty()) return;
                    for (std::size_t i = 0; i < gp.size(); ++i) {
                      const double d = -(2.0 * y[i] * den - num) / (den * den);
                      gp[i] += go[0] * static_cast<T>(d);
                    }
                  });
}

template <typename T>
Var<T> segmentation_loss(Var<T> pred, const Tensor<T>& target) {
  return add(bce_loss(pred, target), dice_loss(pred, target));
}

template <typename T>
Var<T> cce_loss(Var<T> probs, const std::vector<int>& labels) {
  const auto& p = probs.value();
  if (p.rank() != 2) throw ShapeError("cce_loss expects [N, K] probabilities");
  const auto n = static_cast<std::size_t>(p.dim(0));
  const auto k = static_cast<std::size_t>(p.dim(1));
  if (labels.size() != n) throw ShapeError("cce_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw ContractError("cce_loss: label " + std::to_string(l) + " outside " + std::to_string(k) + " classes");
    }
  }
  const T lo = static_cast<T>(kProbEps), hi = static_cast<T>(1.0 - kProbEps);
  double acc = 0;
  for (std::size_t r = 0; r < n; ++r) {
    acc -= std::log(static_cast<double>(std::clamp(p[r * k + static_cast<std::size_t>(labels[r])], lo, hi)));
  }
  auto& g = *probs.graph;
  const int ip = probs.id;
  return g.record(OpKind::cce, {probs}, Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))),
                  [=](Graph<T>& gr, std::span<const T> go) {
                    auto gp = gr.grad_if(ip);
                    if (gp.empty()) return;
                    const auto& pv = gr.value({&gr, ip});
                    for (std::size_t r = 0; r < n; ++r) {
                      const std::size_t at = r * k + static_cast<std::size_t>(labels[r]);
                      const T q = pv[at];
                      if (q < lo || q > hi) continue;
                      gp[at] += -go[0] / (static_cast<T>(n) * q);
                    }
                  });
}

template <typename T>
Var<T> mse_loss(Var<T> a, Var<T> b) {
  require_same_shape("mse_loss", a.value(), b.value());
  auto d = sub(a, b);
  return mean(mul(d, d));
}

#define UREP_INSTANTIATE_LOSSES(T)                                          \
  template Var<T> bce_loss<T>(Var<T>, const Tensor<T>&);                    \
  template Var<T> dice_loss<T>(Var<T>, const Tensor<T>&);                   \
  template Var<T> segmentation_loss<T>(Var<T>, const Tensor<T>&);           \
  template Var<T> cce_loss<T>(Var<T>, const std::vector<int>&);             \
  template Var<T> mse_loss<T>(Var<T>, Var<T>);

UREP_INSTANTIATE_LOSSES(float)
UREP_INSTANTIATE_LOSSES(double)

}  // namespace urep
