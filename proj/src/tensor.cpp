#include "urep/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace urep {

std::int64_t numel(const Shape& shape) noexcept {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e < 1) throw ShapeError("non-positive extent in shape " + to_string(shape));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(static_cast<std::size_t>(numel(shape_)), T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  check_extents(shape_);
  if (static_cast<std::int64_t>(data_.size()) != numel(shape_)) {
    throw ShapeError("buffer of " + std::to_string(data_.size()) + " elements does not match shape " +
                     to_string(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, T low, T high, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = static_cast<T>(rng.uniform(low, high));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::gaussian(Shape shape, T mean, T stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = static_cast<T>(rng.normal(mean, stddev));
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  grad_.assign(data_.size(), T(0));
}

template <typename T>
void Tensor<T>::accumulate_grad(std::span<const T> g) {
  if (g.size() != data_.size()) throw ShapeError("gradient size mismatch");
  if (grad_.empty()) grad_.assign(data_.size(), T(0));
  for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor out = detached();
  if (numel(shape) != numel(shape_)) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  check_extents(shape);
  out.shape_ = std::move(shape);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::detached() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

template <typename T>
bool Tensor<T>::has_nan() const noexcept {
  return std::any_of(data_.begin(), data_.end(), [](T v) { return std::isnan(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace urep
