#include "patchlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace patchlm {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {
void check_dims(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}
}  // namespace

template <class T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  check_dims(shape_);
  data_.assign(numel(shape_), T(0));
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
  check_dims(shape_);
  if (numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

template <class T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw UsageError("item() on a tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <class T>
std::span<T> Tensor<T>::ensure_grad() {
  if (grad_.empty()) grad_.assign(data_.size(), T(0));
  return grad_;
}

template <class T>
void Tensor<T>::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T(0));
}

template <class T>
void Tensor<T>::reshape(Shape shape) {
  check_dims(shape);
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

template <class T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace patchlm
