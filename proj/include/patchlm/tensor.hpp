#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "patchlm/errors.hpp"

namespace patchlm {

using Shape = std::vector<std::size_t>;
using TokenId = std::uint32_t;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor with an optional gradient buffer of the same shape.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  // Size of the last axis; rows() * cols() == size().
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }
  // Allocates a zero gradient on first use.
  std::span<T> ensure_grad();
  void zero_grad();
  void drop_grad() { grad_ = {}; }

  void reshape(Shape shape);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
TensorPtr<T> make_tensor(Shape shape, bool requires_grad = false) {
  return std::make_shared<Tensor<T>>(std::move(shape), requires_grad);
}

template <class T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
  return std::make_shared<Tensor<T>>(std::move(shape), std::move(data), requires_grad);
}

// Keeps make_tensor<T>(shape, {x}) from binding {x} to requires_grad.
template <class T>
TensorPtr<T> make_tensor(Shape shape, std::initializer_list<T> data, bool requires_grad = false) {
  return make_tensor<T>(std::move(shape), std::vector<T>(data), requires_grad);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace patchlm
