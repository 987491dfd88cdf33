// Copyright 2026 The fundus-qc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fqc/errors.hpp"

namespace fqc {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// A Tensor is a reference-counted handle: copies alias the same storage,
/// which is what lets the autodiff tape hand gradients back to parameters
/// owned elsewhere. Use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  /// Scalar zero.
  Tensor() : Tensor(Shape{}) {}

  explicit Tensor(Shape shape, bool requires_grad = false)
      : storage_(std::make_shared<Storage>()) {
    validate(shape);
    storage_->data.assign(numel(shape), T{0});
    storage_->shape = std::move(shape);
    storage_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : storage_(std::make_shared<Storage>()) {
    validate(shape);
    if (data.size() != numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
    storage_->shape = std::move(shape);
    storage_->data = std::move(data);
    storage_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.storage_->data.begin(), t.storage_->data.end(), value);
    return t;
  }

  const Shape& shape() const noexcept { return storage_->shape; }
  std::size_t rank() const noexcept { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t size() const noexcept { return storage_->data.size(); }

  std::span<T> data() noexcept { return storage_->data; }
  std::span<const T> data() const noexcept { return storage_->data; }
  const std::vector<T>& values() const noexcept { return storage_->data; }

  T& operator[](std::size_t i) { return storage_->data[i]; }
  const T& operator[](std::size_t i) const { return storage_->data[i]; }

  /// Value of a single-element tensor.
  T item() const {
    if (size() != 1) {
      throw ShapeError("item() on tensor of shape " + to_string(shape()));
    }
    return storage_->data[0];
  }

  bool requires_grad() const noexcept { return storage_->requires_grad; }
  void set_requires_grad(bool on) noexcept { storage_->requires_grad = on; }

  bool has_grad() const noexcept { return !storage_->grad.empty(); }

  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<T> grad() {
    ensure_grad();
    return storage_->grad;
  }
  std::span<const T> grad() const {
    if (!has_grad()) {
      throw StateError("tensor of shape " + to_string(shape()) +
                       " has no gradient");
    }
    return storage_->grad;
  }

  void ensure_grad() {
    if (storage_->grad.empty() && !storage_->data.empty()) {
      storage_->grad.assign(storage_->data.size(), T{0});
    }
  }

  void zero_grad() {
    std::fill(storage_->grad.begin(), storage_->grad.end(), T{0});
  }

  /// Drops the gradient buffer entirely (has_grad() becomes false).
  void clear_grad() {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
  }

  Tensor clone() const {
    Tensor copy(storage_->shape, storage_->data, storage_->requires_grad);
    copy.storage_->grad = storage_->grad;
    return copy;
  }

  bool same_storage(const Tensor& other) const noexcept {
    return storage_ == other.storage_;
  }
  const void* id() const noexcept { return storage_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  static void validate(const Shape& shape) {
    for (auto d : shape) {
      if (d == 0) {
        throw ShapeError("zero-sized dimension in shape " + to_string(shape));
      }
    }
  }

  std::shared_ptr<Storage> storage_;
};

template <typename T>
bool all_finite(const Tensor<T>& t);

extern template bool all_finite(const Tensor<float>&);
extern template bool all_finite(const Tensor<double>&);

}  // namespace fqc
