/* Copyright 2026 The RFCN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rfcn/error.hpp"

namespace rfcn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/**
 * Dense row-major N-d array.
 *
 * Activation tensors follow the NCHW convention (batch, channel, height,
 * width); vectors are rank 1. Instances are value types: ops return new
 * tensors and never alias their inputs.
 *
 * Instantiated for float (training) and double (gradient audits); uint8_t
 * is storage-only, for label maps.
 */
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  /// Rank-1 tensor holding `values`.
  static Tensor vector(std::initializer_list<T> values);
  /// Rank-2 tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 and rank-4 element access (no bounds checks beyond debug asserts).
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same data under a new shape of equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(T value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.shape(), std::move(out));
}

enum class UnaryOp { sigmoid, tanh, relu, logit, atanh, negate };
enum class BinaryOp { add, sub, mul };

std::string_view op_name(UnaryOp op);
std::string_view op_name(BinaryOp op);

/// Throws NumericError naming `where` and the first non-finite flat index.
template <typename T>
void check_finite(const Tensor<T>& t, std::string_view where);

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a);

/// `b` must have a's shape, or be a per-channel bias: rank 1 with length
/// a.dim(1) for rank-4 NCHW input, a.dim(0) for rank-3 CHW input.
template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) { return elementwise(UnaryOp::sigmoid, a); }
template <typename T>
Tensor<T> tanh(const Tensor<T>& a) { return elementwise(UnaryOp::tanh, a); }
template <typename T>
Tensor<T> relu(const Tensor<T>& a) { return elementwise(UnaryOp::relu, a); }
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// In-place `a += b` (equal shapes).
template <typename T>
void accumulate(Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

/// Sum of all elements, accumulated left to right.
template <typename T>
T sum(const Tensor<T>& a);

/// Inner product of equally shaped tensors, accumulated left to right in f64.
template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T max_abs(const Tensor<T>& a);

}  // namespace rfcn
