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

#include "rfcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "eigen_map.hpp"

namespace rfcn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor({values.size()}, std::vector<T>(values));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("tensor: ragged matrix rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

std::string_view op_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::sigmoid: return "sigmoid";
    case UnaryOp::tanh: return "tanh";
    case UnaryOp::relu: return "relu";
    case UnaryOp::logit: return "logit";
    case UnaryOp::atanh: return "atanh";
    case UnaryOp::negate: return "negate";
  }
  return "?";
}

std::string_view op_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
  }
  return "?";
}

template <typename T>
void check_finite(const Tensor<T>& t, std::string_view where) {
  const T* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(std::string(where) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

namespace {

template <typename T>
T apply(UnaryOp op, T x) {
  switch (op) {
    case UnaryOp::sigmoid:
      // Split on sign so exp never overflows.
      if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
      else {
        const T e = std::exp(x);
        return e / (T{1} + e);
      }
    case UnaryOp::tanh: return std::tanh(x);
    case UnaryOp::relu: return x > T{0} ? x : T{0};
    case UnaryOp::logit: return std::log(x) - std::log1p(-x);
    case UnaryOp::atanh: return std::atanh(x);
    case UnaryOp::negate: return -x;
  }
  return x;
}

template <typename T>
T apply(BinaryOp op, T a, T b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
  }
  return a;
}

}  // namespace

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i]);
  check_finite(out, op_name(op));
  return out;
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b[i]);
  } else if (b.rank() == 1 && (a.rank() == 4 || a.rank() == 3)) {
    const std::size_t channel_axis = a.rank() == 4 ? 1 : 0;
    const std::size_t channels = a.dim(channel_axis);
    if (b.size() != channels) {
      throw ShapeError(std::string(op_name(op)) + ": bias " + shape_string(b.shape()) +
                       " does not broadcast over " + shape_string(a.shape()));
    }
    const std::size_t batches = a.rank() == 4 ? a.dim(0) : 1;
    const std::size_t plane = a.size() / (batches * channels);
    std::size_t i = 0;
    for (std::size_t n = 0; n < batches; ++n)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t k = 0; k < plane; ++k, ++i) out[i] = apply(op, a[i], b[c]);
  } else {
    throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  check_finite(out, op_name(op));
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  check_finite(out, "scale");
  return out;
}

template <typename T>
void accumulate(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("accumulate: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: operands must be rank 2");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  detail::as_matrix(out.data(), a.dim(0), b.dim(1)).noalias() =
      detail::as_matrix(a.data(), a.dim(0), a.dim(1)) * detail::as_matrix(b.data(), b.dim(0), b.dim(1));
  check_finite(out, "matmul");
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: operand must be rank 2");
  Tensor<T> out({a.dim(1), a.dim(0)});
  for (std::size_t r = 0; r < a.dim(0); ++r)
    for (std::size_t c = 0; c < a.dim(1); ++c) out.at(c, r) = a.at(r, c);
  return out;
}

template <typename T>
T sum(const Tensor<T>& a) {
  T s{0};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  return s;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
  return m;
}

#define RFCN_INSTANTIATE(T)                                                        \
  template class Tensor<T>;                                                        \
  template void check_finite(const Tensor<T>&, std::string_view);                  \
  template Tensor<T> elementwise(UnaryOp, const Tensor<T>&);                       \
  template Tensor<T> elementwise(BinaryOp, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> scale(const Tensor<T>&, T);                                   \
  template void accumulate(Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> transpose(const Tensor<T>&);                                  \
  template T sum(const Tensor<T>&);                                                \
  template double dot(const Tensor<T>&, const Tensor<T>&);                         \
  template T max_abs(const Tensor<T>&);

RFCN_INSTANTIATE(float)
RFCN_INSTANTIATE(double)

#undef RFCN_INSTANTIATE

// Label maps only need storage.
template class Tensor<std::uint8_t>;

}  // namespace rfcn
