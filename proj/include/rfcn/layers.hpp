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
#include <vector>

#include "rfcn/rng.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn {

/**
 * Convolution kernel: weights (f, c, k_h, k_w), bias, stride and zero padding.
 *
 * For conv2d the kernel maps c input channels to f output channels and the
 * bias has f entries. For deconv2d (transposed convolution) the same weight
 * tensor is used in the adjoint orientation: f input channels to c output
 * channels, so the bias has c entries. An empty bias means "no bias".
 */
template <typename T>
struct ConvKernel {
  Tensor<T> weights;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t filters() const { return weights.dim(0); }
  std::size_t channels() const { return weights.dim(1); }
  std::size_t kernel_h() const { return weights.dim(2); }
  std::size_t kernel_w() const { return weights.dim(3); }

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("weights", weights);
    if (!bias.empty()) fn("bias", bias);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fn("weights", weights);
    if (!bias.empty()) fn("bias", bias);
  }
};

/// Output extent of a convolution: floor((in + 2 pad - k) / stride) + 1.
/// Throws ShapeError when the kernel exceeds the padded input.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);
/// Output extent of a transposed convolution: (in - 1) stride + k - 2 pad.
/// Throws ShapeError when the result is not positive.
std::size_t deconv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

template <typename T>
struct ConvCache {
  Tensor<T> input;
  Shape output_shape;
  Shape weight_shape;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;  // empty when the kernel has no bias
};

template <typename T>
struct LayerOutput {
  Tensor<T> value;
  ConvCache<T> cache;
};

template <typename T>
LayerOutput<T> conv2d_forward(const Tensor<T>& x, const ConvKernel<T>& k);
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const ConvCache<T>& cache, const ConvKernel<T>& k);

template <typename T>
LayerOutput<T> deconv2d_forward(const Tensor<T>& x, const ConvKernel<T>& k);
template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& grad_out, const ConvCache<T>& cache, const ConvKernel<T>& k);

/// Bilinear up-sampling weights of size k x k placed on the f == c diagonal
/// of an (f, c, k, k) tensor.
template <typename T>
Tensor<T> bilinear_kernel(std::size_t filters, std::size_t channels, std::size_t size);

/// Randomly initialised conv kernel (scaled fan-in uniform, zero bias).
template <typename T>
ConvKernel<T> make_conv_kernel(std::size_t filters, std::size_t channels, std::size_t size, std::size_t stride,
                               std::size_t pad, Rng& rng, bool with_bias = true);

struct PoolCache {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
struct PoolOutput {
  Tensor<T> value;
  PoolCache cache;
};

/// Max pooling over NCHW input. Ties resolve to the first maximal element in
/// row-major scan order of the window.
template <typename T>
PoolOutput<T> maxpool2d_forward(const Tensor<T>& x, std::size_t window, std::size_t stride);
template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const PoolCache& cache);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input);

template <typename T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

/// y = W x + b for rank-1 x.
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias);
template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& weights);

template <typename T>
Tensor<T> flatten(const Tensor<T>& x);
template <typename T>
Tensor<T> unflatten(const Tensor<T>& x, const Shape& shape);

/// Centre crop of the two trailing (spatial) axes of an NCHW tensor.
template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t height, std::size_t width);
/// Adjoint of crop2d: embeds `grad_out` at the crop offsets in a zero tensor.
template <typename T>
Tensor<T> crop2d_backward(const Tensor<T>& grad_out, const Shape& input_shape);

}  // namespace rfcn
