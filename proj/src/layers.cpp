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

#include "rfcn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eigen_map.hpp"

namespace rfcn {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv: stride must be positive");
  if (kernel == 0) throw ShapeError("conv: kernel extent must be positive");
  if (in + 2 * pad < kernel) {
    throw ShapeError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t deconv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("deconv: stride must be positive");
  if (in == 0 || kernel == 0) throw ShapeError("deconv: empty input or kernel");
  const long long out = static_cast<long long>((in - 1) * stride + kernel) - 2 * static_cast<long long>(pad);
  if (out <= 0) throw ShapeError("deconv: non-positive output extent " + std::to_string(out));
  return static_cast<std::size_t>(out);
}

namespace {

struct Geometry {
  std::size_t channels, height, width;  // image side
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;  // convolution-output side
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

// image (C, H, W) -> columns (C kh kw, out_h out_w)
template <typename T>
void im2col(const T* image, const Geometry& g, T* cols) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long long ih = static_cast<long long>(oh * g.stride + i) - static_cast<long long>(g.pad);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long long>(g.height)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = image + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long long iw = static_cast<long long>(ow * g.stride + j) - static_cast<long long>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<long long>(g.width)) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

// columns -> image, accumulating overlapping taps.
template <typename T>
void col2im(const T* cols, const Geometry& g, T* image) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long long ih = static_cast<long long>(oh * g.stride + i) - static_cast<long long>(g.pad);
          if (ih < 0 || ih >= static_cast<long long>(g.height)) continue;
          T* dst = image + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const T* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long long iw = static_cast<long long>(ow * g.stride + j) - static_cast<long long>(g.pad);
            if (iw >= 0 && iw < static_cast<long long>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected NCHW input, got " + shape_string(x.shape()));
}

template <typename T>
void require_kernel(const ConvKernel<T>& k, const char* op) {
  if (k.weights.rank() != 4) throw ShapeError(std::string(op) + ": kernel weights must be rank 4");
  if (k.filters() == 0 || k.channels() == 0 || k.kernel_h() == 0 || k.kernel_w() == 0) {
    throw ShapeError(std::string(op) + ": empty kernel " + shape_string(k.weights.shape()));
  }
}

template <typename T>
void require_cache(const Tensor<T>& grad_out, const ConvCache<T>& cache, const ConvKernel<T>& k, const char* op) {
  if (grad_out.shape() != cache.output_shape) {
    throw ShapeError(std::string(op) + ": grad_out " + shape_string(grad_out.shape()) + " does not match forward output " +
                     shape_string(cache.output_shape));
  }
  if (k.weights.shape() != cache.weight_shape || k.stride != cache.stride || k.pad != cache.pad) {
    throw ShapeError(std::string(op) + ": kernel does not match the cached forward pass");
  }
}

// Adds per-channel bias to an (N, C, H, W) tensor.
template <typename T>
void add_bias(Tensor<T>& y, const Tensor<T>& bias) {
  if (bias.empty()) return;
  const std::size_t plane = y.dim(2) * y.dim(3);
  for (std::size_t n = 0; n < y.dim(0); ++n)
    for (std::size_t c = 0; c < y.dim(1); ++c) {
      T* p = y.data() + (n * y.dim(1) + c) * plane;
      const T b = bias[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
}

template <typename T>
Tensor<T> bias_grad(const Tensor<T>& grad_out) {
  Tensor<T> gb({grad_out.dim(1)});
  const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
  for (std::size_t n = 0; n < grad_out.dim(0); ++n)
    for (std::size_t c = 0; c < grad_out.dim(1); ++c) {
      const T* p = grad_out.data() + (n * grad_out.dim(1) + c) * plane;
      T s{0};
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      gb[c] += s;
    }
  return gb;
}

}  // namespace

template <typename T>
LayerOutput<T> conv2d_forward(const Tensor<T>& x, const ConvKernel<T>& k) {
  require_rank4(x, "conv2d");
  require_kernel(k, "conv2d");
  if (x.dim(1) != k.channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(k.channels()));
  }
  if (!k.bias.empty() && k.bias.shape() != Shape{k.filters()}) throw ShapeError("conv2d: bias must have f entries");
  const Geometry g{x.dim(1), x.dim(2), x.dim(3), k.kernel_h(), k.kernel_w(), k.stride, k.pad,
                   conv_output_extent(x.dim(2), k.kernel_h(), k.stride, k.pad),
                   conv_output_extent(x.dim(3), k.kernel_w(), k.stride, k.pad)};
  const std::size_t batches = x.dim(0);
  const std::size_t f = k.filters();
  Tensor<T> y({batches, f, g.out_h, g.out_w});
  std::vector<T> cols(g.rows() * g.cols());
  const auto w = detail::as_matrix(k.weights.data(), f, g.rows());
  for (std::size_t n = 0; n < batches; ++n) {
    im2col(x.data() + n * g.channels * g.height * g.width, g, cols.data());
    detail::as_matrix(y.data() + n * f * g.cols(), f, g.cols()).noalias() =
        w * detail::as_matrix(static_cast<const T*>(cols.data()), g.rows(), g.cols());
  }
  add_bias(y, k.bias);
  ConvCache<T> cache{x, y.shape(), k.weights.shape(), k.stride, k.pad};
  return {std::move(y), std::move(cache)};
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const ConvCache<T>& cache, const ConvKernel<T>& k) {
  require_cache(grad_out, cache, k, "conv2d_backward");
  const Tensor<T>& x = cache.input;
  const Geometry g{x.dim(1), x.dim(2), x.dim(3), k.kernel_h(), k.kernel_w(), k.stride, k.pad,
                   grad_out.dim(2), grad_out.dim(3)};
  const std::size_t f = k.filters();
  ConvGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(k.weights.shape()), Tensor<T>()};
  std::vector<T> cols(g.rows() * g.cols());
  const auto w = detail::as_matrix(k.weights.data(), f, g.rows());
  auto gw = detail::as_matrix(grads.weights.data(), f, g.rows());
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const auto go = detail::as_matrix(grad_out.data() + n * f * g.cols(), f, g.cols());
    im2col(x.data() + n * g.channels * g.height * g.width, g, cols.data());
    gw.noalias() += go * detail::as_matrix(static_cast<const T*>(cols.data()), g.rows(), g.cols()).transpose();
    detail::as_matrix(cols.data(), g.rows(), g.cols()).noalias() = w.transpose() * go;
    col2im(cols.data(), g, grads.input.data() + n * g.channels * g.height * g.width);
  }
  if (!k.bias.empty()) grads.bias = bias_grad(grad_out);
  return grads;
}

template <typename T>
LayerOutput<T> deconv2d_forward(const Tensor<T>& x, const ConvKernel<T>& k) {
  require_rank4(x, "deconv2d");
  require_kernel(k, "deconv2d");
  if (x.dim(1) != k.filters()) {
    throw ShapeError("deconv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(k.filters()));
  }
  if (!k.bias.empty() && k.bias.shape() != Shape{k.channels()}) {
    throw ShapeError("deconv2d: bias must have one entry per output channel");
  }
  const std::size_t out_h = deconv_output_extent(x.dim(2), k.kernel_h(), k.stride, k.pad);
  const std::size_t out_w = deconv_output_extent(x.dim(3), k.kernel_w(), k.stride, k.pad);
  // Convolution geometry whose input is the deconv output and whose output is x.
  const Geometry g{k.channels(), out_h, out_w, k.kernel_h(), k.kernel_w(), k.stride, k.pad, x.dim(2), x.dim(3)};
  const std::size_t f = k.filters();
  Tensor<T> y({x.dim(0), k.channels(), out_h, out_w});
  std::vector<T> cols(g.rows() * g.cols());
  const auto w = detail::as_matrix(k.weights.data(), f, g.rows());
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    detail::as_matrix(cols.data(), g.rows(), g.cols()).noalias() =
        w.transpose() * detail::as_matrix(x.data() + n * f * g.cols(), f, g.cols());
    col2im(cols.data(), g, y.data() + n * g.channels * out_h * out_w);
  }
  add_bias(y, k.bias);
  ConvCache<T> cache{x, y.shape(), k.weights.shape(), k.stride, k.pad};
  return {std::move(y), std::move(cache)};
}

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& grad_out, const ConvCache<T>& cache, const ConvKernel<T>& k) {
  require_cache(grad_out, cache, k, "deconv2d_backward");
  const Tensor<T>& x = cache.input;
  const Geometry g{k.channels(), grad_out.dim(2), grad_out.dim(3), k.kernel_h(), k.kernel_w(), k.stride, k.pad,
                   x.dim(2), x.dim(3)};
  const std::size_t f = k.filters();
  ConvGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(k.weights.shape()), Tensor<T>()};
  std::vector<T> cols(g.rows() * g.cols());
  const auto w = detail::as_matrix(k.weights.data(), f, g.rows());
  auto gw = detail::as_matrix(grads.weights.data(), f, g.rows());
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    im2col(grad_out.data() + n * g.channels * g.height * g.width, g, cols.data());
    const auto c = detail::as_matrix(static_cast<const T*>(cols.data()), g.rows(), g.cols());
    detail::as_matrix(grads.input.data() + n * f * g.cols(), f, g.cols()).noalias() = w * c;
    gw.noalias() += detail::as_matrix(x.data() + n * f * g.cols(), f, g.cols()) * c.transpose();
  }
  if (!k.bias.empty()) grads.bias = bias_grad(grad_out);
  return grads;
}

template <typename T>
Tensor<T> bilinear_kernel(std::size_t filters, std::size_t channels, std::size_t size) {
  const std::size_t factor = (size + 1) / 2;
  const double center = size % 2 == 1 ? static_cast<double>(factor) - 1.0 : static_cast<double>(factor) - 0.5;
  Tensor<T> w({filters, channels, size, size});
  for (std::size_t d = 0; d < std::min(filters, channels); ++d)
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) {
        const double wi = 1.0 - std::abs(static_cast<double>(i) - center) / static_cast<double>(factor);
        const double wj = 1.0 - std::abs(static_cast<double>(j) - center) / static_cast<double>(factor);
        w.at(d, d, i, j) = static_cast<T>(wi * wj);
      }
  return w;
}

template <typename T>
ConvKernel<T> make_conv_kernel(std::size_t filters, std::size_t channels, std::size_t size, std::size_t stride,
                               std::size_t pad, Rng& rng, bool with_bias) {
  ConvKernel<T> k;
  k.weights = fill_random<T>({filters, channels, size, size}, ScaledFanInDist{channels * size * size}, rng);
  if (with_bias) k.bias = Tensor<T>({filters});
  k.stride = stride;
  k.pad = pad;
  return k;
}

template <typename T>
PoolOutput<T> maxpool2d_forward(const Tensor<T>& x, std::size_t window, std::size_t stride) {
  require_rank4(x, "maxpool2d");
  if (window == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be positive");
  if (window > x.dim(2) || window > x.dim(3)) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " exceeds input " + shape_string(x.shape()));
  }
  const std::size_t out_h = (x.dim(2) - window) / stride + 1;
  const std::size_t out_w = (x.dim(3) - window) / stride + 1;
  Tensor<T> y({x.dim(0), x.dim(1), out_h, out_w});
  PoolCache cache{x.shape(), y.shape(), std::vector<std::size_t>(y.size())};
  std::size_t o = 0;
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t oh = 0; oh < out_h; ++oh)
        for (std::size_t ow = 0; ow < out_w; ++ow, ++o) {
          std::size_t best = ((n * x.dim(1) + c) * x.dim(2) + oh * stride) * x.dim(3) + ow * stride;
          for (std::size_t i = 0; i < window; ++i)
            for (std::size_t j = 0; j < window; ++j) {
              const std::size_t idx = ((n * x.dim(1) + c) * x.dim(2) + oh * stride + i) * x.dim(3) + ow * stride + j;
              if (x[idx] > x[best]) best = idx;
            }
          y[o] = x[best];
          cache.argmax[o] = best;
        }
  return {std::move(y), std::move(cache)};
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const PoolCache& cache) {
  if (grad_out.shape() != cache.output_shape) {
    throw ShapeError("maxpool2d_backward: grad_out " + shape_string(grad_out.shape()) + " does not match " +
                     shape_string(cache.output_shape));
  }
  Tensor<T> gx(cache.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) gx[cache.argmax[o]] += grad_out[o];
  return gx;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
  if (grad_out.shape() != input.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor<T> gx(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) gx[i] = input[i] > T{0} ? grad_out[i] : T{0};
  return gx;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (x.rank() != 1 || weights.rank() != 2 || weights.dim(1) != x.size()) {
    throw ShapeError("dense: weights " + shape_string(weights.shape()) + " cannot apply to " + shape_string(x.shape()));
  }
  if (bias.shape() != Shape{weights.dim(0)}) throw ShapeError("dense: bias length must equal weight rows");
  Tensor<T> y = bias;
  detail::as_vector(y).noalias() += detail::as_matrix(weights.data(), weights.dim(0), weights.dim(1)) *
                                    detail::as_vector(x);
  check_finite(y, "dense");
  return y;
}

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& weights) {
  if (grad_out.shape() != Shape{weights.dim(0)} || x.shape() != Shape{weights.dim(1)}) {
    throw ShapeError("dense_backward: shape mismatch");
  }
  DenseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weights.shape()), grad_out};
  const auto w = detail::as_matrix(weights.data(), weights.dim(0), weights.dim(1));
  detail::as_vector(g.input).noalias() = w.transpose() * detail::as_vector(grad_out);
  detail::as_matrix(g.weights.data(), weights.dim(0), weights.dim(1)).noalias() =
      detail::as_vector(grad_out) * detail::as_vector(x).transpose();
  return g;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  return x.reshaped({x.size()});
}

template <typename T>
Tensor<T> unflatten(const Tensor<T>& x, const Shape& shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("unflatten: " + std::to_string(x.size()) + " values cannot fill " + shape_string(shape));
  }
  return x.reshaped(shape);
}

namespace {

struct CropOffsets {
  std::size_t top, left;
};

CropOffsets crop_offsets(const Shape& in, std::size_t height, std::size_t width) {
  if (in.size() != 4) throw ShapeError("crop2d: expected NCHW input");
  if (height > in[2] || width > in[3] || height == 0 || width == 0) {
    throw ShapeError("crop2d: cannot crop " + shape_string(in) + " to " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  return {(in[2] - height) / 2, (in[3] - width) / 2};
}

}  // namespace

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t height, std::size_t width) {
  const auto off = crop_offsets(x.shape(), height, width);
  Tensor<T> y({x.dim(0), x.dim(1), height, width});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t h = 0; h < height; ++h)
        for (std::size_t w = 0; w < width; ++w) y.at(n, c, h, w) = x.at(n, c, h + off.top, w + off.left);
  return y;
}

template <typename T>
Tensor<T> crop2d_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  const auto off = crop_offsets(input_shape, grad_out.dim(2), grad_out.dim(3));
  Tensor<T> gx(input_shape);
  for (std::size_t n = 0; n < grad_out.dim(0); ++n)
    for (std::size_t c = 0; c < grad_out.dim(1); ++c)
      for (std::size_t h = 0; h < grad_out.dim(2); ++h)
        for (std::size_t w = 0; w < grad_out.dim(3); ++w) gx.at(n, c, h + off.top, w + off.left) = grad_out.at(n, c, h, w);
  return gx;
}

#define RFCN_INSTANTIATE(T)                                                                                   \
  template LayerOutput<T> conv2d_forward(const Tensor<T>&, const ConvKernel<T>&);                             \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const ConvCache<T>&, const ConvKernel<T>&);         \
  template LayerOutput<T> deconv2d_forward(const Tensor<T>&, const ConvKernel<T>&);                           \
  template ConvGrads<T> deconv2d_backward(const Tensor<T>&, const ConvCache<T>&, const ConvKernel<T>&);       \
  template Tensor<T> bilinear_kernel(std::size_t, std::size_t, std::size_t);                                  \
  template ConvKernel<T> make_conv_kernel(std::size_t, std::size_t, std::size_t, std::size_t, std::size_t,    \
                                          Rng&, bool);                                                        \
  template PoolOutput<T> maxpool2d_forward(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> maxpool2d_backward(const Tensor<T>&, const PoolCache&);                                  \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> dense_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template DenseGrads<T> dense_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> flatten(const Tensor<T>&);                                                               \
  template Tensor<T> unflatten(const Tensor<T>&, const Shape&);                                               \
  template Tensor<T> crop2d(const Tensor<T>&, std::size_t, std::size_t);                                      \
  template Tensor<T> crop2d_backward(const Tensor<T>&, const Shape&);

RFCN_INSTANTIATE(float)
RFCN_INSTANTIATE(double)

#undef RFCN_INSTANTIATE

}  // namespace rfcn
