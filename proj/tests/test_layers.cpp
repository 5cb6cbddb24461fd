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

#include <gtest/gtest.h>

#include "rfcn/layers.hpp"
#include "test_util.hpp"

namespace rfcn {
namespace {

using test::max_abs_diff;
using test::random_tensor;

ConvKernel<double> kernel(Tensor<double> w, Tensor<double> b, std::size_t stride, std::size_t pad) {
  return ConvKernel<double>{std::move(w), std::move(b), stride, pad};
}

TEST(Conv2dTest, SumOfOnes) {
  const auto y = conv2d_forward(Tensor<double>({1, 1, 3, 3}, 1.0),
                                kernel(Tensor<double>({1, 1, 3, 3}, 1.0), Tensor<double>({1}), 1, 0));
  ASSERT_EQ(y.value.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.value[0], 9.0);
}

TEST(Conv2dTest, CenteredDeltaIsIdentity) {
  Rng rng(1);
  const auto x = random_tensor({1, 1, 5, 6}, rng);
  Tensor<double> w({1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  const auto y = conv2d_forward(x, kernel(w, Tensor<double>({1}), 1, 1));
  EXPECT_EQ(y.value, x);
}

TEST(Conv2dTest, MatchesNestedLoopOracle) {
  Rng rng(2);
  const auto x = random_tensor({2, 3, 8, 8}, rng);
  const auto k = kernel(random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng), 2, 1);
  const auto y = conv2d_forward(x, k).value;
  const auto ref = test::naive_conv2d(x, k.weights, k.bias, 2, 1);
  ASSERT_EQ(y.shape(), ref.shape());
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  EXPECT_LE(max_abs_diff(y, ref), 1e-12);
}

TEST(Conv2dTest, Errors) {
  const auto k = kernel(Tensor<double>({2, 3, 3, 3}), Tensor<double>({2}), 1, 0);
  EXPECT_THROW(conv2d_forward(Tensor<double>({1, 2, 5, 5}), k), ShapeError);
  EXPECT_THROW(conv2d_forward(Tensor<double>({1, 3, 2, 5}), k), ShapeError);
  // Padding makes a small input valid.
  EXPECT_NO_THROW(conv2d_forward(Tensor<double>({1, 3, 2, 2}), kernel(k.weights, k.bias, 1, 1)));
  const auto y = conv2d_forward(Tensor<double>({1, 3, 5, 5}), k);
  EXPECT_THROW(conv2d_backward(Tensor<double>({1, 2, 4, 4}), y.cache, k), ShapeError);
}

TEST(Conv2dTest, BackwardExamples) {
  Rng rng(3);
  const auto x = random_tensor({1, 2, 5, 5}, rng);
  const auto k = kernel(random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng), 1, 1);
  const auto y = conv2d_forward(x, k);
  const auto zero = conv2d_backward(Tensor<double>(y.value.shape()), y.cache, k);
  EXPECT_EQ(max_abs(zero.input), 0.0);
  EXPECT_EQ(max_abs(zero.weights), 0.0);
  EXPECT_EQ(max_abs(zero.bias), 0.0);

  Tensor<double> delta({1, 1, 3, 3});
  delta.at(0, 0, 1, 1) = 1.0;
  const auto id = kernel(delta, Tensor<double>({1}), 1, 1);
  const auto x1 = random_tensor({1, 1, 4, 4}, rng);
  const auto y1 = conv2d_forward(x1, id);
  Tensor<double> g({1, 1, 4, 4});
  g.at(0, 0, 2, 1) = 0.75;
  EXPECT_EQ(conv2d_backward(g, y1.cache, id).input, g);
}

TEST(Conv2dTest, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = 1 + rng.below(3), f = 1 + rng.below(3), ksz = 1 + rng.below(3);
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
    const std::size_t h = ksz + 2 + rng.below(4), w = ksz + 1 + rng.below(4);
    auto x = random_tensor({1 + rng.below(2), c, h, w}, rng);
    auto k = kernel(random_tensor({f, c, ksz, ksz}, rng), random_tensor({f}, rng), stride, pad);
    const auto out = conv2d_forward(x, k);
    const auto r = random_tensor(out.value.shape(), rng);
    const auto g = conv2d_backward(r, out.cache, k);
    auto loss = [&] { return dot(conv2d_forward(x, k).value, r); };
    EXPECT_LE(test::max_fd_error(x, g.input, loss), 1e-5) << "trial " << trial;
    EXPECT_LE(test::max_fd_error(k.weights, g.weights, loss), 1e-5) << "trial " << trial;
    EXPECT_LE(test::max_fd_error(k.bias, g.bias, loss), 1e-5) << "trial " << trial;
  }
}

TEST(Deconv2dTest, SingleTapScatter) {
  Rng rng(5);
  const auto w = random_tensor({1, 1, 2, 2}, rng);
  const auto y = deconv2d_forward(Tensor<double>({1, 1, 1, 1}, 3.0), kernel(w, Tensor<double>(), 2, 0));
  ASSERT_EQ(y.value.shape(), (Shape{1, 1, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.value[i], 3.0 * w[i]);
}

TEST(Deconv2dTest, MatchesScatterOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t f = 1 + rng.below(3), c = 1 + rng.below(3), ksz = 1 + rng.below(4);
    const std::size_t stride = 1 + rng.below(3), pad = rng.below((ksz + 1) / 2);
    const auto x = random_tensor({1 + rng.below(2), f, 2 + rng.below(4), 2 + rng.below(4)}, rng);
    const auto k = kernel(random_tensor({f, c, ksz, ksz}, rng), random_tensor({c}, rng), stride, pad);
    const auto y = deconv2d_forward(x, k).value;
    const auto ref = test::naive_deconv2d(x, k.weights, k.bias, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LE(max_abs_diff(y, ref), 1e-12);
  }
}

TEST(Deconv2dTest, AdjointOfConvolution) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t f = 1 + rng.below(3), c = 1 + rng.below(3), ksz = 1 + rng.below(4);
    const std::size_t stride = 1 + rng.below(3), pad = rng.below((ksz + 1) / 2);
    // Choose H, W with (H + 2P - k) divisible by S so the two maps are square.
    const std::size_t oh = 2 + rng.below(3), ow = 2 + rng.below(3);
    const std::size_t h = (oh - 1) * stride + ksz - 2 * pad, w = (ow - 1) * stride + ksz - 2 * pad;
    const auto x = random_tensor({1, c, h, w}, rng);
    const auto k = kernel(random_tensor({f, c, ksz, ksz}, rng), Tensor<double>(), stride, pad);
    const auto conv = conv2d_forward(x, k);
    const auto y = random_tensor(conv.value.shape(), rng);
    const auto deconv = deconv2d_forward(y, k);
    ASSERT_EQ(deconv.value.shape(), x.shape());
    EXPECT_NEAR(dot(conv.value, y), dot(x, deconv.value), 1e-10);
    // deconv forward is exactly conv backward's input gradient.
    EXPECT_LE(max_abs_diff(deconv.value, conv2d_backward(y, conv.cache, k).input), 1e-12);
  }
}

TEST(Deconv2dTest, BilinearKernelOnImpulse) {
  const auto k = kernel(bilinear_kernel<double>(1, 1, 4), Tensor<double>(), 2, 0);
  Tensor<double> x({1, 1, 3, 3});
  x.at(0, 0, 1, 1) = 1.0;
  const auto y = deconv2d_forward(x, k).value;
  ASSERT_EQ(y.shape(), (Shape{1, 1, 8, 8}));
  // Closed form for size 4: factor 2, centre 1.5, taps 1 - |i - 1.5| / 2.
  const double taps[4] = {0.25, 0.75, 0.75, 0.25};
  for (std::size_t i = 0; i < 8; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      const bool inside = i >= 2 && i < 6 && j >= 2 && j < 6;
      const double expected = inside ? taps[i - 2] * taps[j - 2] : 0.0;
      EXPECT_DOUBLE_EQ(y.at(0, 0, i, j), expected);
      EXPECT_DOUBLE_EQ(y.at(0, 0, i, j), y.at(0, 0, 7 - i, 7 - j));  // symmetric bump
      row += y.at(0, 0, i, j);
    }
    EXPECT_DOUBLE_EQ(row, (i >= 2 && i < 6) ? taps[i - 2] * 2.0 : 0.0);
  }
  // Off-diagonal channel pairs are zero.
  const auto multi = bilinear_kernel<double>(2, 2, 4);
  EXPECT_EQ(multi.at(0, 1, 1, 1), 0.0);
  EXPECT_EQ(multi.at(1, 1, 1, 1), 0.75 * 0.75);
}

TEST(Deconv2dTest, BackwardExamplesAndFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t f = 1 + rng.below(3), c = 1 + rng.below(3), ksz = 1 + rng.below(4);
    const std::size_t stride = 1 + rng.below(3), pad = rng.below((ksz + 1) / 2);
    auto x = random_tensor({1, f, 2 + rng.below(3), 2 + rng.below(3)}, rng);
    auto k = kernel(random_tensor({f, c, ksz, ksz}, rng), random_tensor({c}, rng), stride, pad);
    const auto out = deconv2d_forward(x, k);
    const auto zero = deconv2d_backward(Tensor<double>(out.value.shape()), out.cache, k);
    EXPECT_EQ(max_abs(zero.input) + max_abs(zero.weights) + max_abs(zero.bias), 0.0);

    const auto r = random_tensor(out.value.shape(), rng);
    const auto g = deconv2d_backward(r, out.cache, k);
    const auto no_bias = kernel(k.weights, Tensor<double>(), stride, pad);
    EXPECT_LE(max_abs_diff(g.input, conv2d_forward(r, no_bias).value), 1e-12);
    auto loss = [&] { return dot(deconv2d_forward(x, k).value, r); };
    EXPECT_LE(test::max_fd_error(x, g.input, loss), 1e-5);
    EXPECT_LE(test::max_fd_error(k.weights, g.weights, loss), 1e-5);
    EXPECT_LE(test::max_fd_error(k.bias, g.bias, loss), 1e-5);
  }
}

TEST(Deconv2dTest, ShapeAlgebra) {
  EXPECT_EQ(deconv_output_extent(7, 10, 4, 0), 34u);
  EXPECT_THROW(deconv_output_extent(1, 2, 1, 1), ShapeError);
  EXPECT_THROW(deconv2d_forward(Tensor<double>({1, 2, 3, 3}), kernel(Tensor<double>({3, 1, 2, 2}), {}, 1, 0)),
               ShapeError);
  // conv then deconv with equal F/S/P restores spatial dims when divisible.
  for (std::size_t h : {8u, 9u, 12u, 13u}) {
    for (std::size_t k : {2u, 3u, 4u}) {
      for (std::size_t s : {1u, 2u, 3u}) {
        for (std::size_t p : {0u, 1u}) {
          if (h + 2 * p < k || (h + 2 * p - k) % s != 0) continue;
          const std::size_t o = conv_output_extent(h, k, s, p);
          EXPECT_EQ(deconv_output_extent(o, k, s, p), h);
        }
      }
    }
  }
}

TEST(MaxPoolTest, Examples) {
  const auto x = Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto y = maxpool2d_forward(x, 2, 2);
  ASSERT_EQ(y.value.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.value[0], 4.0);
  EXPECT_THROW(maxpool2d_forward(x, 3, 3), ShapeError);

  const auto flat = maxpool2d_forward(Tensor<double>({1, 1, 4, 4}, 2.5), 2, 2);
  EXPECT_EQ(flat.value, Tensor<double>({1, 1, 2, 2}, 2.5));
  const auto g = maxpool2d_backward(Tensor<double>({1, 1, 2, 2}, 1.0), flat.cache);
  // Ties go to the first element of each window in scan order.
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_EQ(g.at(0, 0, i, j), (i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0);
}

TEST(MaxPoolTest, MatchesLoopOracleAndConservesMass) {
  Rng rng(9);
  const auto x = random_tensor({2, 3, 6, 6}, rng);
  const auto y = maxpool2d_forward(x, 3, 3);
  ASSERT_EQ(y.value.shape(), (Shape{2, 3, 2, 2}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t oh = 0; oh < 2; ++oh)
        for (std::size_t ow = 0; ow < 2; ++ow) {
          double m = -1e300;
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) m = std::max(m, x.at(n, c, oh * 3 + i, ow * 3 + j));
          EXPECT_EQ(y.value.at(n, c, oh, ow), m);
        }
  const auto r = random_tensor(y.value.shape(), rng);
  EXPECT_NEAR(sum(maxpool2d_backward(r, y.cache)), sum(r), 1e-12);
}

TEST(MaxPoolTest, OverlappingWindowsAccumulateAndMatchFiniteDifferences) {
  Tensor<double> x({1, 1, 3, 3});
  x.at(0, 0, 1, 1) = 5.0;
  const auto y = maxpool2d_forward(x, 2, 1);
  const auto g = maxpool2d_backward(Tensor<double>({1, 1, 2, 2}, 1.0), y.cache);
  EXPECT_EQ(g.at(0, 0, 1, 1), 4.0);

  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    auto xr = random_tensor({1, 2, 5 + rng.below(3), 5 + rng.below(3)}, rng);
    const std::size_t window = 2 + rng.below(2), stride = 1 + rng.below(2);
    const auto out = maxpool2d_forward(xr, window, stride);
    const auto r = random_tensor(out.value.shape(), rng);
    const auto gx = maxpool2d_backward(r, out.cache);
    auto loss = [&] { return dot(maxpool2d_forward(xr, window, stride).value, r); };
    EXPECT_LE(test::max_fd_error(xr, gx, loss), 1e-5);
  }
}

TEST(ReluTest, BackwardZeroesNonPositiveInputs) {
  const auto x = Tensor<double>::vector({-1, 0, 2, -3, 4});
  const auto g = relu_backward(Tensor<double>::vector({1, 1, 1, 1, 1}), x);
  EXPECT_EQ(g, Tensor<double>::vector({0, 0, 1, 0, 1}));
  EXPECT_EQ(relu(relu(x)), relu(x));
}

TEST(DenseTest, ExamplesAndFiniteDifferences) {
  const auto x = Tensor<double>::vector({1, -2, 3});
  const auto id = Tensor<double>::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  EXPECT_EQ(dense_forward(x, id, Tensor<double>({3})), x);
  const auto b = Tensor<double>::vector({4, 5});
  EXPECT_EQ(dense_forward(x, Tensor<double>({2, 3}), b), b);
  EXPECT_THROW(dense_forward(x, Tensor<double>({2, 4}), b), ShapeError);

  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng.below(6), m = 1 + rng.below(6);
    auto xr = random_tensor({n}, rng);
    auto w = random_tensor({m, n}, rng);
    auto bias = random_tensor({m}, rng);
    const auto y = dense_forward(xr, w, bias);
    const auto ref = add(matmul(w, xr.reshaped({n, 1})).reshaped({m}), bias);
    EXPECT_LE(max_abs_diff(y, ref), 1e-12);
    const auto r = random_tensor({m}, rng);
    const auto g = dense_backward(r, xr, w);
    auto loss = [&] { return dot(dense_forward(xr, w, bias), r); };
    EXPECT_LE(test::max_fd_error(xr, g.input, loss), 1e-5);
    EXPECT_LE(test::max_fd_error(w, g.weights, loss), 1e-5);
    EXPECT_LE(test::max_fd_error(bias, g.bias, loss), 1e-5);
  }
}

TEST(FlattenTest, RowMajorAndRoundTrip) {
  EXPECT_EQ(flatten(Tensor<double>::matrix({{1, 2}, {3, 4}})), Tensor<double>::vector({1, 2, 3, 4}));
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape s{1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(6)};
    const auto x = random_tensor(s, rng);
    EXPECT_EQ(unflatten(flatten(x), s), x);
  }
  EXPECT_EQ(flatten(Tensor<double>({1, 1, 7, 9})).size(), 63u);
  EXPECT_THROW(unflatten(Tensor<double>({10}), {3, 3}), ShapeError);
}

TEST(CropTest, CentreCropAndAdjoint) {
  Rng rng(14);
  const auto x = random_tensor({1, 2, 34, 34}, rng);
  const auto y = crop2d(x, 28, 28);
  EXPECT_EQ(y.at(0, 1, 0, 0), x.at(0, 1, 3, 3));
  const auto r = random_tensor(y.shape(), rng);
  EXPECT_NEAR(dot(y, r), dot(x, crop2d_backward(r, x.shape())), 1e-12);
  EXPECT_THROW(crop2d(x, 35, 10), ShapeError);
}

}  // namespace
}  // namespace rfcn
