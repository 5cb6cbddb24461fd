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

#include "rfcn/recurrent.hpp"

#include <cmath>
#include <string>

#include "eigen_map.hpp"

namespace rfcn {

std::string_view cell_kind_name(CellKind kind) {
  switch (kind) {
    case CellKind::none: return "none";
    case CellKind::rnn: return "rnn";
    case CellKind::lstm: return "lstm";
    case CellKind::gru: return "gru";
    case CellKind::conv_gru: return "conv_gru";
  }
  return "?";
}

CellKind parse_cell_kind(std::string_view name) {
  for (auto k : {CellKind::none, CellKind::rnn, CellKind::lstm, CellKind::gru, CellKind::conv_gru}) {
    if (cell_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown recurrent cell kind '" + std::string(name) + "'");
}

namespace {

using detail::as_matrix;
using detail::as_vector;

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
auto mat(const Tensor<T>& w) {
  return as_matrix(w.data(), w.dim(0), w.dim(1));
}

template <typename T>
auto mat(Tensor<T>& w) {
  return as_matrix(w.data(), w.dim(0), w.dim(1));
}

// W1 v1 + W2 v2 + b
template <typename T>
Tensor<T> affine2(const Tensor<T>& w1, const Tensor<T>& v1, const Tensor<T>& w2, const Tensor<T>& v2,
                  const Tensor<T>& b) {
  Tensor<T> out = b;
  auto o = as_vector(out);
  o.noalias() += mat(w1) * as_vector(v1);
  o.noalias() += mat(w2) * as_vector(v2);
  return out;
}

// dW += g v^T
template <typename T>
void add_outer(Tensor<T>& dw, const Tensor<T>& g, const Tensor<T>& v) {
  mat(dw).noalias() += as_vector(g) * as_vector(v).transpose();
}

// out += W^T g
template <typename T>
void add_transposed(Tensor<T>& out, const Tensor<T>& w, const Tensor<T>& g) {
  as_vector(out).noalias() += mat(w).transpose() * as_vector(g);
}

template <typename T>
void require_vector(const Tensor<T>& v, std::size_t n, const char* what, const char* op) {
  if (v.rank() != 1 || v.size() != n) {
    throw ShapeError(std::string(op) + ": " + what + " must be a vector of length " + std::to_string(n) + ", got " +
                     shape_string(v.shape()));
  }
}

template <typename T>
Tensor<T> dense_weights(std::size_t rows, std::size_t cols, Rng& rng) {
  return fill_random<T>({rows, cols}, ScaledFanInDist{cols}, rng);
}

}  // namespace

template <typename T>
RecurrentState<T> zero_state(const Shape& hidden_shape, bool with_cell) {
  RecurrentState<T> s;
  s.h = Tensor<T>(hidden_shape);
  if (with_cell) s.c = Tensor<T>(hidden_shape);
  return s;
}

// ---------------------------------------------------------------------------
// Dense GRU

template <typename T>
DenseGruParams<T> DenseGruParams<T>::zeros(std::size_t hidden, std::size_t input) {
  DenseGruParams p;
  p.W_hz = p.W_hr = p.W_h = Tensor<T>({hidden, hidden});
  p.W_xz = p.W_xr = p.W_x = Tensor<T>({hidden, input});
  p.b_z = p.b_r = p.b = Tensor<T>({hidden});
  return p;
}

template <typename T>
DenseGruParams<T> DenseGruParams<T>::random(std::size_t hidden, std::size_t input, Rng& rng) {
  DenseGruParams p = zeros(hidden, input);
  p.W_hz = dense_weights<T>(hidden, hidden, rng);
  p.W_xz = dense_weights<T>(hidden, input, rng);
  p.W_hr = dense_weights<T>(hidden, hidden, rng);
  p.W_xr = dense_weights<T>(hidden, input, rng);
  p.W_h = dense_weights<T>(hidden, hidden, rng);
  p.W_x = dense_weights<T>(hidden, input, rng);
  return p;
}

template <typename T>
StepResult<T, GruCache<T>> gru_step(const Tensor<T>& x, const RecurrentState<T>& state, const DenseGruParams<T>& p) {
  const std::size_t n = p.hidden_size();
  require_vector(x, p.input_size(), "x", "gru_step");
  require_vector(state.h, n, "h", "gru_step");
  const Tensor<T>& h = state.h;

  GruCache<T> c{x, h, affine2(p.W_hz, h, p.W_xz, x, p.b_z), affine2(p.W_hr, h, p.W_xr, x, p.b_r), Tensor<T>({n}),
                Tensor<T>()};
  for (std::size_t i = 0; i < n; ++i) {
    c.z[i] = sigmoid_scalar(c.z[i]);
    c.r[i] = sigmoid_scalar(c.r[i]);
    c.rh[i] = c.r[i] * h[i];
  }
  c.candidate = affine2(p.W_h, c.rh, p.W_x, x, p.b);
  Tensor<T> h_next({n});
  for (std::size_t i = 0; i < n; ++i) {
    c.candidate[i] = std::tanh(c.candidate[i]);
    h_next[i] = (T{1} - c.z[i]) * h[i] + c.z[i] * c.candidate[i];
  }
  check_finite(h_next, "gru_step");
  RecurrentState<T> next{h_next, Tensor<T>(), state.step_index + 1};
  return {std::move(next), std::move(h_next), std::move(c)};
}

template <typename T>
CellGrads<T, DenseGruParams<T>> gru_backward(const Tensor<T>& grad_h_next, const GruCache<T>& c,
                                             const DenseGruParams<T>& p, DenseGruParams<T>* into) {
  const std::size_t n = p.hidden_size();
  require_vector(grad_h_next, n, "grad_h_next", "gru_backward");
  if (c.h_prev.size() != n || c.x.size() != p.input_size()) throw ShapeError("gru_backward: cache mismatch");

  CellGrads<T, DenseGruParams<T>> g{Tensor<T>(c.x.shape()), Tensor<T>({n}), Tensor<T>(), {}};
  DenseGruParams<T>& gp = into ? *into : (g.params = DenseGruParams<T>::zeros(n, p.input_size()));
  Tensor<T> da_z({n}), da_r({n}), da_c({n});
  for (std::size_t i = 0; i < n; ++i) {
    const T gh = grad_h_next[i];
    const T z = c.z[i];
    const T cand = c.candidate[i];
    g.h_prev[i] = gh * (T{1} - z);
    da_z[i] = gh * (cand - c.h_prev[i]) * z * (T{1} - z);
    da_c[i] = gh * z * (T{1} - cand * cand);
  }
  add_outer(gp.W_h, da_c, c.rh);
  add_outer(gp.W_x, da_c, c.x);
  accumulate(gp.b, da_c);
  Tensor<T> d_rh({n});
  add_transposed(d_rh, p.W_h, da_c);
  add_transposed(g.x, p.W_x, da_c);
  for (std::size_t i = 0; i < n; ++i) {
    const T r = c.r[i];
    da_r[i] = d_rh[i] * c.h_prev[i] * r * (T{1} - r);
    g.h_prev[i] += d_rh[i] * r;
  }
  add_outer(gp.W_hr, da_r, c.h_prev);
  add_outer(gp.W_xr, da_r, c.x);
  accumulate(gp.b_r, da_r);
  add_transposed(g.h_prev, p.W_hr, da_r);
  add_transposed(g.x, p.W_xr, da_r);

  add_outer(gp.W_hz, da_z, c.h_prev);
  add_outer(gp.W_xz, da_z, c.x);
  accumulate(gp.b_z, da_z);
  add_transposed(g.h_prev, p.W_hz, da_z);
  add_transposed(g.x, p.W_xz, da_z);
  return g;
}

// ---------------------------------------------------------------------------
// Convolutional GRU

namespace {

template <typename T>
ConvKernel<T> same_kernel(Tensor<T> weights) {
  const std::size_t k = weights.dim(2);
  return ConvKernel<T>{std::move(weights), Tensor<T>(), 1, (k - 1) / 2};
}

template <typename T>
Tensor<T> conv_same(const Tensor<T>& x, const ConvKernel<T>& k) {
  return conv2d_forward(x, k).value;
}

// Backward of a bias-free same convolution: returns grad wrt input, adds the
// weight gradient into `grad_w`.
template <typename T>
Tensor<T> conv_same_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const ConvKernel<T>& k,
                             Tensor<T>& grad_w) {
  ConvCache<T> cache{input, grad_out.shape(), k.weights.shape(), k.stride, k.pad};
  ConvGrads<T> g = conv2d_backward(grad_out, cache, k);
  accumulate(grad_w, g.weights);
  return std::move(g.input);
}

template <typename T>
void add_channel_bias(Tensor<T>& a, const Tensor<T>& bias) {
  const std::size_t plane = a.dim(2) * a.dim(3);
  for (std::size_t n = 0; n < a.dim(0); ++n)
    for (std::size_t ch = 0; ch < a.dim(1); ++ch) {
      T* p = a.data() + (n * a.dim(1) + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias[ch];
    }
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& a) {
  Tensor<T> out({a.dim(1)});
  const std::size_t plane = a.dim(2) * a.dim(3);
  for (std::size_t n = 0; n < a.dim(0); ++n)
    for (std::size_t ch = 0; ch < a.dim(1); ++ch) {
      const T* p = a.data() + (n * a.dim(1) + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[ch] += p[i];
    }
  return out;
}

}  // namespace

template <typename T>
ConvGruParams<T> ConvGruParams<T>::zeros(std::size_t hidden_channels, std::size_t input_channels,
                                         std::size_t kernel) {
  if (kernel % 2 == 0) throw ShapeError("conv_gru: kernel size must be odd for same padding");
  ConvGruParams p;
  const Shape hh{hidden_channels, hidden_channels, kernel, kernel};
  const Shape hx{hidden_channels, input_channels, kernel, kernel};
  p.W_hz = p.W_hr = p.W_h = same_kernel(Tensor<T>(hh));
  p.W_xz = p.W_xr = p.W_x = same_kernel(Tensor<T>(hx));
  p.b_z = p.b_r = p.b = Tensor<T>({hidden_channels});
  return p;
}

template <typename T>
ConvGruParams<T> ConvGruParams<T>::random(std::size_t hidden_channels, std::size_t input_channels,
                                          std::size_t kernel, Rng& rng) {
  ConvGruParams p = zeros(hidden_channels, input_channels, kernel);
  auto draw = [&](ConvKernel<T>& k) {
    k.weights = fill_random<T>(k.weights.shape(), ScaledFanInDist{k.channels() * kernel * kernel}, rng);
  };
  draw(p.W_hz);
  draw(p.W_xz);
  draw(p.W_hr);
  draw(p.W_xr);
  draw(p.W_h);
  draw(p.W_x);
  return p;
}

template <typename T>
StepResult<T, ConvGruCache<T>> conv_gru_step(const Tensor<T>& x, const RecurrentState<T>& state,
                                             const ConvGruParams<T>& p) {
  const Tensor<T>& h = state.h;
  if (x.rank() != 4 || h.rank() != 4) throw ShapeError("conv_gru_step: x and h must be NCHW");
  if (x.dim(0) != h.dim(0) || x.dim(2) != h.dim(2) || x.dim(3) != h.dim(3)) {
    throw ShapeError("conv_gru_step: x " + shape_string(x.shape()) + " and h " + shape_string(h.shape()) +
                     " differ in batch or spatial extent");
  }
  if (h.dim(1) != p.hidden_channels() || x.dim(1) != p.input_channels()) {
    throw ShapeError("conv_gru_step: channel counts do not match the parameters");
  }
  ConvGruCache<T> c{x, h, Tensor<T>(), Tensor<T>(), Tensor<T>(), Tensor<T>()};
  c.z = conv_same(h, p.W_hz);
  accumulate(c.z, conv_same(x, p.W_xz));
  add_channel_bias(c.z, p.b_z);
  c.r = conv_same(h, p.W_hr);
  accumulate(c.r, conv_same(x, p.W_xr));
  add_channel_bias(c.r, p.b_r);
  c.rh = Tensor<T>(h.shape());
  for (std::size_t i = 0; i < h.size(); ++i) {
    c.z[i] = sigmoid_scalar(c.z[i]);
    c.r[i] = sigmoid_scalar(c.r[i]);
    c.rh[i] = c.r[i] * h[i];
  }
  c.candidate = conv_same(c.rh, p.W_h);
  accumulate(c.candidate, conv_same(x, p.W_x));
  add_channel_bias(c.candidate, p.b);
  Tensor<T> h_next(h.shape());
  for (std::size_t i = 0; i < h.size(); ++i) {
    c.candidate[i] = std::tanh(c.candidate[i]);
    h_next[i] = (T{1} - c.z[i]) * h[i] + c.z[i] * c.candidate[i];
  }
  check_finite(h_next, "conv_gru_step");
  RecurrentState<T> next{h_next, Tensor<T>(), state.step_index + 1};
  return {std::move(next), std::move(h_next), std::move(c)};
}

template <typename T>
CellGrads<T, ConvGruParams<T>> conv_gru_backward(const Tensor<T>& grad_h_next, const ConvGruCache<T>& c,
                                                 const ConvGruParams<T>& p, ConvGruParams<T>* into) {
  if (grad_h_next.shape() != c.h_prev.shape()) throw ShapeError("conv_gru_backward: grad_h_next shape mismatch");
  CellGrads<T, ConvGruParams<T>> g{Tensor<T>(), Tensor<T>(c.h_prev.shape()), Tensor<T>(), {}};
  ConvGruParams<T>& gp = into ? *into : (g.params = zeros_like(p));
  const std::size_t n = c.h_prev.size();
  Tensor<T> da_z(c.h_prev.shape()), da_r(c.h_prev.shape()), da_c(c.h_prev.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T gh = grad_h_next[i];
    const T z = c.z[i];
    const T cand = c.candidate[i];
    g.h_prev[i] = gh * (T{1} - z);
    da_z[i] = gh * (cand - c.h_prev[i]) * z * (T{1} - z);
    da_c[i] = gh * z * (T{1} - cand * cand);
  }
  accumulate(gp.b, channel_sum(da_c));
  Tensor<T> d_rh = conv_same_backward(da_c, c.rh, p.W_h, gp.W_h.weights);
  g.x = conv_same_backward(da_c, c.x, p.W_x, gp.W_x.weights);
  for (std::size_t i = 0; i < n; ++i) {
    const T r = c.r[i];
    da_r[i] = d_rh[i] * c.h_prev[i] * r * (T{1} - r);
    g.h_prev[i] += d_rh[i] * r;
  }
  accumulate(gp.b_r, channel_sum(da_r));
  accumulate(g.h_prev, conv_same_backward(da_r, c.h_prev, p.W_hr, gp.W_hr.weights));
  accumulate(g.x, conv_same_backward(da_r, c.x, p.W_xr, gp.W_xr.weights));
  accumulate(gp.b_z, channel_sum(da_z));
  accumulate(g.h_prev, conv_same_backward(da_z, c.h_prev, p.W_hz, gp.W_hz.weights));
  accumulate(g.x, conv_same_backward(da_z, c.x, p.W_xz, gp.W_xz.weights));
  return g;
}

// ---------------------------------------------------------------------------
// LSTM

template <typename T>
LstmParams<T> LstmParams<T>::zeros(std::size_t hidden, std::size_t input, CandidateActivation candidate) {
  LstmParams p;
  p.W_xi = p.W_xf = p.W_xo = p.W_xc = Tensor<T>({hidden, input});
  p.W_hi = p.W_hf = p.W_ho = p.W_hc = Tensor<T>({hidden, hidden});
  p.b_i = p.b_f = p.b_o = p.b_c = Tensor<T>({hidden});
  p.candidate = candidate;
  return p;
}

template <typename T>
LstmParams<T> LstmParams<T>::random(std::size_t hidden, std::size_t input, Rng& rng, CandidateActivation candidate) {
  LstmParams p = zeros(hidden, input, candidate);
  for (auto* w : {&p.W_xi, &p.W_xf, &p.W_xo, &p.W_xc}) *w = dense_weights<T>(hidden, input, rng);
  for (auto* w : {&p.W_hi, &p.W_hf, &p.W_ho, &p.W_hc}) *w = dense_weights<T>(hidden, hidden, rng);
  return p;
}

template <typename T>
StepResult<T, LstmCache<T>> lstm_step(const Tensor<T>& x, const RecurrentState<T>& state, const LstmParams<T>& p) {
  const std::size_t n = p.hidden_size();
  require_vector(x, p.input_size(), "x", "lstm_step");
  require_vector(state.h, n, "h", "lstm_step");
  require_vector(state.c, n, "c", "lstm_step");
  const Tensor<T>& h = state.h;
  LstmCache<T> c{x,
                 h,
                 state.c,
                 affine2(p.W_xi, x, p.W_hi, h, p.b_i),
                 affine2(p.W_xf, x, p.W_hf, h, p.b_f),
                 affine2(p.W_xo, x, p.W_ho, h, p.b_o),
                 affine2(p.W_xc, x, p.W_hc, h, p.b_c),
                 Tensor<T>({n}),
                 Tensor<T>({n})};
  Tensor<T> h_next({n});
  for (std::size_t k = 0; k < n; ++k) {
    c.i[k] = sigmoid_scalar(c.i[k]);
    c.f[k] = sigmoid_scalar(c.f[k]);
    c.o[k] = sigmoid_scalar(c.o[k]);
    c.g[k] = p.candidate == CandidateActivation::sigmoid ? sigmoid_scalar(c.g[k]) : std::tanh(c.g[k]);
    c.c[k] = c.f[k] * state.c[k] + c.i[k] * c.g[k];
    c.tanh_c[k] = std::tanh(c.c[k]);
    h_next[k] = c.o[k] * c.tanh_c[k];
  }
  check_finite(h_next, "lstm_step");
  check_finite(c.c, "lstm_step");
  RecurrentState<T> next{h_next, c.c, state.step_index + 1};
  return {std::move(next), std::move(h_next), std::move(c)};
}

template <typename T>
CellGrads<T, LstmParams<T>> lstm_backward(const Tensor<T>& grad_h_next, const Tensor<T>& grad_c_next,
                                          const LstmCache<T>& c, const LstmParams<T>& p, LstmParams<T>* into) {
  const std::size_t n = p.hidden_size();
  require_vector(grad_h_next, n, "grad_h_next", "lstm_backward");
  if (!grad_c_next.empty()) require_vector(grad_c_next, n, "grad_c_next", "lstm_backward");
  if (c.h_prev.size() != n || c.x.size() != p.input_size()) throw ShapeError("lstm_backward: cache mismatch");

  CellGrads<T, LstmParams<T>> g{Tensor<T>(c.x.shape()), Tensor<T>({n}), Tensor<T>({n}), {}};
  LstmParams<T>& gp = into ? *into : (g.params = LstmParams<T>::zeros(n, p.input_size(), p.candidate));
  Tensor<T> da_i({n}), da_f({n}), da_o({n}), da_g({n});
  for (std::size_t k = 0; k < n; ++k) {
    const T gh = grad_h_next[k];
    const T dc = (grad_c_next.empty() ? T{0} : grad_c_next[k]) + gh * c.o[k] * (T{1} - c.tanh_c[k] * c.tanh_c[k]);
    const T d_o = gh * c.tanh_c[k];
    const T d_f = dc * c.c_prev[k];
    const T d_i = dc * c.g[k];
    const T d_g = dc * c.i[k];
    g.c_prev[k] = dc * c.f[k];
    da_i[k] = d_i * c.i[k] * (T{1} - c.i[k]);
    da_f[k] = d_f * c.f[k] * (T{1} - c.f[k]);
    da_o[k] = d_o * c.o[k] * (T{1} - c.o[k]);
    da_g[k] = p.candidate == CandidateActivation::sigmoid ? d_g * c.g[k] * (T{1} - c.g[k])
                                                          : d_g * (T{1} - c.g[k] * c.g[k]);
  }
  struct Gate {
    const Tensor<T>& da;
    const Tensor<T>& wx;
    const Tensor<T>& wh;
    Tensor<T>& gwx;
    Tensor<T>& gwh;
    Tensor<T>& gb;
  };
  const Gate gates[] = {
      {da_i, p.W_xi, p.W_hi, gp.W_xi, gp.W_hi, gp.b_i},
      {da_f, p.W_xf, p.W_hf, gp.W_xf, gp.W_hf, gp.b_f},
      {da_o, p.W_xo, p.W_ho, gp.W_xo, gp.W_ho, gp.b_o},
      {da_g, p.W_xc, p.W_hc, gp.W_xc, gp.W_hc, gp.b_c},
  };
  for (const Gate& gate : gates) {
    add_outer(gate.gwx, gate.da, c.x);
    add_outer(gate.gwh, gate.da, c.h_prev);
    accumulate(gate.gb, gate.da);
    add_transposed(g.x, gate.wx, gate.da);
    add_transposed(g.h_prev, gate.wh, gate.da);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Vanilla RNN

template <typename T>
RnnParams<T> RnnParams<T>::zeros(std::size_t hidden, std::size_t input, std::size_t output) {
  return RnnParams{Tensor<T>({hidden, hidden}), Tensor<T>({hidden, input}), Tensor<T>({output, hidden})};
}

template <typename T>
RnnParams<T> RnnParams<T>::random(std::size_t hidden, std::size_t input, std::size_t output, Rng& rng) {
  RnnParams p;
  p.theta = dense_weights<T>(hidden, hidden, rng);
  p.theta_x = dense_weights<T>(hidden, input, rng);
  p.theta_y = dense_weights<T>(output, hidden, rng);
  return p;
}

template <typename T>
StepResult<T, RnnCache<T>> rnn_step(const Tensor<T>& x, const RecurrentState<T>& state, const RnnParams<T>& p) {
  const std::size_t n = p.hidden_size();
  require_vector(x, p.input_size(), "x", "rnn_step");
  require_vector(state.h, n, "h", "rnn_step");
  if (p.theta_y.dim(1) != n) throw ShapeError("rnn_step: theta_y columns must equal the hidden size");
  RnnCache<T> c{x, Tensor<T>({n}), Tensor<T>({n})};
  for (std::size_t k = 0; k < n; ++k) c.phi_h_prev[k] = std::tanh(state.h[k]);
  Tensor<T> h_next({n});
  as_vector(h_next).noalias() = mat(p.theta) * as_vector(c.phi_h_prev) + mat(p.theta_x) * as_vector(x);
  for (std::size_t k = 0; k < n; ++k) c.phi_h[k] = std::tanh(h_next[k]);
  Tensor<T> y({p.output_size()});
  as_vector(y).noalias() = mat(p.theta_y) * as_vector(c.phi_h);
  check_finite(h_next, "rnn_step");
  check_finite(y, "rnn_step");
  RecurrentState<T> next{std::move(h_next), Tensor<T>(), state.step_index + 1};
  return {std::move(next), std::move(y), std::move(c)};
}

template <typename T>
CellGrads<T, RnnParams<T>> rnn_backward(const Tensor<T>& grad_h_next, const Tensor<T>& grad_y, const RnnCache<T>& c,
                                        const RnnParams<T>& p, RnnParams<T>* into) {
  const std::size_t n = p.hidden_size();
  require_vector(grad_h_next, n, "grad_h_next", "rnn_backward");
  if (!grad_y.empty()) require_vector(grad_y, p.output_size(), "grad_y", "rnn_backward");
  if (c.phi_h.size() != n || c.x.size() != p.input_size()) throw ShapeError("rnn_backward: cache mismatch");

  CellGrads<T, RnnParams<T>> g{Tensor<T>(c.x.shape()), Tensor<T>({n}), Tensor<T>(), {}};
  RnnParams<T>& gp = into ? *into : (g.params = RnnParams<T>::zeros(n, p.input_size(), p.output_size()));
  Tensor<T> dh = grad_h_next;
  if (!grad_y.empty()) {
    add_outer(gp.theta_y, grad_y, c.phi_h);
    Tensor<T> d_phi({n});
    add_transposed(d_phi, p.theta_y, grad_y);
    for (std::size_t k = 0; k < n; ++k) dh[k] += d_phi[k] * (T{1} - c.phi_h[k] * c.phi_h[k]);
  }
  add_outer(gp.theta, dh, c.phi_h_prev);
  add_outer(gp.theta_x, dh, c.x);
  add_transposed(g.x, p.theta_x, dh);
  Tensor<T> d_phi_prev({n});
  add_transposed(d_phi_prev, p.theta, dh);
  for (std::size_t k = 0; k < n; ++k) g.h_prev[k] = d_phi_prev[k] * (T{1} - c.phi_h_prev[k] * c.phi_h_prev[k]);
  return g;
}

#define RFCN_INSTANTIATE(T)                                                                              \
  template struct DenseGruParams<T>;                                                                     \
  template struct ConvGruParams<T>;                                                                      \
  template struct LstmParams<T>;                                                                         \
  template struct RnnParams<T>;                                                                          \
  template RecurrentState<T> zero_state(const Shape&, bool);                                             \
  template StepResult<T, GruCache<T>> gru_step(const Tensor<T>&, const RecurrentState<T>&,               \
                                               const DenseGruParams<T>&);                                \
  template CellGrads<T, DenseGruParams<T>> gru_backward(const Tensor<T>&, const GruCache<T>&,            \
                                                        const DenseGruParams<T>&, DenseGruParams<T>*);   \
  template StepResult<T, ConvGruCache<T>> conv_gru_step(const Tensor<T>&, const RecurrentState<T>&,      \
                                                        const ConvGruParams<T>&);                        \
  template CellGrads<T, ConvGruParams<T>> conv_gru_backward(const Tensor<T>&, const ConvGruCache<T>&,    \
                                                            const ConvGruParams<T>&, ConvGruParams<T>*); \
  template StepResult<T, LstmCache<T>> lstm_step(const Tensor<T>&, const RecurrentState<T>&,             \
                                                 const LstmParams<T>&);                                  \
  template CellGrads<T, LstmParams<T>> lstm_backward(const Tensor<T>&, const Tensor<T>&,                 \
                                                     const LstmCache<T>&, const LstmParams<T>&,          \
                                                     LstmParams<T>*);                                    \
  template StepResult<T, RnnCache<T>> rnn_step(const Tensor<T>&, const RecurrentState<T>&,               \
                                               const RnnParams<T>&);                                     \
  template CellGrads<T, RnnParams<T>> rnn_backward(const Tensor<T>&, const Tensor<T>&, const RnnCache<T>&, \
                                                   const RnnParams<T>&, RnnParams<T>*);

RFCN_INSTANTIATE(float)
RFCN_INSTANTIATE(double)

#undef RFCN_INSTANTIATE

}  // namespace rfcn
