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
#include <string_view>
#include <vector>

#include "rfcn/layers.hpp"
#include "rfcn/rng.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn {

enum class CellKind { none, rnn, lstm, gru, conv_gru };
enum class CandidateActivation { sigmoid, tanh };

std::string_view cell_kind_name(CellKind kind);
CellKind parse_cell_kind(std::string_view name);

/// Hidden state carried across the frames of a window. `c` is only used by
/// the LSTM.
template <typename T>
struct RecurrentState {
  Tensor<T> h;
  Tensor<T> c;
  std::size_t step_index = 0;
};

/// Total scalar count of a parameter struct.
template <typename Params>
std::size_t parameter_count(const Params& p) {
  std::size_t n = 0;
  p.visit([&](std::string_view, const auto& t) { n += t.size(); });
  return n;
}

/// Same structure as `p`, every tensor zero.
template <typename Params>
Params zeros_like(const Params& p) {
  Params z = p;
  z.visit([](std::string_view, auto& t) { t.fill(0); });
  return z;
}

/// Elementwise `into += from` over two parameter structs of equal layout.
template <typename Params>
void accumulate_params(Params& into, const Params& from) {
  std::vector<const Tensor<typename Params::value_type>*> src;
  from.visit([&](std::string_view, const auto& t) { src.push_back(&t); });
  std::size_t i = 0;
  into.visit([&](std::string_view, auto& t) { accumulate(t, *src[i++]); });
}

// ---------------------------------------------------------------------------
// Dense GRU
//   z  = sigmoid(W_hz h + W_xz x + b_z)
//   r  = sigmoid(W_hr h + W_xr x + b_r)
//   h~ = tanh(W_h (r * h) + W_x x + b)
//   h' = (1 - z) * h + z * h~

template <typename T>
struct DenseGruParams {
  using value_type = T;

  Tensor<T> W_hz, W_xz, b_z;
  Tensor<T> W_hr, W_xr, b_r;
  Tensor<T> W_h, W_x, b;

  std::size_t hidden_size() const { return W_hz.dim(0); }
  std::size_t input_size() const { return W_xz.dim(1); }

  static DenseGruParams zeros(std::size_t hidden, std::size_t input);
  static DenseGruParams random(std::size_t hidden, std::size_t input, Rng& rng);

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("W_hz", W_hz); fn("W_xz", W_xz); fn("b_z", b_z);
    fn("W_hr", W_hr); fn("W_xr", W_xr); fn("b_r", b_r);
    fn("W_h", W_h); fn("W_x", W_x); fn("b", b);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fn("W_hz", W_hz); fn("W_xz", W_xz); fn("b_z", b_z);
    fn("W_hr", W_hr); fn("W_xr", W_xr); fn("b_r", b_r);
    fn("W_h", W_h); fn("W_x", W_x); fn("b", b);
  }
};

template <typename T>
struct GruCache {
  Tensor<T> x, h_prev, z, r, rh, candidate;
};

// ---------------------------------------------------------------------------
// Convolutional GRU: the dense GRU with every weight product replaced by a
// stride-1 "same" convolution. Kernels carry no bias of their own; the three
// gate biases are per channel.

template <typename T>
struct ConvGruParams {
  using value_type = T;

  ConvKernel<T> W_hz, W_xz;
  Tensor<T> b_z;
  ConvKernel<T> W_hr, W_xr;
  Tensor<T> b_r;
  ConvKernel<T> W_h, W_x;
  Tensor<T> b;

  std::size_t hidden_channels() const { return W_hz.filters(); }
  std::size_t input_channels() const { return W_xz.channels(); }
  std::size_t kernel_size() const { return W_hz.kernel_h(); }

  static ConvGruParams zeros(std::size_t hidden_channels, std::size_t input_channels, std::size_t kernel);
  static ConvGruParams random(std::size_t hidden_channels, std::size_t input_channels, std::size_t kernel, Rng& rng);

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("W_hz", W_hz.weights); fn("W_xz", W_xz.weights); fn("b_z", b_z);
    fn("W_hr", W_hr.weights); fn("W_xr", W_xr.weights); fn("b_r", b_r);
    fn("W_h", W_h.weights); fn("W_x", W_x.weights); fn("b", b);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fn("W_hz", W_hz.weights); fn("W_xz", W_xz.weights); fn("b_z", b_z);
    fn("W_hr", W_hr.weights); fn("W_xr", W_xr.weights); fn("b_r", b_r);
    fn("W_h", W_h.weights); fn("W_x", W_x.weights); fn("b", b);
  }
};

template <typename T>
struct ConvGruCache {
  Tensor<T> x, h_prev, z, r, rh, candidate;
};

// ---------------------------------------------------------------------------
// LSTM
//   i = sigmoid(W_xi x + W_hi h + b_i), f, o likewise
//   g = act(W_xc x + W_hc h + b_c)      act is sigmoid by default
//   c' = f * c + i * g
//   h' = o * tanh(c')

template <typename T>
struct LstmParams {
  using value_type = T;

  Tensor<T> W_xi, W_hi, b_i;
  Tensor<T> W_xf, W_hf, b_f;
  Tensor<T> W_xo, W_ho, b_o;
  Tensor<T> W_xc, W_hc, b_c;
  CandidateActivation candidate = CandidateActivation::sigmoid;

  std::size_t hidden_size() const { return W_hi.dim(0); }
  std::size_t input_size() const { return W_xi.dim(1); }

  static LstmParams zeros(std::size_t hidden, std::size_t input,
                          CandidateActivation candidate = CandidateActivation::sigmoid);
  static LstmParams random(std::size_t hidden, std::size_t input, Rng& rng,
                           CandidateActivation candidate = CandidateActivation::sigmoid);

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("W_xi", W_xi); fn("W_hi", W_hi); fn("b_i", b_i);
    fn("W_xf", W_xf); fn("W_hf", W_hf); fn("b_f", b_f);
    fn("W_xo", W_xo); fn("W_ho", W_ho); fn("b_o", b_o);
    fn("W_xc", W_xc); fn("W_hc", W_hc); fn("b_c", b_c);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fn("W_xi", W_xi); fn("W_hi", W_hi); fn("b_i", b_i);
    fn("W_xf", W_xf); fn("W_hf", W_hf); fn("b_f", b_f);
    fn("W_xo", W_xo); fn("W_ho", W_ho); fn("b_o", b_o);
    fn("W_xc", W_xc); fn("W_hc", W_hc); fn("b_c", b_c);
  }
};

template <typename T>
struct LstmCache {
  Tensor<T> x, h_prev, c_prev, i, f, o, g, c, tanh_c;
};

// ---------------------------------------------------------------------------
// Vanilla RNN with phi = tanh
//   h' = theta phi(h) + theta_x x
//   y  = theta_y phi(h')

template <typename T>
struct RnnParams {
  using value_type = T;

  Tensor<T> theta, theta_x, theta_y;

  std::size_t hidden_size() const { return theta.dim(0); }
  std::size_t input_size() const { return theta_x.dim(1); }
  std::size_t output_size() const { return theta_y.dim(0); }

  static RnnParams zeros(std::size_t hidden, std::size_t input, std::size_t output);
  static RnnParams random(std::size_t hidden, std::size_t input, std::size_t output, Rng& rng);

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("theta", theta); fn("theta_x", theta_x); fn("theta_y", theta_y);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fn("theta", theta); fn("theta_x", theta_x); fn("theta_y", theta_y);
  }
};

template <typename T>
struct RnnCache {
  Tensor<T> x, phi_h_prev, phi_h;
};

// ---------------------------------------------------------------------------

template <typename T, typename Cache>
struct StepResult {
  RecurrentState<T> state;
  Tensor<T> output;  // h' for the gated cells, y for the RNN
  Cache cache;
};

template <typename T, typename Params>
struct CellGrads {
  Tensor<T> x;
  Tensor<T> h_prev;
  Tensor<T> c_prev;  // LSTM only
  Params params;
};

/// Zero state matching a cell's hidden shape (h and, for the LSTM, c).
template <typename T>
RecurrentState<T> zero_state(const Shape& hidden_shape, bool with_cell = false);

// Every *_backward adds parameter gradients into `*into` when it is given
// (CellGrads::params is then left empty); otherwise into a fresh zeroed
// CellGrads::params.

template <typename T>
StepResult<T, GruCache<T>> gru_step(const Tensor<T>& x, const RecurrentState<T>& state, const DenseGruParams<T>& p);
template <typename T>
CellGrads<T, DenseGruParams<T>> gru_backward(const Tensor<T>& grad_h_next, const GruCache<T>& cache,
                                             const DenseGruParams<T>& p, DenseGruParams<T>* into = nullptr);

template <typename T>
StepResult<T, ConvGruCache<T>> conv_gru_step(const Tensor<T>& x, const RecurrentState<T>& state,
                                             const ConvGruParams<T>& p);
template <typename T>
CellGrads<T, ConvGruParams<T>> conv_gru_backward(const Tensor<T>& grad_h_next, const ConvGruCache<T>& cache,
                                                 const ConvGruParams<T>& p, ConvGruParams<T>* into = nullptr);

template <typename T>
StepResult<T, LstmCache<T>> lstm_step(const Tensor<T>& x, const RecurrentState<T>& state, const LstmParams<T>& p);
/// `grad_c_next` may be empty (treated as zero).
template <typename T>
CellGrads<T, LstmParams<T>> lstm_backward(const Tensor<T>& grad_h_next, const Tensor<T>& grad_c_next,
                                          const LstmCache<T>& cache, const LstmParams<T>& p,
                                          LstmParams<T>* into = nullptr);

template <typename T>
StepResult<T, RnnCache<T>> rnn_step(const Tensor<T>& x, const RecurrentState<T>& state, const RnnParams<T>& p);
/// `grad_y` may be empty (output unused at this step).
template <typename T>
CellGrads<T, RnnParams<T>> rnn_backward(const Tensor<T>& grad_h_next, const Tensor<T>& grad_y,
                                        const RnnCache<T>& cache, const RnnParams<T>& p,
                                        RnnParams<T>* into = nullptr);

}  // namespace rfcn
