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
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rfcn/layers.hpp"
#include "rfcn/recurrent.hpp"
#include "rfcn/rng.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn {

// ---------------------------------------------------------------------------
// Architecture description

enum class LayerKind { conv, deconv, pool, relu, dense, flatten, unflatten, conv1x1, crop };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/**
 * One feed-forward layer. Field meaning by kind:
 *   conv, conv1x1  F kernel, S stride, P padding, D output channels
 *   deconv         F kernel, S stride, P cropping, D output channels
 *   pool           F window, S stride
 *   dense          D output features (input must be a vector)
 *   unflatten      shape = {C, H, W}
 *   crop           shape = {H, W}, centred
 * D = 0 keeps the incoming channel count.
 */
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t filter = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t depth = 0;
  Shape shape;
  bool bias = true;
  bool bilinear_init = true;  // deconv only

  static LayerSpec conv(std::size_t f, std::size_t d, std::size_t s = 1, std::size_t p = 0);
  static LayerSpec conv1x1(std::size_t d);
  static LayerSpec deconv(std::size_t f, std::size_t s, std::size_t d = 0, std::size_t p = 0);
  /// Stride defaults to the window size.
  static LayerSpec pool(std::size_t f, std::size_t s = 0);
  static LayerSpec relu();
  static LayerSpec dense(std::size_t d);
  static LayerSpec flatten();
  static LayerSpec unflatten(Shape chw);
  static LayerSpec crop(std::size_t h, std::size_t w);

  bool has_params() const;
  bool operator==(const LayerSpec&) const = default;
};

/// The single recurrent node. `hidden` (dense cells) and `channels`
/// (conv_gru) default to the size of the incoming feature when 0.
struct RecurrentSpec {
  CellKind cell = CellKind::none;
  std::size_t hidden = 0;
  std::size_t channels = 0;
  std::size_t kernel = 3;
  CandidateActivation candidate = CandidateActivation::sigmoid;

  bool operator==(const RecurrentSpec&) const = default;
};

/// Layer reference "pre.<i>" or "post.<i>".
struct LayerRef {
  bool post = false;
  std::size_t index = 0;

  static LayerRef parse(std::string_view text);
  std::string str() const;
  bool operator==(const LayerRef&) const = default;
};

/// Score the source activation with a 1x1 conv to num_classes channels,
/// centre-crop it to the target extent, and add it to the target output.
/// Targets are post-recurrent layers; a pre-recurrent source contributes its
/// last-frame activation.
struct SkipLink {
  LayerRef from;
  LayerRef to;

  bool operator==(const SkipLink&) const = default;
};

struct ArchitectureConfig {
  std::string name;
  Shape input_shape;  // {C, H, W}
  std::size_t num_classes = 1;
  std::size_t window = 3;
  std::vector<LayerSpec> pre_recurrent;
  RecurrentSpec recurrent;
  std::vector<LayerSpec> post_recurrent;
  std::vector<SkipLink> skip_links;

  bool operator==(const ArchitectureConfig&) const = default;
};

/// Canonical JSON (sorted keys, no insignificant whitespace).
std::string config_to_json(const ArchitectureConfig& cfg, int indent = -1);
ArchitectureConfig config_from_json(std::string_view text);
ArchitectureConfig load_config_file(const std::string& path);

std::vector<std::string> preset_names();
/// Throws ConfigError for unknown names.
ArchitectureConfig preset(std::string_view name);

/// Activation shapes without the batch axis: {C, H, W} or {n}.
struct ShapeReport {
  std::vector<Shape> pre;   // output of each pre-recurrent layer
  Shape recurrent_input;
  Shape recurrent_output;
  std::vector<Shape> post;  // output of each post-recurrent layer
  Shape output;             // {num_classes, H, W}

  bool output_matches_input(const ArchitectureConfig& cfg) const;
  std::string describe(const ArchitectureConfig& cfg) const;
};

/// Copy of `cfg` with conv, conv1x1 and deconv depths (and conv_gru
/// channels) above `max_depth` cut down to it; used for fast audits. Dense
/// and class-score layers keep their sizes when they are already small.
ArchitectureConfig tiny_config(const ArchitectureConfig& cfg, std::size_t max_depth = 4);

/// Propagates shapes through every layer. Throws ShapeError or ConfigError
/// naming the first offending layer.
ShapeReport shape_check(const ArchitectureConfig& cfg);

/// Canonical parameter names and shapes enumerated from the config alone.
std::map<std::string, Shape> parameter_shapes(const ArchitectureConfig& cfg);

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
using CellParams = std::variant<std::monostate, RnnParams<T>, LstmParams<T>, DenseGruParams<T>, ConvGruParams<T>>;

/// Conv, deconv and dense layers keep their tensors in a ConvKernel (dense:
/// weights (D, n), bias (D)). `prefix` is empty for parameter-free layers.
template <typename T>
struct LayerParams {
  std::string prefix;
  ConvKernel<T> kernel;
};

template <typename T>
struct ModelParams {
  using value_type = T;

  std::vector<LayerParams<T>> pre;
  CellParams<T> cell;
  std::vector<LayerParams<T>> post;
  std::vector<LayerParams<T>> skips;

  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }

 private:
  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn& fn) {
    auto layers = [&](auto& list) {
      for (auto& l : list) {
        if (l.prefix.empty()) continue;
        l.kernel.visit([&](std::string_view name, auto& t) { fn(l.prefix + "." + std::string(name), t); });
      }
    };
    layers(self.pre);
    std::visit(
        [&](auto& cell) {
          using C = std::decay_t<decltype(cell)>;
          if constexpr (!std::is_same_v<C, std::monostate>) {
            const std::string prefix = std::string("rec.") + std::string(cell_prefix<C>());
            cell.visit([&](std::string_view name, auto& t) { fn(prefix + "." + std::string(name), t); });
          }
        },
        self.cell);
    layers(self.post);
    layers(self.skips);
  }

  template <typename C>
  static constexpr std::string_view cell_prefix() {
    if constexpr (std::is_same_v<C, RnnParams<T>>) return "rnn";
    else if constexpr (std::is_same_v<C, LstmParams<T>>) return "lstm";
    else if constexpr (std::is_same_v<C, DenseGruParams<T>>) return "gru";
    else return "conv_gru";
  }
};

template <typename T>
struct Model {
  ArchitectureConfig config;
  ModelParams<T> params;
};

/// Fresh parameters: scaled fan-in uniform weights with zero biases; deconv
/// kernels bilinear unless disabled; skip score convs zero.
template <typename T>
Model<T> build_model(const ArchitectureConfig& cfg, Rng& rng);
/// Parameters laid out for `cfg`, every tensor zero.
template <typename T>
ModelParams<T> allocate_params(const ArchitectureConfig& cfg);

/// Name -> tensor pointer view over a parameter struct, in visit order.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(ModelParams<T>& p);
template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors(const ModelParams<T>& p);

template <typename To, typename From>
Model<To> model_cast(const Model<From>& m);

// ---------------------------------------------------------------------------
// Execution

template <typename T>
struct LayerCache {
  ConvCache<T> conv;
  PoolCache pool;
  Tensor<T> input;
  Shape input_shape;
};

template <typename T>
using CellCache = std::variant<std::monostate, RnnCache<T>, LstmCache<T>, GruCache<T>, ConvGruCache<T>>;

template <typename T>
struct SkipCache {
  ConvCache<T> conv;
  Shape scored_shape;
};

template <typename T>
struct WindowCache {
  std::size_t frames = 0;
  std::size_t first_frame = 0;                 // frames before this skipped the trunk
  std::vector<std::vector<LayerCache<T>>> pre;  // [frame - first_frame][layer]
  std::vector<CellCache<T>> steps;
  std::vector<LayerCache<T>> post;
  std::vector<SkipCache<T>> skips;
  Shape cell_input_shape;
};

template <typename T>
struct WindowOutput {
  Tensor<T> logits;  // {num_classes, H, W}
  WindowCache<T> cache;
  RecurrentState<T> state;  // cell state after the last frame
};

/**
 * Runs a window of frames ({C, H, W} each): the pre-recurrent trunk on every
 * frame, the cell over the per-frame features, and the post-recurrent layers
 * on the final cell output. The cell starts from `initial` or from zeros.
 * With cell kind none only the last frame reaches the output.
 */
template <typename T>
WindowOutput<T> forward_window(const Model<T>& m, const std::vector<Tensor<T>>& frames,
                               const RecurrentState<T>* initial = nullptr);

/// Gradients of every named parameter, accumulated over the window. With
/// `through_trunk` false the pre-recurrent layers are not back-propagated and
/// their gradients stay zero.
template <typename T>
ModelParams<T> backward_window(const Tensor<T>& grad_logits, const WindowCache<T>& cache, const Model<T>& m,
                               bool through_trunk = true);

/// As backward_window, but adds into `grads`, which must have the layout of
/// `m.params`. Lets a caller reuse one buffer across a mini-batch.
template <typename T>
void backward_window_into(const Tensor<T>& grad_logits, const WindowCache<T>& cache, const Model<T>& m,
                          ModelParams<T>& grads, bool through_trunk = true);

/// Online mode: one cell step per pushed frame with the state carried over.
template <typename T>
class StreamRunner {
 public:
  explicit StreamRunner(const Model<T>& m);
  Tensor<T> push(const Tensor<T>& frame);
  std::size_t frames_seen() const { return seen_; }

 private:
  const Model<T>& model_;
  RecurrentState<T> state_;
  std::size_t seen_ = 0;
};

}  // namespace rfcn
