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

#include "rfcn/model.hpp"

#include <map>

namespace rfcn {

namespace {

template <typename T>
LayerParams<T> allocate_layer(const LayerSpec& l, const Shape& in, const Shape& out, const std::string& prefix) {
  LayerParams<T> p;
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::conv1x1:
      p.prefix = prefix + "conv";
      p.kernel.weights = Tensor<T>({out[0], in[0], l.filter, l.filter});
      break;
    case LayerKind::deconv:
      p.prefix = prefix + "deconv";
      p.kernel.weights = Tensor<T>({in[0], out[0], l.filter, l.filter});
      break;
    case LayerKind::dense:
      p.prefix = prefix + "dense";
      p.kernel.weights = Tensor<T>({out[0], in[0]});
      break;
    default:
      return p;
  }
  if (l.bias) p.kernel.bias = Tensor<T>({out[0]});
  p.kernel.stride = l.stride;
  p.kernel.pad = l.pad;
  return p;
}

template <typename T>
void allocate_layers(const std::vector<LayerSpec>& specs, const Shape& first_in, const std::vector<Shape>& outs,
                     const std::string& section, std::vector<LayerParams<T>>& dst) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    dst.push_back(allocate_layer<T>(specs[i], i == 0 ? first_in : outs[i - 1], outs[i],
                                    section + "." + std::to_string(i) + "."));
  }
}

template <typename T>
void randomize_layer(const LayerSpec& l, LayerParams<T>& p, Rng& rng) {
  Tensor<T>& w = p.kernel.weights;
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::conv1x1:
      w = fill_random<T>(w.shape(), ScaledFanInDist{w.dim(1) * w.dim(2) * w.dim(3)}, rng);
      break;
    case LayerKind::deconv:
      w = l.bilinear_init ? bilinear_kernel<T>(w.dim(0), w.dim(1), w.dim(2))
                          : fill_random<T>(w.shape(), ScaledFanInDist{w.dim(0) * w.dim(2) * w.dim(3)}, rng);
      break;
    case LayerKind::dense:
      w = fill_random<T>(w.shape(), ScaledFanInDist{w.dim(1)}, rng);
      break;
    default:
      break;
  }
}

}  // namespace

template <typename T>
ModelParams<T> allocate_params(const ArchitectureConfig& cfg) {
  const ShapeReport r = shape_check(cfg);
  ModelParams<T> p;
  allocate_layers<T>(cfg.pre_recurrent, cfg.input_shape, r.pre, "pre", p.pre);
  allocate_layers<T>(cfg.post_recurrent, r.recurrent_output, r.post, "post", p.post);
  const std::size_t in = r.recurrent_input[0], out = r.recurrent_output[0];
  switch (cfg.recurrent.cell) {
    case CellKind::none: break;
    case CellKind::rnn: p.cell = RnnParams<T>::zeros(out, in, out); break;
    case CellKind::lstm: p.cell = LstmParams<T>::zeros(out, in, cfg.recurrent.candidate); break;
    case CellKind::gru: p.cell = DenseGruParams<T>::zeros(out, in); break;
    case CellKind::conv_gru: p.cell = ConvGruParams<T>::zeros(out, in, cfg.recurrent.kernel); break;
  }
  for (std::size_t k = 0; k < cfg.skip_links.size(); ++k) {
    const LayerRef& from = cfg.skip_links[k].from;
    const Shape& src = from.post ? r.post[from.index] : r.pre[from.index];
    LayerParams<T> s;
    s.prefix = "skip." + std::to_string(k) + ".conv";
    s.kernel.weights = Tensor<T>({cfg.num_classes, src[0], 1, 1});
    s.kernel.bias = Tensor<T>({cfg.num_classes});
    p.skips.push_back(std::move(s));
  }
  return p;
}

template <typename T>
Model<T> build_model(const ArchitectureConfig& cfg, Rng& rng) {
  Model<T> m{cfg, allocate_params<T>(cfg)};
  for (std::size_t i = 0; i < cfg.pre_recurrent.size(); ++i) randomize_layer(cfg.pre_recurrent[i], m.params.pre[i], rng);
  std::visit(
      [&](auto& cell) {
        using C = std::decay_t<decltype(cell)>;
        if constexpr (std::is_same_v<C, RnnParams<T>>) {
          cell = RnnParams<T>::random(cell.hidden_size(), cell.input_size(), cell.output_size(), rng);
        } else if constexpr (std::is_same_v<C, LstmParams<T>>) {
          cell = LstmParams<T>::random(cell.hidden_size(), cell.input_size(), rng, cell.candidate);
        } else if constexpr (std::is_same_v<C, DenseGruParams<T>>) {
          cell = DenseGruParams<T>::random(cell.hidden_size(), cell.input_size(), rng);
        } else if constexpr (std::is_same_v<C, ConvGruParams<T>>) {
          cell = ConvGruParams<T>::random(cell.hidden_channels(), cell.input_channels(), cell.kernel_size(), rng);
        }
      },
      m.params.cell);
  for (std::size_t i = 0; i < cfg.post_recurrent.size(); ++i)
    randomize_layer(cfg.post_recurrent[i], m.params.post[i], rng);
  return m;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(ModelParams<T>& p) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  p.visit([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors(const ModelParams<T>& p) {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  p.visit([&](const std::string& name, const Tensor<T>& t) { out.emplace_back(name, &t); });
  return out;
}

template <typename To, typename From>
Model<To> model_cast(const Model<From>& m) {
  Model<To> out{m.config, allocate_params<To>(m.config)};
  auto dst = named_tensors(out.params);
  const auto src = named_tensors(m.params);
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].second = tensor_cast<To>(*src[i].second);
  return out;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

template <typename T>
Tensor<T> layer_forward(const LayerSpec& l, const LayerParams<T>& p, const Tensor<T>& x, LayerCache<T>* cache) {
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::conv1x1: {
      auto out = conv2d_forward(x, p.kernel);
      if (cache) cache->conv = std::move(out.cache);
      return std::move(out.value);
    }
    case LayerKind::deconv: {
      auto out = deconv2d_forward(x, p.kernel);
      if (cache) cache->conv = std::move(out.cache);
      return std::move(out.value);
    }
    case LayerKind::pool: {
      auto out = maxpool2d_forward(x, l.filter, l.stride);
      if (cache) cache->pool = std::move(out.cache);
      return std::move(out.value);
    }
    case LayerKind::relu:
      if (cache) cache->input = x;
      return relu(x);
    case LayerKind::dense:
      if (cache) cache->input = x;
      return dense_forward(x, p.kernel.weights, p.kernel.bias);
    case LayerKind::flatten:
      if (cache) cache->input_shape = x.shape();
      return flatten(x);
    case LayerKind::unflatten:
      if (cache) cache->input_shape = x.shape();
      return unflatten(x, Shape{1, l.shape[0], l.shape[1], l.shape[2]});
    case LayerKind::crop:
      if (cache) cache->input_shape = x.shape();
      return crop2d(x, l.shape[0], l.shape[1]);
  }
  return x;
}

template <typename T>
void accumulate_kernel(LayerParams<T>& grad, const Tensor<T>& dw, const Tensor<T>& db) {
  accumulate(grad.kernel.weights, dw);
  if (!grad.kernel.bias.empty()) accumulate(grad.kernel.bias, db);
}

template <typename T>
Tensor<T> layer_backward(const LayerSpec& l, const LayerParams<T>& p, const Tensor<T>& g, const LayerCache<T>& cache,
                         LayerParams<T>& grad) {
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::conv1x1: {
      auto cg = conv2d_backward(g, cache.conv, p.kernel);
      accumulate_kernel(grad, cg.weights, cg.bias);
      return std::move(cg.input);
    }
    case LayerKind::deconv: {
      auto cg = deconv2d_backward(g, cache.conv, p.kernel);
      accumulate_kernel(grad, cg.weights, cg.bias);
      return std::move(cg.input);
    }
    case LayerKind::pool:
      return maxpool2d_backward(g, cache.pool);
    case LayerKind::relu:
      return relu_backward(g, cache.input);
    case LayerKind::dense: {
      auto dg = dense_backward(g, cache.input, p.kernel.weights);
      accumulate_kernel(grad, dg.weights, dg.bias);
      return std::move(dg.input);
    }
    case LayerKind::flatten:
    case LayerKind::unflatten:
      return g.reshaped(cache.input_shape);
    case LayerKind::crop:
      return crop2d_backward(g, cache.input_shape);
  }
  return g;
}

template <typename T>
Shape batched(const Shape& s) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  return s;
}

struct CellStep {
  template <typename T>
  static StepResult<T, RnnCache<T>> run(const Tensor<T>& x, const RecurrentState<T>& s, const RnnParams<T>& p) {
    return rnn_step(x, s, p);
  }
  template <typename T>
  static StepResult<T, LstmCache<T>> run(const Tensor<T>& x, const RecurrentState<T>& s, const LstmParams<T>& p) {
    return lstm_step(x, s, p);
  }
  template <typename T>
  static StepResult<T, GruCache<T>> run(const Tensor<T>& x, const RecurrentState<T>& s, const DenseGruParams<T>& p) {
    return gru_step(x, s, p);
  }
  template <typename T>
  static StepResult<T, ConvGruCache<T>> run(const Tensor<T>& x, const RecurrentState<T>& s,
                                            const ConvGruParams<T>& p) {
    return conv_gru_step(x, s, p);
  }
};

template <typename T>
RecurrentState<T> initial_state(const ArchitectureConfig& cfg, const ShapeReport& r) {
  if (cfg.recurrent.cell == CellKind::none) return {};
  return zero_state<T>(batched<T>(r.recurrent_output), cfg.recurrent.cell == CellKind::lstm);
}

}  // namespace

template <typename T>
WindowOutput<T> forward_window(const Model<T>& m, const std::vector<Tensor<T>>& frames,
                               const RecurrentState<T>* initial) {
  const ArchitectureConfig& cfg = m.config;
  if (frames.empty()) throw ShapeError("forward_window: empty window");
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].shape() != cfg.input_shape) {
      throw ShapeError("forward_window: frame " + std::to_string(t) + " has shape " + shape_string(frames[t].shape()) +
                       ", expected " + shape_string(cfg.input_shape));
    }
  }
  const ShapeReport report = shape_check(cfg);
  const bool recurrent = cfg.recurrent.cell != CellKind::none;
  const std::size_t T_len = frames.size();

  WindowOutput<T> out;
  WindowCache<T>& cache = out.cache;
  cache.frames = T_len;
  cache.first_frame = recurrent ? 0 : T_len - 1;
  cache.cell_input_shape = batched<T>(report.recurrent_input);

  std::map<std::size_t, Tensor<T>> pre_sources, post_sources;
  for (const auto& s : cfg.skip_links) (s.from.post ? post_sources : pre_sources)[s.from.index] = Tensor<T>();

  RecurrentState<T> state = initial ? *initial : initial_state<T>(cfg, report);
  Tensor<T> feature;
  for (std::size_t t = cache.first_frame; t < T_len; ++t) {
    auto& layer_caches = cache.pre.emplace_back(cfg.pre_recurrent.size());
    Tensor<T> x = frames[t].reshaped(batched<T>(cfg.input_shape));
    for (std::size_t i = 0; i < cfg.pre_recurrent.size(); ++i) {
      x = layer_forward(cfg.pre_recurrent[i], m.params.pre[i], x, &layer_caches[i]);
      if (t + 1 == T_len) {
        if (auto it = pre_sources.find(i); it != pre_sources.end()) it->second = x;
      }
    }
    if (!recurrent) {
      feature = std::move(x);
      continue;
    }
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (!std::is_same_v<P, std::monostate>) {
            auto step = CellStep::run(x, state, p);
            state = std::move(step.state);
            feature = std::move(step.output);
            cache.steps.emplace_back(std::move(step.cache));
          }
        },
        m.params.cell);
  }
  out.state = state;

  Tensor<T> y = std::move(feature);
  cache.post.resize(cfg.post_recurrent.size());
  cache.skips.resize(cfg.skip_links.size());
  for (std::size_t j = 0; j < cfg.post_recurrent.size(); ++j) {
    y = layer_forward(cfg.post_recurrent[j], m.params.post[j], y, &cache.post[j]);
    for (std::size_t k = 0; k < cfg.skip_links.size(); ++k) {
      const SkipLink& link = cfg.skip_links[k];
      if (link.to.index != j) continue;
      const Tensor<T>& src = link.from.post ? post_sources.at(link.from.index) : pre_sources.at(link.from.index);
      auto scored = conv2d_forward(src, m.params.skips[k].kernel);
      accumulate(y, crop2d(scored.value, y.dim(2), y.dim(3)));
      cache.skips[k] = SkipCache<T>{std::move(scored.cache), scored.value.shape()};
    }
    if (auto it = post_sources.find(j); it != post_sources.end()) it->second = y;
  }
  check_finite(y, "forward_window");
  out.logits = y.reshaped(report.output);
  return out;
}

template <typename T>
ModelParams<T> backward_window(const Tensor<T>& grad_logits, const WindowCache<T>& cache, const Model<T>& m,
                               bool through_trunk) {
  ModelParams<T> grads = zeros_like(m.params);
  backward_window_into(grad_logits, cache, m, grads, through_trunk);
  return grads;
}

template <typename T>
void backward_window_into(const Tensor<T>& grad_logits, const WindowCache<T>& cache, const Model<T>& m,
                          ModelParams<T>& grads, bool through_trunk) {
  const ArchitectureConfig& cfg = m.config;
  const ShapeReport report = shape_check(cfg);
  if (grad_logits.shape() != report.output) {
    throw ShapeError("backward_window: gradient shape " + shape_string(grad_logits.shape()) + " != logits shape " +
                     shape_string(report.output));
  }
  const bool recurrent = cfg.recurrent.cell != CellKind::none;
  const std::size_t processed = cache.frames - cache.first_frame;
  if (cache.pre.size() != processed || cache.post.size() != cfg.post_recurrent.size() ||
      (recurrent && cache.steps.size() != processed)) {
    throw ShapeError("backward_window: cache does not match the model");
  }

  std::map<std::size_t, Tensor<T>> pending_pre, pending_post;
  auto add_pending = [](std::map<std::size_t, Tensor<T>>& pending, std::size_t index, Tensor<T> g) {
    auto [it, inserted] = pending.try_emplace(index, std::move(g));
    if (!inserted) accumulate(it->second, g);
  };

  Tensor<T> g = grad_logits.reshaped(batched<T>(report.output));
  for (std::size_t j = cfg.post_recurrent.size(); j-- > 0;) {
    if (auto it = pending_post.find(j); it != pending_post.end()) accumulate(g, it->second);
    for (std::size_t k = cfg.skip_links.size(); k-- > 0;) {
      const SkipLink& link = cfg.skip_links[k];
      if (link.to.index != j) continue;
      const SkipCache<T>& sc = cache.skips.at(k);
      auto sg = conv2d_backward(crop2d_backward(g, sc.scored_shape), sc.conv, m.params.skips[k].kernel);
      accumulate_kernel(grads.skips[k], sg.weights, sg.bias);
      add_pending(link.from.post ? pending_post : pending_pre, link.from.index, std::move(sg.input));
    }
    g = layer_backward(cfg.post_recurrent[j], m.params.post[j], g, cache.post[j], grads.post[j]);
  }

  // Gradient w.r.t. each processed frame's trunk output, newest last.
  std::vector<Tensor<T>> feature_grads(processed);
  if (!recurrent) {
    feature_grads.back() = std::move(g);
  } else {
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (!std::is_same_v<P, std::monostate>) {
            auto& gp = std::get<P>(grads.cell);
            Tensor<T> grad_h = g;
            Tensor<T> grad_c;
            for (std::size_t t = processed; t-- > 0;) {
              if constexpr (std::is_same_v<P, RnnParams<T>>) {
                const auto& c = std::get<RnnCache<T>>(cache.steps[t]);
                const bool last = t + 1 == processed;
                auto cg = rnn_backward(last ? Tensor<T>({p.hidden_size()}) : grad_h, last ? g : Tensor<T>(), c, p, &gp);
                                feature_grads[t] = std::move(cg.x);
                grad_h = std::move(cg.h_prev);
              } else if constexpr (std::is_same_v<P, LstmParams<T>>) {
                auto cg = lstm_backward(grad_h, grad_c, std::get<LstmCache<T>>(cache.steps[t]), p, &gp);
                                feature_grads[t] = std::move(cg.x);
                grad_h = std::move(cg.h_prev);
                grad_c = std::move(cg.c_prev);
              } else if constexpr (std::is_same_v<P, DenseGruParams<T>>) {
                auto cg = gru_backward(grad_h, std::get<GruCache<T>>(cache.steps[t]), p, &gp);
                                feature_grads[t] = std::move(cg.x);
                grad_h = std::move(cg.h_prev);
              } else {
                auto cg = conv_gru_backward(grad_h, std::get<ConvGruCache<T>>(cache.steps[t]), p, &gp);
                                feature_grads[t] = std::move(cg.x);
                grad_h = std::move(cg.h_prev);
              }
            }
          }
        },
        m.params.cell);
  }

  if (!through_trunk) return;
  for (std::size_t t = processed; t-- > 0;) {
    Tensor<T> gx = std::move(feature_grads[t]);
    const bool last = t + 1 == processed;
    for (std::size_t i = cfg.pre_recurrent.size(); i-- > 0;) {
      if (last) {
        if (auto it = pending_pre.find(i); it != pending_pre.end()) accumulate(gx, it->second);
      }
      gx = layer_backward(cfg.pre_recurrent[i], m.params.pre[i], gx, cache.pre[t][i], grads.pre[i]);
    }
  }
}

template <typename T>
StreamRunner<T>::StreamRunner(const Model<T>& m) : model_(m), state_(initial_state<T>(m.config, shape_check(m.config))) {}

template <typename T>
Tensor<T> StreamRunner<T>::push(const Tensor<T>& frame) {
  auto out = forward_window(model_, std::vector<Tensor<T>>{frame}, &state_);
  state_ = std::move(out.state);
  ++seen_;
  return std::move(out.logits);
}

#define RFCN_INSTANTIATE(T)                                                                                      \
  template ModelParams<T> allocate_params<T>(const ArchitectureConfig&);                                         \
  template Model<T> build_model<T>(const ArchitectureConfig&, Rng&);                                             \
  template std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(ModelParams<T>&);                       \
  template std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors(const ModelParams<T>&);           \
  template WindowOutput<T> forward_window(const Model<T>&, const std::vector<Tensor<T>>&,                        \
                                          const RecurrentState<T>*);                                             \
  template ModelParams<T> backward_window(const Tensor<T>&, const WindowCache<T>&, const Model<T>&, bool);       \
  template void backward_window_into(const Tensor<T>&, const WindowCache<T>&, const Model<T>&, ModelParams<T>&, \
                                     bool);                                                                      \
  template class StreamRunner<T>;

RFCN_INSTANTIATE(float)
RFCN_INSTANTIATE(double)

#undef RFCN_INSTANTIATE

template Model<double> model_cast<double, float>(const Model<float>&);
template Model<float> model_cast<float, double>(const Model<double>&);
template Model<float> model_cast<float, float>(const Model<float>&);
template Model<double> model_cast<double, double>(const Model<double>&);

}  // namespace rfcn
