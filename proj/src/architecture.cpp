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

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rfcn/error.hpp"
#include "rfcn/model.hpp"

namespace rfcn {

using nlohmann::json;

namespace {

constexpr LayerKind kAllKinds[] = {LayerKind::conv,    LayerKind::deconv,    LayerKind::pool,
                                   LayerKind::relu,    LayerKind::dense,     LayerKind::flatten,
                                   LayerKind::unflatten, LayerKind::conv1x1, LayerKind::crop};

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::deconv: return "deconv";
    case LayerKind::pool: return "pool";
    case LayerKind::relu: return "relu";
    case LayerKind::dense: return "dense";
    case LayerKind::flatten: return "flatten";
    case LayerKind::unflatten: return "unflatten";
    case LayerKind::conv1x1: return "conv1x1";
    case LayerKind::crop: return "crop";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : kAllKinds)
    if (layer_kind_name(k) == name) return k;
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv(std::size_t f, std::size_t d, std::size_t s, std::size_t p) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.filter = f;
  l.depth = d;
  l.stride = s;
  l.pad = p;
  return l;
}

LayerSpec LayerSpec::conv1x1(std::size_t d) {
  LayerSpec l = conv(1, d);
  l.kind = LayerKind::conv1x1;
  return l;
}

LayerSpec LayerSpec::deconv(std::size_t f, std::size_t s, std::size_t d, std::size_t p) {
  LayerSpec l = conv(f, d, s, p);
  l.kind = LayerKind::deconv;
  l.bias = false;
  return l;
}

LayerSpec LayerSpec::pool(std::size_t f, std::size_t s) {
  LayerSpec l;
  l.kind = LayerKind::pool;
  l.filter = f;
  l.stride = s == 0 ? f : s;
  l.bias = false;
  return l;
}

LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = LayerKind::relu;
  l.bias = false;
  return l;
}

LayerSpec LayerSpec::dense(std::size_t d) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.depth = d;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  l.bias = false;
  return l;
}

LayerSpec LayerSpec::unflatten(Shape chw) {
  LayerSpec l;
  l.kind = LayerKind::unflatten;
  l.shape = std::move(chw);
  l.bias = false;
  return l;
}

LayerSpec LayerSpec::crop(std::size_t h, std::size_t w) {
  LayerSpec l;
  l.kind = LayerKind::crop;
  l.shape = {h, w};
  l.bias = false;
  return l;
}

bool LayerSpec::has_params() const {
  return kind == LayerKind::conv || kind == LayerKind::conv1x1 || kind == LayerKind::deconv ||
         kind == LayerKind::dense;
}

LayerRef LayerRef::parse(std::string_view text) {
  LayerRef r;
  std::string_view rest;
  if (text.substr(0, 4) == "pre.") {
    rest = text.substr(4);
  } else if (text.substr(0, 5) == "post.") {
    r.post = true;
    rest = text.substr(5);
  } else {
    throw ConfigError("layer reference '" + std::string(text) + "' must look like pre.<i> or post.<i>");
  }
  if (rest.empty() || !std::all_of(rest.begin(), rest.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw ConfigError("layer reference '" + std::string(text) + "' has no index");
  }
  r.index = std::stoul(std::string(rest));
  return r;
}

std::string LayerRef::str() const { return (post ? "post." : "pre.") + std::to_string(index); }

// ---------------------------------------------------------------------------
// JSON

namespace {

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = std::string(layer_kind_name(l.kind));
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::deconv:
      j["F"] = l.filter;
      j["S"] = l.stride;
      j["P"] = l.pad;
      j["D"] = l.depth;
      j["bias"] = l.bias;
      if (l.kind == LayerKind::deconv) j["init"] = l.bilinear_init ? "bilinear" : "random";
      break;
    case LayerKind::conv1x1:
      j["D"] = l.depth;
      j["bias"] = l.bias;
      break;
    case LayerKind::pool:
      j["F"] = l.filter;
      j["S"] = l.stride;
      break;
    case LayerKind::dense:
      j["D"] = l.depth;
      j["bias"] = l.bias;
      break;
    case LayerKind::unflatten:
    case LayerKind::crop:
      j["shape"] = l.shape;
      break;
    case LayerKind::relu:
    case LayerKind::flatten:
      break;
  }
  return j;
}

template <typename V>
V take(const json& j, const char* key, V fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : it->get<V>();
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown field '" + key + "'");
    }
  }
}

LayerSpec layer_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError(where + ": layer must be an object with a 'kind'");
  const LayerKind kind = parse_layer_kind(j.at("kind").get<std::string>());
  LayerSpec l;
  switch (kind) {
    case LayerKind::conv:
      reject_unknown_keys(j, {"kind", "F", "S", "P", "D", "bias"}, where);
      l = LayerSpec::conv(j.at("F").get<std::size_t>(), take<std::size_t>(j, "D", 0), take<std::size_t>(j, "S", 1),
                          take<std::size_t>(j, "P", 0));
      l.bias = take(j, "bias", true);
      break;
    case LayerKind::deconv: {
      reject_unknown_keys(j, {"kind", "F", "S", "P", "D", "bias", "init"}, where);
      l = LayerSpec::deconv(j.at("F").get<std::size_t>(), take<std::size_t>(j, "S", 1), take<std::size_t>(j, "D", 0),
                            take<std::size_t>(j, "P", 0));
      l.bias = take(j, "bias", false);
      const auto init = take<std::string>(j, "init", "bilinear");
      if (init != "bilinear" && init != "random") throw ConfigError(where + ": init must be bilinear or random");
      l.bilinear_init = init == "bilinear";
      break;
    }
    case LayerKind::conv1x1:
      reject_unknown_keys(j, {"kind", "D", "bias"}, where);
      l = LayerSpec::conv1x1(j.at("D").get<std::size_t>());
      l.bias = take(j, "bias", true);
      break;
    case LayerKind::pool:
      reject_unknown_keys(j, {"kind", "F", "S"}, where);
      l = LayerSpec::pool(j.at("F").get<std::size_t>(), take<std::size_t>(j, "S", 0));
      break;
    case LayerKind::dense:
      reject_unknown_keys(j, {"kind", "D", "bias"}, where);
      l = LayerSpec::dense(j.at("D").get<std::size_t>());
      l.bias = take(j, "bias", true);
      break;
    case LayerKind::unflatten:
      reject_unknown_keys(j, {"kind", "shape"}, where);
      l = LayerSpec::unflatten(j.at("shape").get<Shape>());
      break;
    case LayerKind::crop: {
      reject_unknown_keys(j, {"kind", "shape"}, where);
      const auto s = j.at("shape").get<Shape>();
      if (s.size() != 2) throw ConfigError(where + ": crop shape must be [H, W]");
      l = LayerSpec::crop(s[0], s[1]);
      break;
    }
    case LayerKind::relu:
      reject_unknown_keys(j, {"kind"}, where);
      l = LayerSpec::relu();
      break;
    case LayerKind::flatten:
      reject_unknown_keys(j, {"kind"}, where);
      l = LayerSpec::flatten();
      break;
  }
  return l;
}

}  // namespace

std::string config_to_json(const ArchitectureConfig& cfg, int indent) {
  json j;
  j["name"] = cfg.name;
  j["input_shape"] = cfg.input_shape;
  j["num_classes"] = cfg.num_classes;
  j["window"] = cfg.window;
  j["pre_recurrent"] = json::array();
  for (const auto& l : cfg.pre_recurrent) j["pre_recurrent"].push_back(layer_to_json(l));
  j["post_recurrent"] = json::array();
  for (const auto& l : cfg.post_recurrent) j["post_recurrent"].push_back(layer_to_json(l));
  j["recurrent"] = {{"cell", std::string(cell_kind_name(cfg.recurrent.cell))},
                    {"hidden", cfg.recurrent.hidden},
                    {"channels", cfg.recurrent.channels},
                    {"kernel", cfg.recurrent.kernel},
                    {"candidate", cfg.recurrent.candidate == CandidateActivation::sigmoid ? "sigmoid" : "tanh"}};
  j["skip_links"] = json::array();
  for (const auto& s : cfg.skip_links) j["skip_links"].push_back({{"from", s.from.str()}, {"to", s.to.str()}});
  return j.dump(indent);
}

ArchitectureConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("architecture config is not valid JSON: ") + e.what());
  }
  try {
    reject_unknown_keys(j, {"name", "input_shape", "num_classes", "window", "pre_recurrent", "recurrent",
                            "post_recurrent", "skip_links"},
                        "architecture config");
    ArchitectureConfig cfg;
    cfg.name = take<std::string>(j, "name", "custom");
    cfg.input_shape = j.at("input_shape").get<Shape>();
    cfg.num_classes = take<std::size_t>(j, "num_classes", 1);
    cfg.window = take<std::size_t>(j, "window", 3);
    const auto layers = [&](const char* key, std::vector<LayerSpec>& out) {
      if (!j.contains(key)) return;
      std::size_t i = 0;
      for (const auto& l : j.at(key)) out.push_back(layer_from_json(l, std::string(key) + "[" + std::to_string(i++) + "]"));
    };
    layers("pre_recurrent", cfg.pre_recurrent);
    layers("post_recurrent", cfg.post_recurrent);
    if (j.contains("recurrent")) {
      const json& r = j.at("recurrent");
      reject_unknown_keys(r, {"cell", "hidden", "channels", "kernel", "candidate"}, "recurrent");
      cfg.recurrent.cell = parse_cell_kind(take<std::string>(r, "cell", "none"));
      cfg.recurrent.hidden = take<std::size_t>(r, "hidden", 0);
      cfg.recurrent.channels = take<std::size_t>(r, "channels", 0);
      cfg.recurrent.kernel = take<std::size_t>(r, "kernel", 3);
      const auto cand = take<std::string>(r, "candidate", "sigmoid");
      if (cand != "sigmoid" && cand != "tanh") throw ConfigError("recurrent.candidate must be sigmoid or tanh");
      cfg.recurrent.candidate = cand == "sigmoid" ? CandidateActivation::sigmoid : CandidateActivation::tanh;
    }
    if (j.contains("skip_links")) {
      for (const auto& s : j.at("skip_links")) {
        reject_unknown_keys(s, {"from", "to"}, "skip_links");
        cfg.skip_links.push_back(
            {LayerRef::parse(s.at("from").get<std::string>()), LayerRef::parse(s.at("to").get<std::string>())});
      }
    }
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("architecture config: ") + e.what());
  }
}

ArchitectureConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open architecture config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Presets

namespace {

using L = LayerSpec;

ArchitectureConfig lenet(bool recurrent) {
  ArchitectureConfig c;
  c.name = recurrent ? "rfc-lenet" : "fc-lenet";
  c.input_shape = {1, 28, 28};
  c.pre_recurrent = {L::conv(5, 20, 1, 10), L::relu(),  L::pool(2),          L::conv(5, 50),
                     L::relu(),            L::pool(2), L::conv(3, 500),     L::relu(),
                     L::conv(1, 1),        L::deconv(10, 4, 1), L::crop(28, 28), L::flatten()};
  if (recurrent) c.recurrent = {CellKind::gru, 784, 0, 3, CandidateActivation::sigmoid};
  c.post_recurrent = {L::unflatten({1, 28, 28})};
  return c;
}

ArchitectureConfig twelve_s(bool recurrent) {
  ArchitectureConfig c;
  c.name = recurrent ? "rfc-12s" : "fc-12s";
  c.input_shape = {3, 120, 180};
  c.pre_recurrent = {L::conv(5, 20, 3, 10), L::relu(), L::pool(2),      L::conv(5, 50), L::relu(),
                     L::pool(2),            L::conv(3, 500), L::relu(), L::conv(1, 1),  L::flatten()};
  if (recurrent) c.recurrent.cell = CellKind::gru;
  c.post_recurrent = {L::unflatten({1, 7, 12}), L::deconv(10, 4, 1)};
  return c;
}

ArchitectureConfig vgg(bool recurrent) {
  ArchitectureConfig c;
  c.name = recurrent ? "rfc-vgg" : "fc-vgg";
  c.input_shape = {3, 240, 360};
  c.pre_recurrent = {L::conv(11, 64, 4, 40), L::relu(), L::pool(3, 2),          L::conv(5, 256, 1, 2),
                     L::relu(),              L::pool(3, 2), L::conv(3, 256, 1, 1), L::relu(),
                     L::conv(3, 256, 1, 1),  L::relu(), L::conv(3, 256, 1, 1),  L::relu(),
                     L::conv(3, 512),        L::conv(3, 128)};
  if (recurrent) c.recurrent = {CellKind::conv_gru, 0, 128, 3, CandidateActivation::sigmoid};
  c.post_recurrent = {L::conv(1, 1), L::deconv(20, 8, 1)};
  return c;
}

ArchitectureConfig fcn8s_sketch() {
  ArchitectureConfig c;
  c.name = "rfcn-8s-sketch";
  c.input_shape = {3, 256, 512};
  c.num_classes = 20;
  auto block = [](std::vector<LayerSpec>& out, std::size_t convs, std::size_t depth) {
    for (std::size_t i = 0; i < convs; ++i) {
      out.push_back(L::conv(3, depth, 1, 1));
      out.push_back(L::relu());
    }
  };
  block(c.pre_recurrent, 2, 64);
  c.pre_recurrent.push_back(L::pool(2));
  block(c.pre_recurrent, 2, 128);
  c.pre_recurrent.push_back(L::pool(2));
  block(c.pre_recurrent, 3, 256);
  // The cell sits before pool3, where the skip branches start.
  c.recurrent = {CellKind::conv_gru, 0, 256, 3, CandidateActivation::sigmoid};
  auto& post = c.post_recurrent;
  post.push_back(L::pool(2));  // post.0: pool3
  block(post, 3, 512);
  post.push_back(L::pool(2));  // post.7: pool4
  block(post, 3, 512);
  post.push_back(L::pool(2));  // post.14: pool5
  post.push_back(L::conv(3, 1024, 1, 1));
  post.push_back(L::relu());
  post.push_back(L::conv1x1(1024));
  post.push_back(L::relu());
  post.push_back(L::conv1x1(20));
  post.push_back(L::deconv(4, 2, 20, 1));   // post.20: x2, merges pool4
  post.push_back(L::deconv(4, 2, 20, 1));   // post.21: x2, merges pool3
  post.push_back(L::deconv(16, 8, 20, 4));  // post.22: x8
  c.skip_links = {{LayerRef{true, 7}, LayerRef{true, 20}}, {LayerRef{true, 0}, LayerRef{true, 21}}};
  return c;
}

// 28x28 analogue of the 12s pair: the GRU sees a 7x7 coarse map.
ArchitectureConfig twelve_s_mnist(bool recurrent) {
  ArchitectureConfig c;
  c.name = recurrent ? "rfc-12s-mnist" : "fc-12s-mnist";
  c.input_shape = {1, 28, 28};
  c.pre_recurrent = {L::conv(5, 8, 1, 2), L::relu(), L::pool(2), L::conv(3, 16, 1, 1),
                     L::relu(),           L::pool(2), L::conv(1, 1), L::flatten()};
  if (recurrent) c.recurrent.cell = CellKind::gru;
  c.post_recurrent = {L::unflatten({1, 7, 7}), L::deconv(8, 4, 1, 2)};
  return c;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"fc-lenet", "rfc-lenet", "fc-12s",       "rfc-12s",       "fc-vgg",
          "rfc-vgg",  "rfcn-8s-sketch", "fc-12s-mnist", "rfc-12s-mnist"};
}

ArchitectureConfig preset(std::string_view name) {
  if (name == "fc-lenet") return lenet(false);
  if (name == "rfc-lenet") return lenet(true);
  if (name == "fc-12s") return twelve_s(false);
  if (name == "rfc-12s") return twelve_s(true);
  if (name == "fc-vgg") return vgg(false);
  if (name == "rfc-vgg") return vgg(true);
  if (name == "rfcn-8s-sketch") return fcn8s_sketch();
  if (name == "fc-12s-mnist") return twelve_s_mnist(false);
  if (name == "rfc-12s-mnist") return twelve_s_mnist(true);
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

ArchitectureConfig tiny_config(const ArchitectureConfig& cfg, std::size_t max_depth) {
  ArchitectureConfig out = cfg;
  out.name = cfg.name + "-tiny";
  auto shrink = [&](std::vector<LayerSpec>& layers) {
    for (auto& l : layers) {
      const bool conv_like = l.kind == LayerKind::conv || l.kind == LayerKind::conv1x1 || l.kind == LayerKind::deconv;
      if (conv_like && l.depth > max_depth) l.depth = max_depth;
    }
  };
  shrink(out.pre_recurrent);
  shrink(out.post_recurrent);
  if (out.recurrent.cell == CellKind::conv_gru && out.recurrent.channels > max_depth) out.recurrent.channels = max_depth;
  return out;
}

// ---------------------------------------------------------------------------
// Shape propagation

namespace {

std::string layer_where(bool post, std::size_t i, const LayerSpec& l) {
  return (post ? "post." : "pre.") + std::to_string(i) + " (" + std::string(layer_kind_name(l.kind)) + ")";
}

void require_spatial(const Shape& in, const std::string& where) {
  if (in.size() != 3) throw ShapeError(where + ": expects a C x H x W input, got " + shape_string(in));
}

Shape layer_output_shape(const LayerSpec& l, const Shape& in, const std::string& where) {
  try {
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::conv1x1: {
        require_spatial(in, where);
        if (l.filter == 0 || l.stride == 0) throw ConfigError(where + ": F and S must be positive");
        return {l.depth ? l.depth : in[0], conv_output_extent(in[1], l.filter, l.stride, l.pad),
                conv_output_extent(in[2], l.filter, l.stride, l.pad)};
      }
      case LayerKind::deconv:
        require_spatial(in, where);
        if (l.filter == 0 || l.stride == 0) throw ConfigError(where + ": F and S must be positive");
        return {l.depth ? l.depth : in[0], deconv_output_extent(in[1], l.filter, l.stride, l.pad),
                deconv_output_extent(in[2], l.filter, l.stride, l.pad)};
      case LayerKind::pool:
        require_spatial(in, where);
        if (l.filter == 0 || l.stride == 0) throw ConfigError(where + ": F and S must be positive");
        return {in[0], conv_output_extent(in[1], l.filter, l.stride, 0),
                conv_output_extent(in[2], l.filter, l.stride, 0)};
      case LayerKind::relu:
        return in;
      case LayerKind::dense:
        if (in.size() != 1) throw ShapeError(where + ": expects a vector input, got " + shape_string(in));
        if (l.depth == 0) throw ConfigError(where + ": D must be positive");
        return {l.depth};
      case LayerKind::flatten:
        require_spatial(in, where);
        return {shape_size(in)};
      case LayerKind::unflatten:
        if (in.size() != 1) throw ShapeError(where + ": expects a vector input, got " + shape_string(in));
        if (l.shape.size() != 3 || shape_size(l.shape) != in[0]) {
          throw ShapeError(where + ": cannot reshape " + shape_string(in) + " to " + shape_string(l.shape));
        }
        return l.shape;
      case LayerKind::crop:
        require_spatial(in, where);
        if (l.shape.size() != 2 || l.shape[0] > in[1] || l.shape[1] > in[2] || l.shape[0] == 0 || l.shape[1] == 0) {
          throw ShapeError(where + ": cannot crop " + shape_string(in) + " to " + shape_string(l.shape));
        }
        return {in[0], l.shape[0], l.shape[1]};
    }
  } catch (const ShapeError& e) {
    if (std::string(e.what()).rfind(where, 0) == 0) throw;
    throw ShapeError(where + ": " + e.what());
  }
  return in;
}

Shape recurrent_output_shape(const RecurrentSpec& r, const Shape& in) {
  switch (r.cell) {
    case CellKind::none:
      return in;
    case CellKind::rnn:
    case CellKind::lstm:
    case CellKind::gru:
      if (in.size() != 1) {
        throw ShapeError("recurrent (" + std::string(cell_kind_name(r.cell)) + "): expects a vector input, got " +
                         shape_string(in) + "; add a flatten layer");
      }
      return {r.hidden ? r.hidden : in[0]};
    case CellKind::conv_gru:
      if (in.size() != 3) throw ShapeError("recurrent (conv_gru): expects a C x H x W input, got " + shape_string(in));
      if (r.kernel % 2 == 0) throw ConfigError("recurrent (conv_gru): kernel must be odd");
      return {r.channels ? r.channels : in[0], in[1], in[2]};
  }
  return in;
}

}  // namespace

bool ShapeReport::output_matches_input(const ArchitectureConfig& cfg) const {
  return output.size() == 3 && cfg.input_shape.size() == 3 && output[1] == cfg.input_shape[1] &&
         output[2] == cfg.input_shape[2];
}

std::string ShapeReport::describe(const ArchitectureConfig& cfg) const {
  std::ostringstream os;
  os << cfg.name << "  input " << shape_string(cfg.input_shape) << "\n";
  for (std::size_t i = 0; i < pre.size(); ++i)
    os << "  pre." << i << "  " << layer_kind_name(cfg.pre_recurrent[i].kind) << " -> " << shape_string(pre[i]) << "\n";
  os << "  recurrent " << cell_kind_name(cfg.recurrent.cell) << "  " << shape_string(recurrent_input) << " -> "
     << shape_string(recurrent_output) << "\n";
  for (std::size_t i = 0; i < post.size(); ++i)
    os << "  post." << i << "  " << layer_kind_name(cfg.post_recurrent[i].kind) << " -> " << shape_string(post[i])
       << "\n";
  os << "  output " << shape_string(output) << (output_matches_input(cfg) ? "" : "  (differs from input extent)")
     << "\n";
  return os.str();
}

ShapeReport shape_check(const ArchitectureConfig& cfg) {
  if (cfg.input_shape.size() != 3 || shape_size(cfg.input_shape) == 0) {
    throw ConfigError("input_shape must be [C, H, W] with positive entries");
  }
  if (cfg.window == 0) throw ConfigError("window must be at least 1");
  if (cfg.num_classes == 0) throw ConfigError("num_classes must be positive");
  ShapeReport r;
  Shape s = cfg.input_shape;
  for (std::size_t i = 0; i < cfg.pre_recurrent.size(); ++i) {
    s = layer_output_shape(cfg.pre_recurrent[i], s, layer_where(false, i, cfg.pre_recurrent[i]));
    r.pre.push_back(s);
  }
  r.recurrent_input = s;
  s = recurrent_output_shape(cfg.recurrent, s);
  r.recurrent_output = s;
  for (std::size_t i = 0; i < cfg.post_recurrent.size(); ++i) {
    s = layer_output_shape(cfg.post_recurrent[i], s, layer_where(true, i, cfg.post_recurrent[i]));
    r.post.push_back(s);
  }
  if (s.size() != 3 || s[0] != cfg.num_classes) {
    throw ShapeError("network output " + shape_string(s) + " must be " + std::to_string(cfg.num_classes) +
                     " x H x W (num_classes maps)");
  }
  r.output = s;

  for (const auto& link : cfg.skip_links) {
    const std::string where = "skip " + link.from.str() + " -> " + link.to.str();
    auto shape_of = [&](const LayerRef& ref) -> const Shape& {
      const auto& list = ref.post ? r.post : r.pre;
      if (ref.index >= list.size()) throw ConfigError(where + ": " + ref.str() + " does not exist");
      return list[ref.index];
    };
    const Shape& src = shape_of(link.from);
    const Shape& dst = shape_of(link.to);
    if (!link.to.post) throw ConfigError(where + ": skip targets must be post-recurrent layers");
    if (link.from.post && link.from.index >= link.to.index) throw ConfigError(where + ": source must precede target");
    if (src.size() != 3 || dst.size() != 3) throw ShapeError(where + ": both ends must be C x H x W maps");
    if (dst[0] != cfg.num_classes) {
      throw ShapeError(where + ": target has " + std::to_string(dst[0]) + " channels, expected num_classes");
    }
    if (src[1] < dst[1] || src[2] < dst[2]) {
      throw ShapeError(where + ": source " + shape_string(src) + " is smaller than target " + shape_string(dst));
    }
  }
  return r;
}

std::map<std::string, Shape> parameter_shapes(const ArchitectureConfig& cfg) {
  const ShapeReport report = shape_check(cfg);
  std::map<std::string, Shape> out;
  auto layers = [&](const std::vector<LayerSpec>& specs, const Shape& first_in, const std::vector<Shape>& outs,
                    const std::string& section) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const LayerSpec& l = specs[i];
      const Shape& in = i == 0 ? first_in : outs[i - 1];
      const Shape& o = outs[i];
      const std::string base = section + "." + std::to_string(i) + ".";
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::conv1x1:
          out[base + "conv.weights"] = {o[0], in[0], l.filter, l.filter};
          if (l.bias) out[base + "conv.bias"] = {o[0]};
          break;
        case LayerKind::deconv:
          out[base + "deconv.weights"] = {in[0], o[0], l.filter, l.filter};
          if (l.bias) out[base + "deconv.bias"] = {o[0]};
          break;
        case LayerKind::dense:
          out[base + "dense.weights"] = {o[0], in[0]};
          if (l.bias) out[base + "dense.bias"] = {o[0]};
          break;
        default:
          break;
      }
    }
  };
  layers(cfg.pre_recurrent, cfg.input_shape, report.pre, "pre");
  layers(cfg.post_recurrent, report.recurrent_output, report.post, "post");

  const Shape& x = report.recurrent_input;
  const Shape& h = report.recurrent_output;
  const std::string rec = "rec." + std::string(cell_kind_name(cfg.recurrent.cell)) + ".";
  switch (cfg.recurrent.cell) {
    case CellKind::none:
      break;
    case CellKind::gru:
      for (const char* g : {"z", "r"}) {
        out[rec + "W_h" + g] = {h[0], h[0]};
        out[rec + "W_x" + g] = {h[0], x[0]};
        out[rec + "b_" + g] = {h[0]};
      }
      out[rec + "W_h"] = {h[0], h[0]};
      out[rec + "W_x"] = {h[0], x[0]};
      out[rec + "b"] = {h[0]};
      break;
    case CellKind::conv_gru: {
      const std::size_t k = cfg.recurrent.kernel;
      for (const char* g : {"z", "r"}) {
        out[rec + "W_h" + g] = {h[0], h[0], k, k};
        out[rec + "W_x" + g] = {h[0], x[0], k, k};
        out[rec + "b_" + g] = {h[0]};
      }
      out[rec + "W_h"] = {h[0], h[0], k, k};
      out[rec + "W_x"] = {h[0], x[0], k, k};
      out[rec + "b"] = {h[0]};
      break;
    }
    case CellKind::lstm:
      for (const char* g : {"i", "f", "o", "c"}) {
        out[rec + "W_x" + g] = {h[0], x[0]};
        out[rec + "W_h" + g] = {h[0], h[0]};
        out[rec + "b_" + g] = {h[0]};
      }
      break;
    case CellKind::rnn:
      out[rec + "theta"] = {h[0], h[0]};
      out[rec + "theta_x"] = {h[0], x[0]};
      out[rec + "theta_y"] = {h[0], h[0]};
      break;
  }
  for (std::size_t k = 0; k < cfg.skip_links.size(); ++k) {
    const LayerRef& from = cfg.skip_links[k].from;
    const Shape& src = from.post ? report.post[from.index] : report.pre[from.index];
    out["skip." + std::to_string(k) + ".conv.weights"] = {cfg.num_classes, src[0], 1, 1};
    out["skip." + std::to_string(k) + ".conv.bias"] = {cfg.num_classes};
  }
  return out;
}

}  // namespace rfcn
