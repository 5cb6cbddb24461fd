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

#include <set>

#include "rfcn/model.hpp"
#include "test_util.hpp"

namespace rfcn {
namespace {

using L = LayerSpec;
using test::random_tensor;

ArchitectureConfig tiny_gru() {
  ArchitectureConfig c;
  c.name = "tiny-gru";
  c.input_shape = {1, 8, 8};
  c.pre_recurrent = {L::conv(3, 2, 1, 1), L::relu(), L::pool(2), L::conv1x1(1), L::flatten()};
  c.recurrent.cell = CellKind::gru;
  c.post_recurrent = {L::unflatten({1, 4, 4}), L::deconv(4, 2, 1, 1)};
  c.post_recurrent[1].bias = true;
  return c;
}

ArchitectureConfig tiny_conv_gru_with_skips() {
  ArchitectureConfig c;
  c.name = "tiny-conv-gru";
  c.input_shape = {2, 8, 8};
  c.pre_recurrent = {L::conv(3, 3, 1, 1), L::relu(), L::pool(2)};
  c.recurrent = {CellKind::conv_gru, 0, 2, 3, CandidateActivation::sigmoid};
  c.post_recurrent = {L::conv1x1(1), L::deconv(4, 2, 1, 1)};
  c.skip_links = {{LayerRef{false, 0}, LayerRef{true, 1}}, {LayerRef{false, 2}, LayerRef{true, 0}}};
  return c;
}

ArchitectureConfig tiny_dense(CellKind cell) {
  ArchitectureConfig c;
  c.name = "tiny-dense";
  c.input_shape = {1, 6, 6};
  c.pre_recurrent = {L::conv(3, 2), L::relu(), L::flatten(), L::dense(10), L::relu()};
  c.recurrent.cell = cell;
  c.recurrent.hidden = cell == CellKind::none ? 0 : 6;
  c.post_recurrent = {L::dense(16), L::unflatten({1, 4, 4}), L::crop(3, 2)};
  return c;
}

template <typename T>
void randomize(Model<T>& m, Rng& rng, double scale = 0.5) {
  for (auto& [name, t] : named_tensors(m.params)) *t = fill_random<T>(t->shape(), UniformDist{-scale, scale}, rng);
}

std::vector<Tensor<double>> random_frames(const ArchitectureConfig& c, std::size_t T, Rng& rng) {
  std::vector<Tensor<double>> frames;
  for (std::size_t t = 0; t < T; ++t) frames.push_back(random_tensor(c.input_shape, rng, 0, 1));
  return frames;
}

// Max relative FD error over every parameter entry, objective sum(R * logits).
std::map<std::string, double> window_fd_errors(Model<double>& m, const std::vector<Tensor<double>>& frames,
                                               Rng& rng) {
  const auto out = forward_window(m, frames);
  const auto R = random_tensor(out.logits.shape(), rng);
  auto grads = backward_window(R, out.cache, m);
  auto loss = [&] { return dot(R, forward_window(m, frames).logits); };
  std::map<std::string, double> errors;
  auto params = named_tensors(m.params);
  auto gs = named_tensors(grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(params[i].first, gs[i].first);
    errors[params[i].first] = test::max_fd_error(*params[i].second, *gs[i].second, loss);
  }
  return errors;
}

// ---------------------------------------------------------------------------
// Presets and shapes

TEST(PresetTest, ShapesAtDeclaredInputSizes) {
  const auto lenet = shape_check(preset("rfc-lenet"));
  EXPECT_EQ(preset("rfc-lenet").input_shape, (Shape{1, 28, 28}));
  EXPECT_EQ(lenet.recurrent_input, Shape{784});
  EXPECT_EQ(lenet.output, (Shape{1, 28, 28}));
  EXPECT_EQ(shape_check(preset("fc-lenet")).output, (Shape{1, 28, 28}));

  const auto s12 = shape_check(preset("rfc-12s"));
  EXPECT_EQ(preset("rfc-12s").input_shape, (Shape{3, 120, 180}));
  EXPECT_EQ(s12.recurrent_input, Shape{84});
  EXPECT_EQ(s12.output, (Shape{1, 34, 54}));

  const auto vgg = shape_check(preset("rfc-vgg"));
  EXPECT_EQ(preset("rfc-vgg").input_shape, (Shape{3, 240, 360}));
  EXPECT_EQ(preset("rfc-vgg").recurrent.kernel, 3u);
  EXPECT_EQ(vgg.recurrent_output, (Shape{128, 14, 22}));
  EXPECT_EQ(vgg.output, (Shape{1, 124, 188}));

  const auto sketch = shape_check(preset("rfcn-8s-sketch"));
  EXPECT_EQ(sketch.recurrent_input, (Shape{256, 64, 128}));
  EXPECT_EQ(sketch.output, (Shape{20, 256, 512}));

  for (const char* toy : {"fc-12s-mnist", "rfc-12s-mnist"}) EXPECT_EQ(shape_check(preset(toy)).output, (Shape{1, 28, 28}));
  EXPECT_EQ(shape_check(preset("rfc-12s-mnist")).recurrent_input, Shape{49});
  EXPECT_THROW(preset("rfc-resnet"), ConfigError);
}

TEST(PresetTest, BaselinesShareParameterNamesWithTheirRecurrentVariant) {
  for (auto [fc, rfc] : {std::pair{"fc-lenet", "rfc-lenet"}, std::pair{"fc-12s-mnist", "rfc-12s-mnist"}}) {
    const auto a = parameter_shapes(preset(fc));
    auto b = parameter_shapes(preset(rfc));
    std::erase_if(b, [](const auto& kv) { return kv.first.rfind("rec.", 0) == 0; });
    EXPECT_EQ(a, b) << fc;
  }
}

TEST(ShapeCheckTest, RejectsBrokenConfigs) {
  auto c = tiny_gru();
  c.pre_recurrent.pop_back();  // GRU now receives a map
  EXPECT_THROW(shape_check(c), ShapeError);
  c = tiny_gru();
  c.post_recurrent[0] = L::unflatten({1, 5, 4});
  EXPECT_THROW(shape_check(c), ShapeError);
  c = tiny_gru();
  c.num_classes = 2;
  EXPECT_THROW(shape_check(c), ShapeError);
  c = tiny_gru();
  c.pre_recurrent[0] = L::conv(11, 2);
  EXPECT_THROW(shape_check(c), ShapeError);
  c = tiny_gru();
  c.window = 0;
  EXPECT_THROW(shape_check(c), ConfigError);
  c = tiny_conv_gru_with_skips();
  c.skip_links.push_back({LayerRef{true, 1}, LayerRef{true, 0}});
  EXPECT_THROW(shape_check(c), ConfigError);
  c = tiny_conv_gru_with_skips();
  c.skip_links.push_back({LayerRef{true, 0}, LayerRef{true, 1}});  // 4x4 source, 8x8 target
  EXPECT_THROW(shape_check(c), ShapeError);
  c = tiny_conv_gru_with_skips();
  c.recurrent.kernel = 2;
  EXPECT_THROW(shape_check(c), ConfigError);
}

TEST(ConfigJsonTest, RoundTripsEveryPreset) {
  for (const auto& name : preset_names()) {
    const auto cfg = preset(name);
    const auto text = config_to_json(cfg);
    EXPECT_EQ(config_from_json(text), cfg) << name;
    EXPECT_EQ(config_to_json(config_from_json(text)), text) << name;
  }
  const auto skips = tiny_conv_gru_with_skips();
  EXPECT_EQ(config_from_json(config_to_json(skips, 2)), skips);
}

TEST(ConfigJsonTest, RejectsMalformedInput) {
  EXPECT_THROW(config_from_json("{"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"input_shape":[1,8,8],"colour":"red"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"input_shape":[1,8,8],"pre_recurrent":[{"kind":"warp"}]})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"input_shape":[1,8,8],"pre_recurrent":[{"kind":"conv","F":3,"Q":1}]})"),
               ConfigError);
  EXPECT_THROW(config_from_json(R"({"input_shape":[1,8,8],"skip_links":[{"from":"mid.1","to":"post.0"}]})"),
               ConfigError);
  const auto pool = config_from_json(R"({"input_shape":[1,8,8],"pre_recurrent":[{"kind":"pool","F":3}]})");
  EXPECT_EQ(pool.pre_recurrent[0].stride, 3u);
}

TEST(ParameterNamesTest, ModelMatchesConfigWalker) {
  Rng rng(1);
  for (const auto& name : preset_names()) {
    if (name == "rfcn-8s-sketch" || name.find("vgg") != std::string::npos) continue;  // large allocations
    const auto cfg = preset(name);
    const auto expected = parameter_shapes(cfg);
    const auto m = build_model<float>(cfg, rng);
    std::map<std::string, Shape> actual;
    for (const auto& [n, t] : named_tensors(m.params)) EXPECT_TRUE(actual.emplace(n, t->shape()).second) << n;
    EXPECT_EQ(actual, expected) << name;
  }
  for (const auto& cfg : {tiny_gru(), tiny_conv_gru_with_skips(), tiny_dense(CellKind::lstm),
                          tiny_dense(CellKind::rnn), tiny_dense(CellKind::none)}) {
    const auto m = build_model<double>(cfg, rng);
    std::map<std::string, Shape> actual;
    for (const auto& [n, t] : named_tensors(m.params)) actual.emplace(n, t->shape());
    EXPECT_EQ(actual, parameter_shapes(cfg)) << cfg.name;
  }
  const auto lenet = parameter_shapes(preset("rfc-lenet"));
  EXPECT_EQ(lenet.at("rec.gru.W_hz"), (Shape{784, 784}));
  EXPECT_EQ(lenet.at("pre.0.conv.weights"), (Shape{20, 1, 5, 5}));
  EXPECT_EQ(lenet.at("pre.9.deconv.weights"), (Shape{1, 1, 10, 10}));
}

TEST(BuildModelTest, DeterministicAndBilinearDeconv) {
  Rng a(5), b(5);
  const auto m1 = build_model<float>(preset("rfc-12s-mnist"), a);
  const auto m2 = build_model<float>(preset("rfc-12s-mnist"), b);
  const auto n1 = named_tensors(m1.params), n2 = named_tensors(m2.params);
  for (std::size_t i = 0; i < n1.size(); ++i) EXPECT_EQ(*n1[i].second, *n2[i].second);
  EXPECT_EQ(m1.params.post[1].kernel.weights, bilinear_kernel<float>(1, 1, 8));
  EXPECT_EQ(model_cast<float>(model_cast<double>(m1)).params.pre[0].kernel.weights, m1.params.pre[0].kernel.weights);
}

// ---------------------------------------------------------------------------
// Forward

TEST(ForwardWindowTest, ZeroCellParametersGiveConstantOutput) {
  Rng rng(7);
  auto m = build_model<double>(tiny_gru(), rng);
  randomize(m, rng);
  auto& cell = std::get<DenseGruParams<double>>(m.params.cell);
  cell = zeros_like(cell);
  // h_1 = 0.5 * 0 + 0.5 * tanh(0) = 0, so the logits are the deconv bias alone.
  const auto out = forward_window(m, random_frames(m.config, 1, rng));
  for (double v : out.logits.values()) EXPECT_EQ(v, m.params.post[1].kernel.bias[0]);
}

TEST(ForwardWindowTest, DeterministicAndShapeChecked) {
  Rng rng(9);
  auto m = build_model<double>(tiny_conv_gru_with_skips(), rng);
  randomize(m, rng);
  const auto frames = random_frames(m.config, 3, rng);
  EXPECT_EQ(forward_window(m, frames).logits, forward_window(m, frames).logits);
  EXPECT_EQ(forward_window(m, frames).logits.shape(), (Shape{1, 8, 8}));
  EXPECT_THROW(forward_window(m, {}), ShapeError);
  EXPECT_THROW(forward_window(m, {Tensor<double>({1, 8, 8})}), ShapeError);
}

TEST(ForwardWindowTest, BaselineSeesOnlyTheLastFrame) {
  Rng rng(11);
  auto m = build_model<double>(tiny_dense(CellKind::none), rng);
  auto frames = random_frames(m.config, 3, rng);
  const auto a = forward_window(m, frames).logits;
  frames[0] = random_tensor(m.config.input_shape, rng);
  EXPECT_EQ(forward_window(m, frames).logits, a);
  EXPECT_EQ(forward_window(m, {frames[2]}).logits, a);
}

TEST(ForwardWindowTest, RecurrentOutputDependsOnEarlierFrames) {
  Rng rng(13);
  auto m = build_model<double>(tiny_gru(), rng);
  randomize(m, rng);
  auto frames = random_frames(m.config, 3, rng);
  const auto a = forward_window(m, frames).logits;
  frames[0] = random_tensor(m.config.input_shape, rng);
  EXPECT_GT(test::max_abs_diff(forward_window(m, frames).logits, a), 0.0);
}

TEST(StreamRunnerTest, MatchesWindowFromZeroState) {
  Rng rng(17);
  for (const auto& cfg : {tiny_gru(), tiny_conv_gru_with_skips(), tiny_dense(CellKind::lstm)}) {
    auto m = build_model<double>(cfg, rng);
    randomize(m, rng);
    const auto frames = random_frames(cfg, 4, rng);
    StreamRunner<double> stream(m);
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const auto logits = stream.push(frames[t]);
      const std::vector<Tensor<double>> prefix(frames.begin(), frames.begin() + static_cast<long>(t) + 1);
      EXPECT_EQ(logits, forward_window(m, prefix).logits) << cfg.name << " frame " << t;
    }
    EXPECT_EQ(stream.frames_seen(), 4u);
  }
}

// ---------------------------------------------------------------------------
// Backward

TEST(BackwardWindowTest, MatchesFiniteDifferencesForEveryCellKind) {
  Rng rng(19);
  struct Case {
    ArchitectureConfig cfg;
    std::size_t T;
  };
  const Case cases[] = {{tiny_gru(), 3},
                        {tiny_conv_gru_with_skips(), 2},
                        {tiny_dense(CellKind::lstm), 3},
                        {tiny_dense(CellKind::rnn), 3},
                        {tiny_dense(CellKind::none), 2}};
  for (const auto& c : cases) {
    auto m = build_model<double>(c.cfg, rng);
    randomize(m, rng);
    const auto frames = random_frames(c.cfg, c.T, rng);
    for (const auto& [name, err] : window_fd_errors(m, frames, rng)) EXPECT_LE(err, 1e-4) << c.cfg.name << " " << name;
  }
}

TEST(BackwardWindowTest, ZeroUpstreamGivesZeroGradients) {
  Rng rng(23);
  auto m = build_model<double>(tiny_conv_gru_with_skips(), rng);
  const auto out = forward_window(m, random_frames(m.config, 3, rng));
  const auto g = backward_window(Tensor<double>(out.logits.shape()), out.cache, m);
  for (const auto& [name, t] : named_tensors(g)) EXPECT_EQ(max_abs(*t), 0.0) << name;
}

TEST(BackwardWindowTest, FrozenTrunkSkipsPreGradientsOnly) {
  Rng rng(29);
  auto m = build_model<double>(tiny_gru(), rng);
  randomize(m, rng);
  const auto out = forward_window(m, random_frames(m.config, 3, rng));
  const auto R = random_tensor(out.logits.shape(), rng);
  const auto full = backward_window(R, out.cache, m);
  const auto partial = backward_window(R, out.cache, m, false);
  const auto a = named_tensors(full), b = named_tensors(partial);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first.rfind("pre.", 0) == 0) {
      EXPECT_EQ(max_abs(*b[i].second), 0.0) << a[i].first;
    } else {
      EXPECT_EQ(*a[i].second, *b[i].second) << a[i].first;
    }
  }
}

TEST(BackwardWindowTest, RejectsMismatchedGradient) {
  Rng rng(31);
  auto m = build_model<double>(tiny_gru(), rng);
  const auto out = forward_window(m, random_frames(m.config, 2, rng));
  EXPECT_THROW(backward_window(Tensor<double>({1, 4, 4}), out.cache, m), ShapeError);
  auto broken = out.cache;
  broken.steps.pop_back();
  EXPECT_THROW(backward_window(Tensor<double>(out.logits.shape()), broken, m), ShapeError);
}

}  // namespace
}  // namespace rfcn
