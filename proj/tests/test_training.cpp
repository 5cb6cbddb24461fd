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

#include <cmath>
#include <cstring>
#include <filesystem>

#include "rfcn/checkpoint.hpp"
#include "rfcn/training.hpp"
#include "test_util.hpp"

#ifndef RFCN_DATA_DIR
#define RFCN_DATA_DIR "data"
#endif

namespace rfcn {
namespace {

namespace fs = std::filesystem;

Mask random_binary(Rng& rng, std::size_t h, std::size_t w) {
  Mask m({h, w});
  for (auto& v : m.values()) v = static_cast<std::uint8_t>(rng.below(2));
  return m;
}

const std::vector<MnistDigit>& digits() {
  static const auto d =
      load_mnist_idx(RFCN_DATA_DIR "/mnist-5k/images-idx3-ubyte", RFCN_DATA_DIR "/mnist-5k/labels-idx1-ubyte");
  return d;
}

std::vector<SequenceSample> moving_mnist_windows(std::size_t n, std::uint64_t seed, std::size_t T = 3) {
  std::vector<SequenceSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    const auto motion = sample_motion(rng);
    auto seq = gen_moving_mnist(digits(), motion, T, rng);
    seq.id = "s" + std::to_string(i);
    auto w = sliding_windows(seq, T);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

Model<float> tiny_model(const std::string& preset_name, std::uint64_t seed = 1) {
  Rng rng(seed);
  return build_model<float>(tiny_config(preset(preset_name)), rng);
}

template <typename T>
bool bitwise_equal(const ModelParams<T>& a, const ModelParams<T>& b) {
  const auto ta = named_tensors(a), tb = named_tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].second->shape() != tb[i].second->shape()) return false;
    if (std::memcmp(ta[i].second->data(), tb[i].second->data(), sizeof(T) * ta[i].second->size()) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Losses

TEST(LossTest, LogisticExamples) {
  const auto zero = logistic_loss(Tensor<double>({1, 2, 2}), Mask({2, 2}));
  EXPECT_NEAR(zero.loss, std::log(2.0), 1e-15);
  const auto saturated = logistic_loss(Tensor<double>({1, 2, 2}, 50.0), Mask({2, 2}, 1));
  EXPECT_TRUE(std::isfinite(saturated.loss));
  EXPECT_LT(saturated.loss, 1e-20);
  const auto wrong = logistic_loss(Tensor<float>({1, 1, 1}, -200.0f), Mask({1, 1}, 1));
  EXPECT_NEAR(wrong.loss, 200.0, 1e-9);
  EXPECT_NEAR(wrong.grad[0], -1.0, 1e-9);
}

TEST(LossTest, LogisticGradientMatchesFiniteDifferences) {
  Rng rng(2);
  auto logits = fill_random<double>({1, 4, 5}, UniformDist{-4, 4}, rng);
  const Mask target = random_binary(rng, 4, 5);
  const auto analytic = logistic_loss(logits, target).grad;
  EXPECT_LE(test::max_fd_error(logits, analytic, [&] { return logistic_loss(logits, target).loss; }), 1e-6);
}

TEST(LossTest, LogisticRejectsBadTargets) {
  EXPECT_THROW(logistic_loss(Tensor<double>({1, 2, 2}), Mask({2, 2}, 2)), ConfigError);
  EXPECT_THROW(logistic_loss(Tensor<double>({1, 2, 3}), Mask({2, 2})), ShapeError);
}

TEST(LossTest, CrossEntropyExamples) {
  const auto uniform = multiclass_cross_entropy(Tensor<double>({13, 3, 3}, 0.7), Mask({3, 3}, 5));
  EXPECT_NEAR(uniform.loss, std::log(13.0), 1e-14);
  Tensor<double> confident({4, 1, 2});
  confident[2 * 2 + 0] = 1e3;  // class 2 at pixel 0
  confident[1 * 2 + 1] = 1e3;  // class 1 at pixel 1
  Mask t({1, 2});
  t[0] = 2;
  t[1] = 1;
  const auto c = multiclass_cross_entropy(confident, t);
  EXPECT_TRUE(std::isfinite(c.loss));
  EXPECT_LT(c.loss, 1e-20);
  EXPECT_THROW(multiclass_cross_entropy(Tensor<double>({3, 1, 2}), Mask({1, 2}, 3)), ConfigError);
  EXPECT_THROW(multiclass_cross_entropy(Tensor<double>({3, 2, 2}), Mask({1, 2})), ShapeError);
}

TEST(LossTest, CrossEntropyGradientMatchesFiniteDifferences) {
  Rng rng(3);
  auto logits = fill_random<double>({5, 3, 4}, UniformDist{-3, 3}, rng);
  Mask target({3, 4});
  for (auto& v : target.values()) v = static_cast<std::uint8_t>(rng.below(5));
  const auto analytic = multiclass_cross_entropy(logits, target).grad;
  EXPECT_LE(test::max_fd_error(logits, analytic, [&] { return multiclass_cross_entropy(logits, target).loss; }),
            1e-6);
  // Softmax gradients sum to zero over channels at each pixel.
  for (std::size_t i = 0; i < 12; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += analytic[c * 12 + i];
    EXPECT_NEAR(s, 0.0, 1e-15);
  }
}

// ---------------------------------------------------------------------------
// Optimizers

// Independent scalar form of the update.
struct ScalarAdadelta {
  double rho, eps, eg2 = 0, edx2 = 0;
  double step(double x, double g) {
    eg2 = rho * eg2 + (1 - rho) * g * g;
    const double dx = -(std::sqrt(edx2 + eps) / std::sqrt(eg2 + eps)) * g;
    edx2 = rho * edx2 + (1 - rho) * dx * dx;
    return x + dx;
  }
};

TEST(AdadeltaTest, FirstStepHandValue) {
  Tensor<double> x({1});
  AdadeltaSlot<double> slot;
  adadelta_update(x, Tensor<double>({1}, 1.0), slot, {0.95, 1e-6});
  EXPECT_NEAR(slot.eg2[0], 0.05, 1e-15);
  EXPECT_NEAR(x[0], -std::sqrt(1e-6) / std::sqrt(0.05 + 1e-6), 1e-15);
  EXPECT_NEAR(x[0], -4.4721e-3, 1e-7);
}

TEST(AdadeltaTest, ZeroGradientOnlyDecaysAccumulators) {
  Tensor<double> x = Tensor<double>::vector({1.5, -2.0});
  AdadeltaSlot<double> slot{Tensor<double>::vector({0.4, 0.2}), Tensor<double>::vector({0.1, 0.3})};
  adadelta_update(x, Tensor<double>({2}), slot, {0.95, 1e-6});
  EXPECT_EQ(x, Tensor<double>::vector({1.5, -2.0}));
  EXPECT_DOUBLE_EQ(slot.eg2[0], 0.95 * 0.4);
  EXPECT_DOUBLE_EQ(slot.eg2[1], 0.95 * 0.2);
  EXPECT_DOUBLE_EQ(slot.edx2[0], 0.95 * 0.1);
  EXPECT_DOUBLE_EQ(slot.edx2[1], 0.95 * 0.3);
}

TEST(AdadeltaTest, QuadraticTrajectoryMatchesScalarOracle) {
  // f(x) = 0.5 a (x - c)^2
  const double a = 3.0, c = 1.25;
  Tensor<double> x({1}, -2.0);
  AdadeltaSlot<double> slot;
  ScalarAdadelta oracle{0.95, 1e-6};
  double xs = -2.0;
  for (int k = 0; k < 100; ++k) {
    adadelta_update(x, Tensor<double>({1}, a * (x[0] - c)), slot, {0.95, 1e-6});
    xs = oracle.step(xs, a * (xs - c));
    ASSERT_LE(std::abs(x[0] - xs), 1e-12) << k;
  }
  EXPECT_GT(x[0], -2.0);  // moved toward the minimum
}

TEST(AdadeltaTest, FirstStepIsScaleFree) {
  const AdadeltaConfig cfg{0.95, 1e-12};
  double steps[3];
  const double scales[3] = {1.0, 1e-1, 250.0};
  for (int i = 0; i < 3; ++i) {
    Tensor<double> x({1});
    AdadeltaSlot<double> slot;
    adadelta_update(x, Tensor<double>({1}, 0.7 * scales[i]), slot, cfg);
    steps[i] = x[0];
  }
  EXPECT_LE(std::abs(steps[1] - steps[0]) / std::abs(steps[0]), 1e-6);
  EXPECT_LE(std::abs(steps[2] - steps[0]) / std::abs(steps[0]), 1e-6);
}

TEST(AdadeltaTest, ShapeMismatchThrows) {
  Tensor<double> x({2});
  AdadeltaSlot<double> slot;
  EXPECT_THROW(adadelta_update(x, Tensor<double>({3}), slot, {}), ShapeError);
}

TEST(SgdTest, PlainStep) {
  Tensor<double> x = Tensor<double>::vector({1, 2});
  sgd_update(x, Tensor<double>::vector({0.5, -1}), 0.1);
  EXPECT_DOUBLE_EQ(x[0], 0.95);
  EXPECT_DOUBLE_EQ(x[1], 2.1);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(TrainTest, ZeroEpochsLeaveModelUntouched) {
  auto m = tiny_model("rfc-12s-mnist");
  const auto before = m.params;
  TrainConfig cfg;
  cfg.max_epochs = 0;
  const auto log = train(m, moving_mnist_windows(4, 1), {}, cfg);
  EXPECT_TRUE(log.epochs.empty());
  EXPECT_TRUE(bitwise_equal(m.params, before));
}

TEST(TrainTest, FreezingEverythingKeepsLossConstant) {
  auto m = tiny_model("rfc-12s-mnist");
  const auto before = m.params;
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.freeze = {"*"};
  const auto log = train(m, moving_mnist_windows(6, 2), {}, cfg);
  ASSERT_EQ(log.epochs.size(), 3u);
  EXPECT_EQ(log.epochs[1].loss, log.epochs[0].loss);
  EXPECT_EQ(log.epochs[2].loss, log.epochs[0].loss);
  EXPECT_TRUE(bitwise_equal(m.params, before));
}

TEST(TrainTest, FreezePatternsSelectByName) {
  auto m = tiny_model("rfc-12s-mnist");
  const auto frozen = resolve_freeze(m, {"pre.*", "rec.gru.b?z"});
  EXPECT_TRUE(std::find(frozen.begin(), frozen.end(), "pre.0.conv.weights") != frozen.end());
  EXPECT_TRUE(std::find(frozen.begin(), frozen.end(), "rec.gru.b_z") != frozen.end());
  EXPECT_TRUE(std::find(frozen.begin(), frozen.end(), "rec.gru.W_hz") == frozen.end());
  EXPECT_THROW(resolve_freeze(m, {"nothing.*"}), ConfigError);

  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.freeze = {"pre.*"};
  const auto before = m.params;
  train(m, moving_mnist_windows(4, 3), {}, cfg);
  for (std::size_t i = 0; i < m.params.pre.size(); ++i) EXPECT_EQ(m.params.pre[i].kernel.weights, before.pre[i].kernel.weights);
  EXPECT_NE(std::get<DenseGruParams<float>>(m.params.cell).W_hz,
            std::get<DenseGruParams<float>>(before.cell).W_hz);
}

TEST(TrainTest, TinyLenetLossDecreasesOverFirstEpochs) {
  auto m = tiny_model("rfc-lenet");
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.patience = 0;
  const auto log = train(m, moving_mnist_windows(50, 7), {}, cfg);
  ASSERT_EQ(log.epochs.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(log.epochs[e].loss, log.epochs[e - 1].loss) << e;
}

TEST(TrainTest, SingleThreadRunsAreBitwiseReproducible) {
  const auto data = moving_mnist_windows(12, 4);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 3;
  auto run = [&](std::size_t threads) {
    auto m = tiny_model("rfc-12s-mnist", 9);
    TrainConfig c = cfg;
    c.threads = threads;
    const auto log = train(m, data, {}, c);
    return std::make_pair(serialize_checkpoint(m), train_log_to_csv(log));
  };
  const auto a = run(1), b = run(1);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  const auto c = run(2), d = run(2);
  EXPECT_EQ(c.first, d.first);
  EXPECT_EQ(c.second, d.second);
}

TEST(TrainTest, DecoupledPhaseOneTouchesOnlyTheCell) {
  auto m = tiny_model("rfc-12s-mnist");
  const auto start = m.params;
  std::optional<ModelParams<float>> after_phase1;
  TrainHooks hooks;
  hooks.on_phase_end = [&](int phase, const Model<float>& cur) {
    if (phase == 1) after_phase1 = cur.params;
  };
  TrainConfig cfg;
  cfg.mode = TrainMode::decoupled;
  cfg.max_epochs = 2;
  const auto log = train(m, moving_mnist_windows(8, 5), {}, cfg, hooks);
  ASSERT_TRUE(after_phase1);
  ASSERT_EQ(log.epochs.size(), 4u);
  EXPECT_EQ(log.epochs[0].phase, 1);
  EXPECT_EQ(log.epochs[3].phase, 2);
  EXPECT_EQ(log.epochs[3].epoch, 4u);
  const auto s = named_tensors(start);
  const auto p1 = named_tensors(std::as_const(*after_phase1));
  const auto end = named_tensors(std::as_const(m.params));
  bool trunk_moved = false, cell_moved = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool rec = s[i].first.rfind("rec.", 0) == 0;
    if (!rec) {
      EXPECT_EQ(*p1[i].second, *s[i].second) << s[i].first;
      trunk_moved = trunk_moved || *end[i].second != *s[i].second;
    } else {
      cell_moved = cell_moved || *p1[i].second != *s[i].second;
    }
  }
  EXPECT_TRUE(cell_moved);
  EXPECT_TRUE(trunk_moved);
}

TEST(TrainTest, DecoupledLoadsBaselineTrunk) {
  const fs::path path = fs::temp_directory_path() / "rfcn_baseline.ckpt";
  Rng rng(21);
  auto baseline = build_model<float>(tiny_config(preset("fc-12s-mnist")), rng);
  save_checkpoint(baseline, path.string());
  auto m = tiny_model("rfc-12s-mnist", 22);
  std::optional<ModelParams<float>> p1;
  TrainHooks hooks;
  hooks.on_phase_end = [&](int phase, const Model<float>& cur) {
    if (phase == 1) p1 = cur.params;
  };
  TrainConfig cfg;
  cfg.mode = TrainMode::decoupled;
  cfg.max_epochs = 1;
  cfg.baseline_checkpoint = path.string();
  train(m, moving_mnist_windows(4, 6), {}, cfg, hooks);
  ASSERT_TRUE(p1);
  for (std::size_t i = 0; i < baseline.params.pre.size(); ++i)
    EXPECT_EQ(p1->pre[i].kernel.weights, baseline.params.pre[i].kernel.weights);
  fs::remove(path);
}

TEST(TrainTest, RejectsInvalidSettings) {
  auto m = tiny_model("fc-12s-mnist");
  const auto data = moving_mnist_windows(2, 8);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.mode = TrainMode::decoupled;
  EXPECT_THROW(train(m, data, {}, cfg), ConfigError);
  cfg.mode = TrainMode::end_to_end;
  EXPECT_THROW(train(m, {}, {}, cfg), ConfigError);
  cfg.window = 4;
  EXPECT_THROW(train(m, data, {}, cfg), ConfigError);
  cfg.window = 3;
  cfg.batch_size = 0;
  EXPECT_THROW(train(m, data, {}, cfg), ConfigError);
}

TEST(TrainTest, DivergenceAbortsWithDebugCheckpoint) {
  const fs::path path = fs::temp_directory_path() / "rfcn_diverged.ckpt";
  fs::remove(path);
  auto m = tiny_model("fc-12s-mnist");
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 1e30;
  cfg.debug_checkpoint = path.string();
  EXPECT_THROW(train(m, moving_mnist_windows(6, 9), {}, cfg), DivergenceError);
  EXPECT_TRUE(fs::exists(path));
  fs::remove(path);
}

TEST(TrainTest, EarlyStopKeepsBestEpoch) {
  auto m = tiny_model("fc-12s-mnist");
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.freeze = {"*"};
  cfg.patience = 3;
  const auto log = train(m, moving_mnist_windows(3, 10), {}, cfg);
  EXPECT_TRUE(log.early_stopped);
  EXPECT_EQ(log.epochs.size(), 4u);
  EXPECT_EQ(log.best_epoch, 1u);
}

TEST(TrainTest, ConfigJsonAndCsv) {
  TrainConfig c;
  c.max_epochs = 7;
  c.freeze = {"pre.*"};
  c.mode = TrainMode::decoupled;
  c.loss = LossKind::cross_entropy;
  c.seed = 99;
  EXPECT_EQ(train_config_from_json(train_config_to_json(c)), c);
  EXPECT_EQ(train_config_from_json("{\"batch_size\": 4}", c).batch_size, 4u);
  EXPECT_EQ(train_config_from_json("{\"batch_size\": 4}", c).seed, 99u);
  EXPECT_THROW(train_config_from_json("{\"lr\": 1}"), ConfigError);
  EXPECT_THROW(train_config_from_json("{\"mode\": \"sideways\"}"), ConfigError);
  TrainLog log;
  log.epochs.push_back({1, 0, 0.5, {1, 0.5, 0.25, 0.125}, 3.0});
  EXPECT_EQ(train_log_to_csv(log), "epoch,loss,precision,recall,f_measure,iou\n1,0.5,1,0.5,0.25,0.125\n");
}

// ---------------------------------------------------------------------------
// Inference

TEST(PredictTest, ThresholdEdges) {
  EXPECT_EQ(logits_to_mask(Tensor<float>({1, 3, 3}, -1e4f)), Mask({3, 3}, 0));
  EXPECT_EQ(logits_to_mask(Tensor<float>({1, 3, 3}, -1e4f), 0.0), Mask({3, 3}, 1));
  EXPECT_EQ(logits_to_mask(Tensor<float>({1, 3, 3}, 1e4f), 1.0), Mask({3, 3}, 0));
  Tensor<float> l({1, 1, 2});
  l[0] = 0.1f;
  l[1] = -0.1f;
  const Mask m = logits_to_mask(l);
  EXPECT_EQ(m[0], 1);
  EXPECT_EQ(m[1], 0);
  // sigmoid(l) > 0.7  <=>  l > 0.8473
  l[0] = 0.84f;
  l[1] = 0.85f;
  EXPECT_EQ(logits_to_mask(l, 0.7)[0], 0);
  EXPECT_EQ(logits_to_mask(l, 0.7)[1], 1);
}

TEST(PredictTest, ArgmaxMatchesScan) {
  Rng rng(12);
  auto logits = fill_random<float>({6, 5, 7}, UniformDist{-2, 2}, rng);
  logits[0 * 35 + 3] = logits[4 * 35 + 3] = 5.0f;  // tie resolves to class 0
  const Mask m = logits_to_mask(logits);
  for (std::size_t i = 0; i < 35; ++i) {
    std::size_t best = 0;
    float best_v = logits[i];
    for (std::size_t c = 0; c < 6; ++c)
      if (logits[c * 35 + i] > best_v) best_v = logits[c * 35 + i], best = c;
    ASSERT_EQ(m[i], best);
  }
  EXPECT_EQ(m[3], 0);
}

TEST(PredictTest, WindowLengthMustMatch) {
  const auto m = tiny_model("fc-12s-mnist");
  const auto data = moving_mnist_windows(1, 13);
  EXPECT_EQ(predict(m, data[0].window).shape(), (Shape{28, 28}));
  std::vector<Tensor<float>> two(data[0].window.begin(), data[0].window.begin() + 2);
  EXPECT_THROW(predict(m, two), ShapeError);
}

TEST(PredictTest, EvaluateAgreesWithPredictPlusEvaluator) {
  const auto m = tiny_model("rfc-12s-mnist");
  const auto data = moving_mnist_windows(5, 14);
  Evaluator ev(2);
  for (const auto& s : data) ev.add(predict(m, s.window), s.target);
  const auto a = evaluate(m, data, 0.5, 1), b = evaluate(m, data, 0.5, 3);
  EXPECT_EQ(a.pooled.f_measure, ev.report().pooled.f_measure);
  EXPECT_EQ(a.per_class[1].tp, b.per_class[1].tp);
  EXPECT_EQ(a.per_class[1].fp, b.per_class[1].fp);
}

}  // namespace
}  // namespace rfcn
