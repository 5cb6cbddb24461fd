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
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rfcn/data.hpp"
#include "rfcn/metrics.hpp"
#include "rfcn/model.hpp"

namespace rfcn {

// ---------------------------------------------------------------------------
// Losses (means over pixels)

template <typename T>
struct LossResult {
  double loss = 0;
  Tensor<T> grad;  // d loss / d logits, logits' shape
};

/// Sigmoid cross-entropy against a 0/1 mask, computed as
/// max(l, 0) - l y + log1p(exp(-|l|)). Gradient (sigmoid(l) - y) / N.
/// `logits` must hold exactly one value per mask pixel.
template <typename T>
LossResult<T> logistic_loss(const Tensor<T>& logits, const Mask& target);

/// Softmax cross-entropy over the channels of C x H x W logits against a
/// class-id map. Gradient (softmax - onehot) / (H W).
template <typename T>
LossResult<T> multiclass_cross_entropy(const Tensor<T>& logits, const Mask& target);

enum class LossKind { logistic, cross_entropy };
std::string_view loss_kind_name(LossKind k);
LossKind parse_loss_kind(std::string_view name);

template <typename T>
LossResult<T> compute_loss(LossKind kind, const Tensor<T>& logits, const Mask& target);

// ---------------------------------------------------------------------------
// Optimizers

struct AdadeltaConfig {
  double rho = 0.95;
  double eps = 1e-6;

  bool operator==(const AdadeltaConfig&) const = default;
};

/// Running averages for one parameter tensor.
template <typename T>
struct AdadeltaSlot {
  Tensor<T> eg2;   // E[g^2]
  Tensor<T> edx2;  // E[dx^2]
};

/**
 * One Adadelta update, elementwise:
 *   E[g2]  <- rho E[g2] + (1 - rho) g^2
 *   dx      = -sqrt(E[dx2] + eps) / sqrt(E[g2] + eps) * g
 *   E[dx2] <- rho E[dx2] + (1 - rho) dx^2
 *   param  += dx
 * Empty slots are initialised to zeros of the parameter's shape.
 */
template <typename T>
void adadelta_update(Tensor<T>& param, const Tensor<T>& grad, AdadeltaSlot<T>& slot, const AdadeltaConfig& cfg);

template <typename T>
void sgd_update(Tensor<T>& param, const Tensor<T>& grad, double learning_rate);

enum class OptimizerKind { adadelta, sgd };
std::string_view optimizer_kind_name(OptimizerKind k);
OptimizerKind parse_optimizer_kind(std::string_view name);

// ---------------------------------------------------------------------------
// Training

enum class TrainMode { end_to_end, decoupled };
std::string_view train_mode_name(TrainMode m);
TrainMode parse_train_mode(std::string_view name);

struct TrainConfig {
  std::size_t max_epochs = 500;
  std::size_t batch_size = 1;
  std::size_t window = 3;
  TrainMode mode = TrainMode::end_to_end;
  /// Decoupled phase 1 epoch cap; 0 means max_epochs.
  std::size_t phase1_epochs = 0;
  /// Optional checkpoint of the non-recurrent baseline whose trunk seeds
  /// decoupled phase 1.
  std::string baseline_checkpoint;
  /// Glob patterns (`*`, `?`) over parameter names; these never update.
  std::vector<std::string> freeze;
  LossKind loss = LossKind::logistic;
  OptimizerKind optimizer = OptimizerKind::adadelta;
  AdadeltaConfig adadelta;
  double learning_rate = 0.01;  // SGD only
  std::uint64_t seed = 0;
  bool shuffle = true;
  /// Epochs without a validation F improvement before stopping; 0 disables.
  std::size_t patience = 20;
  double threshold = 0.5;
  std::size_t threads = 1;
  /// Written before a DivergenceError is thrown, when non-empty.
  std::string debug_checkpoint;

  bool operator==(const TrainConfig&) const = default;
};

std::string train_config_to_json(const TrainConfig& c);
/// Keys missing from `text` keep their value in `base`.
TrainConfig train_config_from_json(std::string_view text, const TrainConfig& base = {});

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, monotone across phases
  int phase = 0;          // 0 end-to-end, 1 or 2 decoupled
  double loss = 0;        // mean training loss over the epoch's windows
  MetricSummary validation;
  double seconds = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 if no epoch ran
  bool early_stopped = false;
};

/// Columns epoch, loss, precision, recall, f_measure, iou. Wall-clock time is
/// kept out of the file so identical runs produce identical logs.
std::string train_log_to_csv(const TrainLog& log);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called with the model as it stands after each phase.
  std::function<void(int phase, const Model<float>&)> on_phase_end;
};

/// Names of `m` matching any pattern; ConfigError if a pattern matches none.
std::vector<std::string> resolve_freeze(const Model<float>& m, const std::vector<std::string>& patterns);

/// Copies every non-recurrent tensor of `baseline` into `m` (names and
/// shapes must agree). Returns the number of tensors copied.
std::size_t load_trunk(Model<float>& m, const Model<float>& baseline);

/**
 * Trains `m` in place on `train` and returns the epoch log. Validation
 * metrics come from `validation`, or from `train` when it is empty, and
 * drive early stopping; each phase ends on its best-scoring parameters.
 *
 * Updates are single-threaded. Windows of a mini-batch are spread over
 * `cfg.threads` workers (window j to worker j mod threads) and their
 * gradients summed in worker order, so results depend only on the seed and
 * the thread count.
 *
 * Throws ConfigError for invalid settings and DivergenceError on a
 * non-finite loss or gradient.
 */
TrainLog train(Model<float>& m, const std::vector<SequenceSample>& train, const std::vector<SequenceSample>& validation,
               const TrainConfig& cfg, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Inference

/// One-channel logits: foreground where sigmoid(l) > threshold. Multi-channel
/// logits: argmax over channels, first maximum on ties.
Mask logits_to_mask(const Tensor<float>& logits, double threshold = 0.5);

/// Segments the last frame of `window`, which must hold config.window frames.
Mask predict(const Model<float>& m, const std::vector<Tensor<float>>& window, double threshold = 0.5);

/// Number of classes a model's masks range over.
std::size_t mask_classes(const ArchitectureConfig& cfg);

/// Predicts every sample and scores it against its target.
MetricsReport evaluate(const Model<float>& m, const std::vector<SequenceSample>& samples, double threshold = 0.5,
                       std::size_t threads = 1, std::optional<CategoryMap> categories = std::nullopt);

}  // namespace rfcn
