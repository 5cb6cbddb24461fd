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

#include "rfcn/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fnmatch.h>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "rfcn/checkpoint.hpp"

namespace rfcn {

// ---------------------------------------------------------------------------
// Losses

template <typename T>
LossResult<T> logistic_loss(const Tensor<T>& logits, const Mask& target) {
  if (logits.size() != target.size()) {
    throw ShapeError("logistic_loss: logits " + shape_string(logits.shape()) + " do not match target " +
                     shape_string(target.shape()));
  }
  const std::size_t n = logits.size();
  LossResult<T> out{0.0, Tensor<T>(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t y = target[i];
    if (y > 1) throw ConfigError("logistic_loss: target value " + std::to_string(y) + " is not 0 or 1");
    const double l = static_cast<double>(logits[i]);
    out.loss += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
    const double s = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
    out.grad[i] = static_cast<T>((s - y) * inv_n);
  }
  out.loss *= inv_n;
  return out;
}

template <typename T>
LossResult<T> multiclass_cross_entropy(const Tensor<T>& logits, const Mask& target) {
  if (logits.rank() != 3 || target.rank() != 2 || logits.dim(1) != target.dim(0) || logits.dim(2) != target.dim(1)) {
    throw ShapeError("multiclass_cross_entropy: logits " + shape_string(logits.shape()) + " do not match target " +
                     shape_string(target.shape()));
  }
  const std::size_t C = logits.dim(0), plane = target.size();
  LossResult<T> out{0.0, Tensor<T>(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(plane);
  std::vector<double> e(C);
  for (std::size_t i = 0; i < plane; ++i) {
    const std::size_t y = target[i];
    if (y >= C) {
      throw ConfigError("multiclass_cross_entropy: class id " + std::to_string(y) + " needs more than " +
                        std::to_string(C) + " channels");
    }
    double mx = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits[c * plane + i]));
    double z = 0;
    for (std::size_t c = 0; c < C; ++c) z += (e[c] = std::exp(static_cast<double>(logits[c * plane + i]) - mx));
    out.loss += std::log(z) + mx - static_cast<double>(logits[y * plane + i]);
    for (std::size_t c = 0; c < C; ++c) {
      out.grad[c * plane + i] = static_cast<T>((e[c] / z - (c == y ? 1.0 : 0.0)) * inv_n);
    }
  }
  out.loss *= inv_n;
  return out;
}

std::string_view loss_kind_name(LossKind k) { return k == LossKind::logistic ? "logistic" : "cross_entropy"; }

LossKind parse_loss_kind(std::string_view name) {
  if (name == "logistic") return LossKind::logistic;
  if (name == "cross_entropy") return LossKind::cross_entropy;
  throw ConfigError("unknown loss '" + std::string(name) + "' (logistic, cross_entropy)");
}

template <typename T>
LossResult<T> compute_loss(LossKind kind, const Tensor<T>& logits, const Mask& target) {
  return kind == LossKind::logistic ? logistic_loss(logits, target) : multiclass_cross_entropy(logits, target);
}

// ---------------------------------------------------------------------------
// Optimizers

template <typename T>
void adadelta_update(Tensor<T>& param, const Tensor<T>& grad, AdadeltaSlot<T>& slot, const AdadeltaConfig& cfg) {
  if (grad.shape() != param.shape()) throw ShapeError("adadelta: gradient shape does not match parameter");
  if (slot.eg2.empty() && param.size() != 0) {
    slot.eg2 = Tensor<T>(param.shape());
    slot.edx2 = Tensor<T>(param.shape());
  }
  if (slot.eg2.shape() != param.shape()) throw ShapeError("adadelta: state shape does not match parameter");
  const T rho = static_cast<T>(cfg.rho), eps = static_cast<T>(cfg.eps), one_minus = T{1} - rho;
  T* p = param.data();
  const T* g = grad.data();
  T* eg2 = slot.eg2.data();
  T* edx2 = slot.edx2.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    eg2[i] = rho * eg2[i] + one_minus * g[i] * g[i];
    const T dx = -std::sqrt(edx2[i] + eps) / std::sqrt(eg2[i] + eps) * g[i];
    edx2[i] = rho * edx2[i] + one_minus * dx * dx;
    p[i] += dx;
  }
}

template <typename T>
void sgd_update(Tensor<T>& param, const Tensor<T>& grad, double learning_rate) {
  if (grad.shape() != param.shape()) throw ShapeError("sgd: gradient shape does not match parameter");
  const T lr = static_cast<T>(learning_rate);
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

std::string_view optimizer_kind_name(OptimizerKind k) { return k == OptimizerKind::adadelta ? "adadelta" : "sgd"; }

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adadelta") return OptimizerKind::adadelta;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (adadelta, sgd)");
}

std::string_view train_mode_name(TrainMode m) { return m == TrainMode::end_to_end ? "end_to_end" : "decoupled"; }

TrainMode parse_train_mode(std::string_view name) {
  if (name == "end_to_end") return TrainMode::end_to_end;
  if (name == "decoupled") return TrainMode::decoupled;
  throw ConfigError("unknown training mode '" + std::string(name) + "' (end_to_end, decoupled)");
}

// ---------------------------------------------------------------------------
// Config and log files

std::string train_config_to_json(const TrainConfig& c) {
  nlohmann::json j = {{"max_epochs", c.max_epochs},
                      {"batch_size", c.batch_size},
                      {"window", c.window},
                      {"mode", train_mode_name(c.mode)},
                      {"phase1_epochs", c.phase1_epochs},
                      {"baseline_checkpoint", c.baseline_checkpoint},
                      {"freeze", c.freeze},
                      {"loss", loss_kind_name(c.loss)},
                      {"optimizer", optimizer_kind_name(c.optimizer)},
                      {"rho", c.adadelta.rho},
                      {"eps", c.adadelta.eps},
                      {"learning_rate", c.learning_rate},
                      {"seed", c.seed},
                      {"shuffle", c.shuffle},
                      {"patience", c.patience},
                      {"threshold", c.threshold},
                      {"threads", c.threads},
                      {"debug_checkpoint", c.debug_checkpoint}};
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(std::string_view text, const TrainConfig& base) {
  TrainConfig c = base;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
    for (const auto& [key, v] : j.items()) {
      if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "window") c.window = v.get<std::size_t>();
      else if (key == "mode") c.mode = parse_train_mode(v.get<std::string>());
      else if (key == "phase1_epochs") c.phase1_epochs = v.get<std::size_t>();
      else if (key == "baseline_checkpoint") c.baseline_checkpoint = v.get<std::string>();
      else if (key == "freeze") c.freeze = v.get<std::vector<std::string>>();
      else if (key == "loss") c.loss = parse_loss_kind(v.get<std::string>());
      else if (key == "optimizer") c.optimizer = parse_optimizer_kind(v.get<std::string>());
      else if (key == "rho") c.adadelta.rho = v.get<double>();
      else if (key == "eps") c.adadelta.eps = v.get<double>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "shuffle") c.shuffle = v.get<bool>();
      else if (key == "patience") c.patience = v.get<std::size_t>();
      else if (key == "threshold") c.threshold = v.get<double>();
      else if (key == "threads") c.threads = v.get<std::size_t>();
      else if (key == "debug_checkpoint") c.debug_checkpoint = v.get<std::string>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

std::string train_log_to_csv(const TrainLog& log) {
  std::ostringstream os;
  os << "epoch,loss,precision,recall,f_measure,iou\n";
  char buf[192];
  for (const auto& e : log.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.loss, e.validation.precision,
                  e.validation.recall, e.validation.f_measure, e.validation.iou);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<std::string> resolve_freeze(const Model<float>& m, const std::vector<std::string>& patterns) {
  std::set<std::string> out;
  const auto tensors = named_tensors(m.params);
  for (const auto& pat : patterns) {
    bool hit = false;
    for (const auto& [name, t] : tensors) {
      if (fnmatch(pat.c_str(), name.c_str(), 0) == 0) {
        out.insert(name);
        hit = true;
      }
    }
    if (!hit) throw ConfigError("freeze pattern '" + pat + "' matches no parameter");
  }
  return {out.begin(), out.end()};
}

std::size_t load_trunk(Model<float>& m, const Model<float>& baseline) {
  std::map<std::string, const Tensor<float>*> src;
  for (const auto& [name, t] : named_tensors(baseline.params)) src.emplace(name, t);
  std::size_t copied = 0;
  for (auto& [name, t] : named_tensors(m.params)) {
    if (name.rfind("rec.", 0) == 0) continue;
    auto it = src.find(name);
    if (it == src.end()) throw ConfigError("baseline checkpoint lacks trunk tensor '" + name + "'");
    if (it->second->shape() != t->shape()) {
      throw ShapeError("baseline tensor '" + name + "' is " + shape_string(it->second->shape()) + ", model needs " +
                       shape_string(t->shape()));
    }
    *t = *it->second;
    ++copied;
  }
  return copied;
}

namespace {

bool all_finite(const ModelParams<float>& g) {
  // A float is non-finite exactly when its exponent bits are all set. The OR
  // reduction vectorises where a short-circuiting isfinite loop does not.
  std::uint32_t bad = 0;
  g.visit([&](const std::string&, const Tensor<float>& t) {
    for (float v : t.values()) bad |= (std::bit_cast<std::uint32_t>(v) & 0x7f800000u) == 0x7f800000u;
  });
  return bad == 0;
}

void zero(ModelParams<float>& g) {
  g.visit([](const std::string&, Tensor<float>& t) { t.fill(0.0f); });
}

// Runs `fn(worker)` on `threads` workers (inline when there is one).
template <typename Fn>
void run_workers(std::size_t threads, Fn&& fn) {
  if (threads <= 1) {
    fn(std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        fn(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

class Trainer {
 public:
  Trainer(Model<float>& m, const std::vector<SequenceSample>& train, const std::vector<SequenceSample>& validation,
          const TrainConfig& cfg, const TrainHooks& hooks)
      : m_(m),
        train_(train),
        validation_(validation.empty() ? train : validation),
        cfg_(cfg),
        hooks_(hooks),
        shuffle_rng_(derive_seed(cfg.seed, 0x5348)) {
    const std::size_t workers = std::max<std::size_t>(1, std::min(cfg_.threads, cfg_.batch_size));
    for (std::size_t w = 0; w < workers; ++w) worker_grads_.push_back(zeros_like(m_.params));
    slots_.resize(named_tensors(m_.params).size());
    order_.resize(train_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }

  void run_phase(int phase, std::size_t max_epochs, const std::set<std::string>& frozen) {
    frozen_.clear();
    bool trunk_frozen = true;
    for (const auto& [name, t] : named_tensors(m_.params)) {
      const bool f = frozen.count(name) > 0;
      frozen_.push_back(f);
      if (!f && (name.rfind("pre.", 0) == 0)) trunk_frozen = false;
    }
    through_trunk_ = !trunk_frozen;
    // Each phase keeps its own best; phase 2 starts from phase 1's.
    best_.reset();
    best_f_ = -1;
    std::size_t since_best = 0;
    for (std::size_t e = 0; e < max_epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochRecord rec;
      rec.epoch = ++epoch_;
      rec.phase = phase;
      rec.loss = run_epoch();
      rec.validation = evaluate(m_, validation_, cfg_.threshold, cfg_.threads).pooled;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log_.epochs.push_back(rec);
      if (hooks_.on_epoch) hooks_.on_epoch(rec);
      if (!best_ || rec.validation.f_measure > best_f_) {
        best_ = m_.params;
        best_f_ = rec.validation.f_measure;
        log_.best_epoch = rec.epoch;
        since_best = 0;
      } else if (cfg_.patience > 0 && ++since_best >= cfg_.patience) {
        log_.early_stopped = true;
        break;
      }
    }
    if (best_) m_.params = *best_;
    if (hooks_.on_phase_end) hooks_.on_phase_end(phase, m_);
  }

  TrainLog take_log() { return std::move(log_); }

 private:
  double run_epoch() {
    if (cfg_.shuffle) {
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[shuffle_rng_.below(i)]);
    }
    double total = 0;
    for (std::size_t start = 0; start < order_.size(); start += cfg_.batch_size) {
      const std::size_t count = std::min(cfg_.batch_size, order_.size() - start);
      total += run_batch(start, count);
    }
    return total / static_cast<double>(order_.size());
  }

  double run_batch(std::size_t start, std::size_t count) {
    const std::size_t workers = std::min(worker_grads_.size(), count);
    std::vector<double> losses(workers, 0.0);
    for (std::size_t w = 0; w < workers; ++w) zero(worker_grads_[w]);
    try {
      run_workers(workers, [&](std::size_t w) {
        for (std::size_t j = w; j < count; j += workers) {
          const SequenceSample& s = train_[order_[start + j]];
          auto out = forward_window(m_, s.window);
          auto loss = compute_loss(cfg_.loss, out.logits, s.target);
          losses[w] += loss.loss;
          backward_window_into(loss.grad, out.cache, m_, worker_grads_[w], through_trunk_);
        }
      });
    } catch (const NumericError& e) {
      diverge(std::string("non-finite activation: ") + e.what());
    }
    double loss = 0;
    for (double l : losses) loss += l;
    if (!std::isfinite(loss)) diverge("non-finite loss");

    ModelParams<float>& g = worker_grads_[0];
    for (std::size_t w = 1; w < workers; ++w) {
      auto dst = named_tensors(g);
      auto src = named_tensors(std::as_const(worker_grads_[w]));
      for (std::size_t i = 0; i < dst.size(); ++i) accumulate(*dst[i].second, *src[i].second);
    }
    if (count > 1) {
      const float inv = 1.0f / static_cast<float>(count);
      g.visit([&](const std::string&, Tensor<float>& t) {
        for (float& v : t.values()) v *= inv;
      });
    }
    if (!all_finite(g)) diverge("non-finite gradient");

    auto params = named_tensors(m_.params);
    auto grads = named_tensors(std::as_const(g));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (frozen_[i]) continue;
      if (cfg_.optimizer == OptimizerKind::adadelta) {
        adadelta_update(*params[i].second, *grads[i].second, slots_[i], cfg_.adadelta);
      } else {
        sgd_update(*params[i].second, *grads[i].second, cfg_.learning_rate);
      }
    }
    return loss;
  }

  [[noreturn]] void diverge(const std::string& why) {
    if (!cfg_.debug_checkpoint.empty()) save_checkpoint(m_, cfg_.debug_checkpoint);
    throw DivergenceError("training diverged in epoch " + std::to_string(epoch_ + 1) + ": " + why +
                          (cfg_.debug_checkpoint.empty() ? "" : "; state written to " + cfg_.debug_checkpoint));
  }

  Model<float>& m_;
  const std::vector<SequenceSample>& train_;
  const std::vector<SequenceSample>& validation_;
  const TrainConfig& cfg_;
  const TrainHooks& hooks_;
  Rng shuffle_rng_;
  std::vector<ModelParams<float>> worker_grads_;
  std::vector<AdadeltaSlot<float>> slots_;
  std::vector<std::size_t> order_;
  std::vector<bool> frozen_;
  bool through_trunk_ = true;
  std::size_t epoch_ = 0;
  std::optional<ModelParams<float>> best_;
  double best_f_ = -1;
  TrainLog log_;
};

}  // namespace

TrainLog train(Model<float>& m, const std::vector<SequenceSample>& train_set,
               const std::vector<SequenceSample>& validation, const TrainConfig& cfg, const TrainHooks& hooks) {
  if (cfg.batch_size == 0) throw ConfigError("train: batch size must be at least 1");
  if (cfg.window == 0) throw ConfigError("train: window length must be at least 1");
  if (cfg.threads == 0) throw ConfigError("train: thread count must be at least 1");
  if (!(cfg.adadelta.rho >= 0 && cfg.adadelta.rho < 1) || !(cfg.adadelta.eps > 0)) {
    throw ConfigError("train: Adadelta needs 0 <= rho < 1 and eps > 0");
  }
  if (train_set.empty()) throw ConfigError("train: the training set is empty");
  for (const auto* set : {&train_set, &validation})
    for (const auto& s : *set) {
      if (s.window.size() != cfg.window) {
        throw ConfigError("train: sample '" + s.sequence_id + "' has " + std::to_string(s.window.size()) +
                          " frames, window length is " + std::to_string(cfg.window));
      }
    }
  m.config.window = cfg.window;
  const bool recurrent = m.config.recurrent.cell != CellKind::none;
  if (cfg.mode == TrainMode::decoupled && !recurrent) {
    throw ConfigError("train: decoupled mode needs a recurrent cell");
  }
  const auto user_frozen = resolve_freeze(m, cfg.freeze);
  const std::set<std::string> frozen(user_frozen.begin(), user_frozen.end());

  if (cfg.max_epochs == 0) return {};
  Trainer trainer(m, train_set, validation, cfg, hooks);
  if (cfg.mode == TrainMode::end_to_end) {
    trainer.run_phase(0, cfg.max_epochs, frozen);
  } else {
    if (!cfg.baseline_checkpoint.empty()) load_trunk(m, load_checkpoint(cfg.baseline_checkpoint));
    std::set<std::string> phase1 = frozen;
    for (const auto& [name, t] : named_tensors(m.params))
      if (name.rfind("rec.", 0) != 0) phase1.insert(name);
    trainer.run_phase(1, cfg.phase1_epochs ? cfg.phase1_epochs : cfg.max_epochs, phase1);
    trainer.run_phase(2, cfg.max_epochs, frozen);
  }
  return trainer.take_log();
}

// ---------------------------------------------------------------------------
// Inference

Mask logits_to_mask(const Tensor<float>& logits, double threshold) {
  if (logits.rank() != 3) throw ShapeError("logits must be C x H x W, got " + shape_string(logits.shape()));
  const std::size_t C = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  Mask m({logits.dim(1), logits.dim(2)});
  if (C == 1) {
    // sigmoid(l) > t  <=>  l > log(t / (1 - t)); avoids saturating sigmoid.
    if (threshold <= 0) {
      m.fill(1);
    } else if (threshold < 1) {
      const double cut = std::log(threshold / (1 - threshold));
      for (std::size_t i = 0; i < plane; ++i) m[i] = static_cast<double>(logits[i]) > cut ? 1 : 0;
    }
    return m;
  }
  if (C > 256) throw ShapeError("logits_to_mask: more than 256 classes do not fit a mask");
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (logits[c * plane + i] > logits[best * plane + i]) best = c;
    m[i] = static_cast<std::uint8_t>(best);
  }
  return m;
}

Mask predict(const Model<float>& m, const std::vector<Tensor<float>>& window, double threshold) {
  if (window.size() != m.config.window) {
    throw ShapeError("predict: window has " + std::to_string(window.size()) + " frames, model expects " +
                     std::to_string(m.config.window));
  }
  return logits_to_mask(forward_window(m, window).logits, threshold);
}

std::size_t mask_classes(const ArchitectureConfig& cfg) { return cfg.num_classes == 1 ? 2 : cfg.num_classes; }

MetricsReport evaluate(const Model<float>& m, const std::vector<SequenceSample>& samples, double threshold,
                       std::size_t threads, std::optional<CategoryMap> categories) {
  std::vector<Mask> preds(samples.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, samples.size()));
  run_workers(workers, [&](std::size_t w) {
    for (std::size_t i = w; i < samples.size(); i += workers) {
      preds[i] = logits_to_mask(forward_window(m, samples[i].window).logits, threshold);
    }
  });
  Evaluator ev(mask_classes(m.config), std::move(categories));
  for (std::size_t i = 0; i < samples.size(); ++i) ev.add(preds[i], samples[i].target);
  return ev.report();
}

#define RFCN_INSTANTIATE(T)                                                                      \
  template LossResult<T> logistic_loss(const Tensor<T>&, const Mask&);                           \
  template LossResult<T> multiclass_cross_entropy(const Tensor<T>&, const Mask&);                \
  template LossResult<T> compute_loss(LossKind, const Tensor<T>&, const Mask&);                  \
  template void adadelta_update(Tensor<T>&, const Tensor<T>&, AdadeltaSlot<T>&, const AdadeltaConfig&); \
  template void sgd_update(Tensor<T>&, const Tensor<T>&, double);

RFCN_INSTANTIATE(float)
RFCN_INSTANTIATE(double)

#undef RFCN_INSTANTIATE

}  // namespace rfcn
