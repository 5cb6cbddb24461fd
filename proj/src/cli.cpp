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

#include "rfcn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "rfcn/checkpoint.hpp"
#include "rfcn/data.hpp"
#include "rfcn/error.hpp"
#include "rfcn/gradcheck.hpp"
#include "rfcn/io.hpp"
#include "rfcn/metrics.hpp"
#include "rfcn/model.hpp"
#include "rfcn/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace rfcn {
namespace {

// ---------------------------------------------------------------------------
// Shared helpers

std::size_t env_threads() {
  const char* v = std::getenv("RFCN_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const unsigned long long n = std::strtoull(v, &end, 10);
  if (*end != '\0' || n == 0) throw ConfigError(std::string("RFCN_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

ArchitectureConfig load_arch(const std::string& spec) {
  if (spec.size() > 5 && spec.substr(spec.size() - 5) == ".json") return load_config_file(spec);
  return preset(spec);
}

std::string stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

// Deterministic parallel map: item i goes to worker i mod threads and writes
// only its own slot.
template <typename Out, typename Fn>
std::vector<Out> parallel_map(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<Out> out(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string images, labels, out;
  std::size_t sequences = 0;
  std::size_t test_sequences = 0;
  double test_digits = 0.2;
  std::size_t length = 3;
  std::string mode = "binary";
  std::string boundary = "bounce";
  double threshold = 0.5;
  double min_speed = 0.5, max_speed = 2.0;
  std::uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  MovingMnistOptions opts;
  opts.mode = parse_label_mode(a.mode);
  opts.boundary = parse_boundary_policy(a.boundary);
  opts.threshold = a.threshold;
  opts.min_speed = a.min_speed;
  opts.max_speed = a.max_speed;
  if (a.length == 0) throw ConfigError("gen-data: --length must be positive");
  if (!(a.test_digits > 0 && a.test_digits < 1)) throw ConfigError("gen-data: --test-digits must lie in (0, 1)");
  if (!(a.min_speed >= 0 && a.min_speed <= a.max_speed)) throw ConfigError("gen-data: need 0 <= min speed <= max speed");

  const fs::path dest(a.out);
  std::error_code ec;
  if (fs::exists(dest, ec) && !fs::is_empty(dest, ec) && !fs::exists(dest / "manifest.json", ec)) {
    throw ConfigError("gen-data: '" + a.out + "' exists and is not a generated dataset; refusing to replace it");
  }

  const auto digits = load_mnist_idx(a.images, a.labels);
  // Test sequences draw from the tail of the digit file so no digit image
  // appears on both sides.
  const auto n_test_digits = static_cast<std::size_t>(std::llround(a.test_digits * static_cast<double>(digits.size())));
  if (n_test_digits == 0 || n_test_digits >= digits.size()) throw ConfigError("gen-data: too few digits to split");
  const std::span<const MnistDigit> train_pool(digits.data(), digits.size() - n_test_digits);
  const std::span<const MnistDigit> test_pool(digits.data() + train_pool.size(), n_test_digits);

  Manifest manifest;
  manifest.label_mode = opts.mode;
  manifest.num_classes = opts.mode == LabelMode::binary ? 2 : 11;
  manifest.seed = a.seed;

  const fs::path tmp = dest.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  auto emit = [&](const std::string& split, std::size_t i, std::span<const MnistDigit> pool, std::uint64_t stream) {
    Rng rng(derive_seed(a.seed, stream));
    const MotionSpec motion = sample_motion(rng, opts);
    VideoSequence seq = gen_moving_mnist(pool, motion, a.length, rng, opts);
    seq.id = split + "_" + stem(i);
    save_sequence((tmp / seq.id).string(), seq);
    manifest.sequences.push_back({seq.id, seq.id + "/frames", seq.id + "/masks", a.length, split});
  };
  try {
    for (std::size_t i = 0; i < a.sequences; ++i) emit("train", i, train_pool, 2 * i);
    for (std::size_t i = 0; i < a.test_sequences; ++i) emit("test", i, test_pool, 2 * i + 1);
    save_manifest((tmp / "manifest.json").string(), manifest);
    fs::remove_all(dest);
    fs::rename(tmp, dest);
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
  out << "wrote " << a.sequences << " train and " << a.test_sequences << " test sequences of " << a.length
      << " frames to " << (dest / "manifest.json").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string arch, data, config, out, log;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  std::size_t threads = 1;
  // Overrides; applied only when given.
  std::size_t max_epochs = 0, batch_size = 0, window = 0, phase1_epochs = 0, patience = 0;
  std::string mode, optimizer, loss, baseline;
  std::vector<std::string> freeze;
  double learning_rate = 0, rho = 0, eps = 0, threshold = 0;
  bool no_shuffle = false;
};

// Holds out the last round(fraction * n) of the n training sequences (in
// manifest order) as whole sequences for validation. Falls back to validating
// on the training set when that would leave either side empty.
std::pair<std::vector<SequenceSample>, std::vector<SequenceSample>> carve_validation(
    std::vector<SequenceSample> windows, double fraction, std::ostream& err) {
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (const auto& s : windows)
    if (seen.insert(s.sequence_id).second) order.push_back(s.sequence_id);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size())));
  if (n_val == 0 || n_val >= order.size()) {
    if (fraction > 0) err << "note: too few sequences to hold out a validation set; validating on training windows\n";
    return {std::move(windows), {}};
  }
  const std::set<std::string> held(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<SequenceSample> train_set, validation;
  for (auto& s : windows) (held.count(s.sequence_id) ? validation : train_set).push_back(std::move(s));
  return {std::move(train_set), std::move(validation)};
}

int cmd_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  auto given = [&](const char* name) { return sub.count(name) > 0; };
  ArchitectureConfig arch = load_arch(a.arch);
  shape_check(arch);

  TrainConfig cfg;
  cfg.window = arch.window;
  cfg.loss = arch.num_classes > 1 ? LossKind::cross_entropy : LossKind::logistic;
  if (!a.config.empty()) cfg = train_config_from_json(read_file(a.config), cfg);
  if (given("--max-epochs")) cfg.max_epochs = a.max_epochs;
  if (given("--batch-size")) cfg.batch_size = a.batch_size;
  if (given("--window")) cfg.window = a.window;
  if (given("--mode")) cfg.mode = parse_train_mode(a.mode);
  if (given("--phase1-epochs")) cfg.phase1_epochs = a.phase1_epochs;
  if (given("--baseline")) cfg.baseline_checkpoint = a.baseline;
  if (given("--freeze")) cfg.freeze = a.freeze;
  if (given("--loss")) cfg.loss = parse_loss_kind(a.loss);
  if (given("--optimizer")) cfg.optimizer = parse_optimizer_kind(a.optimizer);
  if (given("--lr")) cfg.learning_rate = a.learning_rate;
  if (given("--rho")) cfg.adadelta.rho = a.rho;
  if (given("--eps")) cfg.adadelta.eps = a.eps;
  if (given("--patience")) cfg.patience = a.patience;
  if (given("--threshold")) cfg.threshold = a.threshold;
  if (a.no_shuffle) cfg.shuffle = false;
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--threads") || a.config.empty()) cfg.threads = a.threads;
  if (cfg.debug_checkpoint.empty()) cfg.debug_checkpoint = a.out + ".diverged";
  if (!(a.validation_fraction >= 0 && a.validation_fraction < 1)) {
    throw ConfigError("train: --validation-fraction must lie in [0, 1)");
  }
  arch.window = cfg.window;

  const Manifest manifest = load_manifest(a.data);
  if (manifest.num_classes != mask_classes(arch)) {
    throw ConfigError("train: data has " + std::to_string(manifest.num_classes) + " classes but '" + arch.name +
                      "' predicts " + std::to_string(mask_classes(arch)));
  }
  auto windows = load_manifest_windows(a.data, cfg.window);
  if (windows.train.empty()) throw ConfigError("train: the manifest has no training windows");
  auto [train_set, validation] = carve_validation(std::move(windows.train), a.validation_fraction, err);

  Rng init_rng(derive_seed(cfg.seed, 1));
  Model<float> m = build_model<float>(arch, init_rng);
  err << "training " << arch.name << " on " << train_set.size() << " windows (" << validation.size()
      << " validation), window " << cfg.window << ", mode " << train_mode_name(cfg.mode) << "\n";

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "epoch %zu (phase %d) loss %.6f  val p %.4f r %.4f F %.4f IoU %.4f  %.1fs\n",
                  r.epoch, r.phase, r.loss, r.validation.precision, r.validation.recall, r.validation.f_measure,
                  r.validation.iou, r.seconds);
    err << buf << std::flush;
  };
  const TrainLog log = train(m, train_set, validation, cfg, hooks);

  save_checkpoint(m, a.out);
  const std::string log_path = a.log.empty() ? a.out + ".csv" : a.log;
  write_file_atomic(log_path, train_log_to_csv(log));
  out << "epochs " << log.epochs.size() << ", best epoch " << log.best_epoch
      << (log.early_stopped ? " (early stop)" : "") << "\n"
      << "checkpoint " << a.out << "\nlog " << log_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string ckpt, data, report, csv, split = "test";
  bool per_frame = false;
  bool oracle = false;
  std::size_t window = 1;  // oracle only
  double threshold = 0.5;
  std::size_t threads = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (!a.oracle && a.ckpt.empty()) throw ConfigError("eval: --ckpt is required unless --oracle is given");
  if (a.split != "train" && a.split != "test" && a.split != "all") throw ConfigError("eval: --split must be train, test or all");

  const Manifest manifest = load_manifest(a.data);
  std::optional<Model<float>> m;
  std::size_t classes = manifest.num_classes;
  std::size_t T = a.window;
  if (!a.oracle) {
    m = load_checkpoint(a.ckpt);
    classes = mask_classes(m->config);
    T = m->config.window;
    if (classes != manifest.num_classes) {
      throw ConfigError("eval: checkpoint predicts " + std::to_string(classes) + " classes, data has " +
                        std::to_string(manifest.num_classes));
    }
  }
  auto windows = load_manifest_windows(a.data, T);
  std::vector<SequenceSample> samples;
  if (a.split != "test") samples = std::move(windows.train);
  if (a.split != "train") std::move(windows.test.begin(), windows.test.end(), std::back_inserter(samples));
  if (samples.empty()) throw ConfigError("eval: no windows in split '" + a.split + "'");

  const auto preds = parallel_map<Mask>(samples.size(), a.threads, [&](std::size_t i) {
    return a.oracle ? samples[i].target : predict(*m, samples[i].window, a.threshold);
  });

  Evaluator ev(classes);
  json frames = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ev.add(preds[i], samples[i].target);
    if (a.per_frame) {
      ConfusionCounts c(classes);
      accumulate(preds[i], samples[i].target, c);
      const MetricSummary s = summarize(c);
      frames.push_back({{"sequence", samples[i].sequence_id},
                        {"index", samples[i].end_index},
                        {"precision", s.precision},
                        {"recall", s.recall},
                        {"f_measure", s.f_measure},
                        {"iou", s.iou}});
    }
  }
  const MetricsReport r = ev.report();
  json j = json::parse(report_to_json(r));
  j["split"] = a.split;
  j["headline"] = a.per_frame ? "per_frame_mean" : "pooled";
  if (a.per_frame) j["per_frame"] = std::move(frames);
  write_file_atomic(a.report, j.dump(2) + "\n");
  if (!a.csv.empty()) write_file_atomic(a.csv, report_to_csv(r));

  const MetricSummary& h = a.per_frame ? r.per_frame_mean : r.pooled;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu frames (%s): precision %.4f recall %.4f F %.4f IoU %.4f\n", r.frames,
                a.per_frame ? "per-frame mean" : "pooled", h.precision, h.recall, h.f_measure, h.iou);
  out << buf;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string ckpt, frames, out;
  bool stream = false;
  double threshold = 0.5;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const Model<float> m = load_checkpoint(a.ckpt);
  const auto frames = load_frames(a.frames);
  const std::size_t T = m.config.window;
  if (frames.size() < T) {
    throw ConfigError("predict: " + std::to_string(frames.size()) + " frames is fewer than the window of " +
                      std::to_string(T));
  }
  if (frames.front().shape() != m.config.input_shape) {
    throw ShapeError("predict: frames are " + shape_string(frames.front().shape()) + " but the model expects " +
                     shape_string(m.config.input_shape));
  }
  // Everything is computed before the first write.
  std::vector<std::pair<std::size_t, Mask>> masks;
  if (a.stream) {
    StreamRunner<float> runner(m);
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const Tensor<float> logits = runner.push(frames[t]);
      if (t + 1 >= T) masks.emplace_back(t, logits_to_mask(logits, a.threshold));
    }
  } else {
    for (std::size_t t = T - 1; t < frames.size(); ++t) {
      const std::vector<Tensor<float>> window(frames.begin() + static_cast<std::ptrdiff_t>(t + 1 - T),
                                              frames.begin() + static_cast<std::ptrdiff_t>(t + 1));
      masks.emplace_back(t, predict(m, window, a.threshold));
    }
  }
  fs::create_directories(a.out);
  for (const auto& [t, mask] : masks) save_mask((fs::path(a.out) / (stem(t) + ".pgm")).string(), mask);
  out << "wrote " << masks.size() << " masks to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string arch = "suite";
  std::string scale = "tiny";
  std::uint64_t seed = 0;
  std::size_t entries = 48;
  std::size_t window = 0;
  double tolerance = 1e-4;
  bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (a.scale != "tiny" && a.scale != "full") throw ConfigError("gradcheck: --scale must be tiny or full");
  std::vector<ArchitectureConfig> configs;
  if (a.arch == "suite") {
    configs = gradcheck_suite();
  } else {
    ArchitectureConfig c = load_arch(a.arch);
    configs.push_back(a.scale == "tiny" ? tiny_config(c) : c);
  }
  GradcheckOptions opts;
  opts.seed = a.seed;
  opts.max_entries = a.entries;
  opts.window = a.window;
  opts.corrupt_backward = a.corrupt;
  opts.tolerance = a.tolerance;
  double worst = 0;
  std::size_t groups = 0;
  for (const auto& c : configs) {
    const GradcheckReport r = gradcheck(c, opts);
    out << format_gradcheck(r, a.tolerance) << std::flush;
    worst = std::max(worst, r.max_rel_error());
    groups += r.groups.size();
  }
  const bool ok = worst <= a.tolerance;
  char buf[160];
  std::snprintf(buf, sizeof buf, "max relative error %.3e over %zu groups (tolerance %.1e): %s\n", worst, groups,
                a.tolerance, ok ? "PASS" : "FAIL");
  out << buf;
  return ok ? kExitOk : kExitVerification;
}

// ---------------------------------------------------------------------------
// preset

struct PresetArgs {
  std::string name, out;
  bool list = false;
  bool shapes = false;
};

int cmd_preset(const PresetArgs& a, std::ostream& out) {
  if (a.list) {
    for (const auto& n : preset_names()) out << n << "\n";
    return kExitOk;
  }
  if (a.name.empty()) throw ConfigError("preset: give a preset name or --list");
  const ArchitectureConfig c = load_arch(a.name);
  if (a.shapes) {
    out << shape_check(c).describe(c);
    return kExitOk;
  }
  const std::string text = config_to_json(c, 2) + "\n";
  if (a.out.empty()) out << text;
  else write_file_atomic(a.out, text);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Recurrent fully convolutional networks for video segmentation"};
  app.name(args.empty() ? "rfcn" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::size_t threads = 1;
  bool threads_given = false;
  auto add_threads = [&](CLI::App* s) {
    s->add_option_function<std::size_t>(
         "--threads",
         [&](const std::size_t& n) {
           threads = n;
           threads_given = true;
         },
         "Worker threads (default: RFCN_THREADS or 1)")
        ->check(CLI::PositiveNumber);
  };

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Synthesize moving-MNIST sequences and a manifest");
  g->add_option("--mnist-images", gen.images, "IDX image file")->required();
  g->add_option("--mnist-labels", gen.labels, "IDX label file")->required();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--sequences", gen.sequences, "Training sequences")->required();
  g->add_option("--test-sequences", gen.test_sequences, "Test sequences (digits from a held-out pool)");
  g->add_option("--test-digits", gen.test_digits, "Fraction of the IDX file reserved for test sequences");
  g->add_option("--length", gen.length, "Frames per sequence")->required();
  g->add_option("--mode", gen.mode, "Label mode")->check(CLI::IsMember({"binary", "semantic"}));
  g->add_option("--boundary", gen.boundary, "Edge behaviour")->check(CLI::IsMember({"bounce", "clamp"}));
  g->add_option("--threshold", gen.threshold, "Foreground intensity threshold");
  g->add_option("--min-speed", gen.min_speed, "Pixels per frame");
  g->add_option("--max-speed", gen.max_speed, "Pixels per frame");
  g->add_option("--seed", gen.seed, "Base seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a manifest");
  t->add_option("--arch", tr.arch, "Preset name or architecture JSON")->required();
  t->add_option("--data", tr.data, "Dataset manifest")->required();
  t->add_option("--config", tr.config, "Training config JSON (flags override it)");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--log", tr.log, "CSV log path (default <out>.csv)");
  t->add_option("--seed", tr.seed, "Seed for initialisation and shuffling");
  t->add_option("--validation-fraction", tr.validation_fraction, "Share of training sequences held out");
  t->add_option("--max-epochs", tr.max_epochs);
  t->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
  t->add_option("--window", tr.window, "Frames per window")->check(CLI::PositiveNumber);
  t->add_option("--mode", tr.mode)->check(CLI::IsMember({"end_to_end", "decoupled"}));
  t->add_option("--phase1-epochs", tr.phase1_epochs, "Decoupled phase 1 cap (0: max epochs)");
  t->add_option("--baseline", tr.baseline, "Non-recurrent checkpoint seeding the decoupled trunk");
  t->add_option("--freeze", tr.freeze, "Parameter name globs to keep fixed");
  t->add_option("--loss", tr.loss)->check(CLI::IsMember({"logistic", "cross_entropy"}));
  t->add_option("--optimizer", tr.optimizer)->check(CLI::IsMember({"adadelta", "sgd"}));
  t->add_option("--lr", tr.learning_rate, "SGD learning rate");
  t->add_option("--rho", tr.rho, "Adadelta decay");
  t->add_option("--eps", tr.eps, "Adadelta epsilon");
  t->add_option("--patience", tr.patience, "Early-stop patience in epochs (0 disables)");
  t->add_option("--threshold", tr.threshold, "Foreground probability threshold for validation");
  t->add_flag("--no-shuffle", tr.no_shuffle, "Keep window order fixed");
  add_threads(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint");
  e->add_option("--data", ev.data, "Dataset manifest")->required();
  e->add_option("--report", ev.report, "JSON report path")->required();
  e->add_option("--csv", ev.csv, "Optional CSV report path");
  e->add_option("--split", ev.split, "train, test or all");
  e->add_flag("--per-frame", ev.per_frame, "Headline the per-frame mean and list every frame");
  e->add_flag("--oracle", ev.oracle, "Use the ground truth as the prediction (no checkpoint)");
  e->add_option("--window", ev.window, "Window length with --oracle")->check(CLI::PositiveNumber);
  e->add_option("--threshold", ev.threshold, "Foreground probability threshold");
  add_threads(e);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Segment a directory of frames");
  p->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  p->add_option("--frames", pr.frames, "Directory of PGM/PPM frames")->required();
  p->add_option("--out", pr.out, "Directory for PGM masks")->required();
  p->add_flag("--stream", pr.stream, "Carry the recurrent state across frames");
  p->add_option("--threshold", pr.threshold, "Foreground probability threshold");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare backward passes with central differences");
  c->add_option("--arch", gc.arch, "Preset, architecture JSON, or 'suite'");
  c->add_option("--scale", gc.scale, "tiny or full");
  c->add_option("--seed", gc.seed);
  c->add_option("--entries", gc.entries, "Entries sampled per tensor (0: all)");
  c->add_option("--window", gc.window, "Frames per window (0: the config's)");
  c->add_option("--tolerance", gc.tolerance, "Maximum relative error");
  c->add_flag("--corrupt-backward", gc.corrupt, "Skew one analytic gradient (harness self-test)");

  PresetArgs ps;
  auto* s = app.add_subcommand("preset", "Print a preset architecture as JSON");
  s->add_option("name", ps.name, "Preset name");
  s->add_option("--out", ps.out, "Write to a file instead of stdout");
  s->add_flag("--list", ps.list, "List preset names");
  s->add_flag("--shapes", ps.shapes, "Print per-layer activation shapes");

  // CLI11 consumes its argument vector from the back.
  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!threads_given) threads = env_threads();
    if (g->parsed()) return cmd_gen_data(gen, out);
    if (t->parsed()) {
      tr.threads = threads;
      return cmd_train(tr, *t, out, err);
    }
    if (e->parsed()) {
      ev.threads = threads;
      return cmd_eval(ev, out);
    }
    if (p->parsed()) return cmd_predict(pr, out);
    if (c->parsed()) return cmd_gradcheck(gc, out);
    if (s->parsed()) return cmd_preset(ps, out);
  } catch (const DivergenceError& x) {
    err << "error: " << x.what() << "\n";
    return kExitDivergence;
  } catch (const ConfigError& x) {
    err << "error: " << x.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& x) {
    err << "error: " << x.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace rfcn
