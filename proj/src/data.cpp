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

#include "rfcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>

#include <nlohmann/json.hpp>

#include "rfcn/io.hpp"

namespace rfcn {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// MNIST IDX

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::uint32_t be32(std::string_view bytes, std::size_t at, const char* what) {
  if (bytes.size() < at + 4) throw FormatError(std::string(what) + ": truncated header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
  return v;
}

void require_payload(std::string_view bytes, std::size_t header, std::size_t payload, const char* what) {
  if (bytes.size() < header + payload) {
    throw FormatError(std::string(what) + ": truncated, header promises " + std::to_string(payload) +
                      " payload bytes, file has " + std::to_string(bytes.size() - std::min(bytes.size(), header)));
  }
  if (bytes.size() > header + payload) throw FormatError(std::string(what) + ": trailing bytes after payload");
}

}  // namespace

std::vector<MnistDigit> parse_mnist_idx(std::string_view images, std::string_view labels) {
  if (be32(images, 0, "IDX images") != kIdxImages) throw FormatError("IDX images: bad magic (expected 0x00000803)");
  if (be32(labels, 0, "IDX labels") != kIdxLabels) throw FormatError("IDX labels: bad magic (expected 0x00000801)");
  const std::size_t count = be32(images, 4, "IDX images");
  const std::size_t rows = be32(images, 8, "IDX images");
  const std::size_t cols = be32(images, 12, "IDX images");
  const std::size_t label_count = be32(labels, 4, "IDX labels");
  if (count != label_count) {
    throw FormatError("IDX count mismatch: " + std::to_string(count) + " images, " + std::to_string(label_count) +
                      " labels");
  }
  const std::size_t plane = rows * cols;
  require_payload(images, 16, count * plane, "IDX images");
  require_payload(labels, 8, count, "IDX labels");

  std::vector<MnistDigit> out(count);
  for (std::size_t n = 0; n < count; ++n) {
    Tensor<float> img({1, rows, cols});
    const auto* px = reinterpret_cast<const unsigned char*>(images.data()) + 16 + n * plane;
    for (std::size_t i = 0; i < plane; ++i) img[i] = static_cast<float>(px[i]) / 255.0f;
    out[n].image = std::move(img);
    out[n].label = static_cast<std::uint8_t>(labels[8 + n]);
  }
  return out;
}

std::vector<MnistDigit> load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  return parse_mnist_idx(read_file(images_path), read_file(labels_path));
}

// ---------------------------------------------------------------------------
// Moving MNIST

std::string_view boundary_policy_name(BoundaryPolicy p) { return p == BoundaryPolicy::bounce ? "bounce" : "clamp"; }

BoundaryPolicy parse_boundary_policy(std::string_view name) {
  if (name == "bounce") return BoundaryPolicy::bounce;
  if (name == "clamp") return BoundaryPolicy::clamp;
  throw ConfigError("unknown boundary policy '" + std::string(name) + "' (bounce, clamp)");
}

std::string_view label_mode_name(LabelMode m) { return m == LabelMode::binary ? "binary" : "semantic"; }

LabelMode parse_label_mode(std::string_view name) {
  if (name == "binary") return LabelMode::binary;
  if (name == "semantic") return LabelMode::semantic;
  throw ConfigError("unknown label mode '" + std::string(name) + "' (binary, semantic)");
}

MotionSpec sample_motion(Rng& rng, const MovingMnistOptions& opts) {
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double speed = rng.uniform(opts.min_speed, opts.max_speed);
  return {speed * std::cos(angle), speed * std::sin(angle), opts.boundary};
}

namespace {

struct InkBox {
  std::size_t x0, x1, y0, y1;
  bool empty;
};

InkBox ink_box(const Tensor<float>& img) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  InkBox b{w, 0, h, 0, true};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (img[y * w + x] <= 0.0f) continue;
      b.empty = false;
      b.x0 = std::min(b.x0, x);
      b.x1 = std::max(b.x1, x);
      b.y0 = std::min(b.y0, y);
      b.y1 = std::max(b.y1, y);
    }
  return b;
}

// Position after travelling from `start` for `dist` inside [lo, hi].
double travel(double start, double dist, double lo, double hi, BoundaryPolicy policy) {
  const double p = start + dist;
  if (hi <= lo) return lo;
  if (policy == BoundaryPolicy::clamp) return std::clamp(p, lo, hi);
  const double span = hi - lo;
  double q = std::fmod(p - lo, 2.0 * span);
  if (q < 0) q += 2.0 * span;
  if (q > span) q = 2.0 * span - q;
  return lo + q;
}

float bilinear(const Tensor<float>& img, double v, double u) {
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  const double fv = std::floor(v), fu = std::floor(u);
  const long y0 = static_cast<long>(fv), x0 = static_cast<long>(fu);
  const double ay = v - fv, ax = u - fu;
  auto at = [&](long y, long x) -> double {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : static_cast<double>(img[y * w + x]);
  };
  return static_cast<float>((1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
                            ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1)));
}

}  // namespace

std::pair<double, double> digit_offset(const MnistDigit& digit, const MotionSpec& motion, std::size_t t,
                                       std::size_t canvas) {
  const std::size_t h = digit.image.dim(1), w = digit.image.dim(2);
  if (h > canvas || w > canvas) throw ConfigError("moving mnist: digit is larger than the canvas");
  const double base_x = static_cast<double>(canvas - w) / 2, base_y = static_cast<double>(canvas - h) / 2;
  const InkBox b = ink_box(digit.image);
  if (b.empty) return {base_x, base_y};
  const double last = static_cast<double>(canvas) - 1;
  const double ox = travel(base_x, static_cast<double>(t) * motion.dx, -static_cast<double>(b.x0),
                           last - static_cast<double>(b.x1), motion.boundary);
  const double oy = travel(base_y, static_cast<double>(t) * motion.dy, -static_cast<double>(b.y0),
                           last - static_cast<double>(b.y1), motion.boundary);
  return {ox, oy};
}

Mask threshold_mask(const Tensor<float>& frame, double threshold, std::uint8_t foreground_id) {
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  Mask m({h, w});
  for (std::size_t i = 0; i < h * w; ++i) m[i] = frame[i] > threshold ? foreground_id : 0;
  return m;
}

VideoSequence render_moving_digit(const MnistDigit& digit, const MotionSpec& motion, std::size_t T,
                                  const MovingMnistOptions& opts) {
  if (T == 0) throw ConfigError("moving mnist: sequence length must be at least 1");
  if (digit.image.rank() != 3 || digit.image.dim(0) != 1) throw ShapeError("moving mnist: digit must be 1 x H x W");
  const std::size_t c = opts.canvas;
  const std::uint8_t fg = opts.mode == LabelMode::binary ? 1 : static_cast<std::uint8_t>(digit.label + 1);
  VideoSequence seq;
  for (std::size_t t = 0; t < T; ++t) {
    const auto [ox, oy] = digit_offset(digit, motion, t, c);
    Tensor<float> frame({1, c, c});
    for (std::size_t y = 0; y < c; ++y)
      for (std::size_t x = 0; x < c; ++x) {
        float v = bilinear(digit.image, static_cast<double>(y) - oy, static_cast<double>(x) - ox);
        if (opts.quantize) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
        frame[y * c + x] = v;
      }
    seq.masks.push_back(threshold_mask(frame, opts.threshold, fg));
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

VideoSequence gen_moving_mnist(std::span<const MnistDigit> digits, const MotionSpec& motion, std::size_t T, Rng& rng,
                               const MovingMnistOptions& opts) {
  if (digits.empty()) throw ConfigError("moving mnist: empty digit set");
  return render_moving_digit(digits[rng.below(digits.size())], motion, T, opts);
}

// ---------------------------------------------------------------------------
// PGM / PPM

namespace {

struct PnmHeader {
  char kind;  // '5' or '6'
  std::size_t width, height, maxval, data_offset;
};

PnmHeader parse_pnm_header(std::string_view b) {
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) throw FormatError("pnm: expected P5 or P6 magic");
  std::size_t pos = 2;
  auto skip = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip();
    std::size_t v = 0, digits = 0;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) {
      v = v * 10 + static_cast<std::size_t>(b[pos++] - '0');
      if (++digits > 9) throw FormatError(std::string("pnm: ") + what + " too large");
    }
    if (digits == 0) throw FormatError(std::string("pnm: missing ") + what);
    return v;
  };
  PnmHeader h{b[1], 0, 0, 0, 0};
  h.width = number("width");
  h.height = number("height");
  h.maxval = number("maxval");
  if (h.maxval == 0 || h.maxval > 255) throw FormatError("pnm: only 8-bit rasters (maxval 1..255) are supported");
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) {
    throw FormatError("pnm: header must end with one whitespace byte");
  }
  h.data_offset = pos + 1;
  const std::size_t channels = h.kind == '5' ? 1 : 3;
  const std::size_t need = h.width * h.height * channels;
  if (b.size() - h.data_offset != need) {
    throw FormatError("pnm: expected " + std::to_string(need) + " raster bytes, found " +
                      std::to_string(b.size() - h.data_offset));
  }
  return h;
}

std::string pnm_header(char kind, std::size_t w, std::size_t h) {
  return std::string("P") + kind + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

}  // namespace

std::string encode_pnm(const Tensor<float>& frame) {
  if (frame.rank() != 3 || (frame.dim(0) != 1 && frame.dim(0) != 3)) {
    throw ShapeError("pnm: frame must be 1 x H x W or 3 x H x W, got " + shape_string(frame.shape()));
  }
  const std::size_t c = frame.dim(0), h = frame.dim(1), w = frame.dim(2), plane = h * w;
  std::string out = pnm_header(c == 1 ? '5' : '6', w, h);
  const std::size_t start = out.size();
  out.resize(start + c * plane);
  // CHW planes interleave to the raster's pixel-major layout.
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float v = std::clamp(frame[ch * plane + i], 0.0f, 1.0f);
      out[start + i * c + ch] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
  return out;
}

Tensor<float> decode_pnm(std::string_view bytes) {
  const PnmHeader hd = parse_pnm_header(bytes);
  const std::size_t c = hd.kind == '5' ? 1 : 3, plane = hd.width * hd.height;
  Tensor<float> t({c, hd.height, hd.width});
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data()) + hd.data_offset;
  const float maxval = static_cast<float>(hd.maxval);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) t[ch * plane + i] = static_cast<float>(px[i * c + ch]) / maxval;
  return t;
}

std::string encode_mask_pgm(const Mask& mask) {
  if (mask.rank() != 2) throw ShapeError("mask must be H x W, got " + shape_string(mask.shape()));
  std::string out = pnm_header('5', mask.dim(1), mask.dim(0));
  out.append(reinterpret_cast<const char*>(mask.data()), mask.size());
  return out;
}

Mask decode_mask_pgm(std::string_view bytes) {
  const PnmHeader hd = parse_pnm_header(bytes);
  if (hd.kind != '5') throw FormatError("mask: expected a P5 (grayscale) raster");
  Mask m({hd.height, hd.width});
  std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data()) + hd.data_offset, m.size(), m.data());
  return m;
}

void save_frame(const std::string& path, const Tensor<float>& frame) { write_file_atomic(path, encode_pnm(frame)); }
Tensor<float> load_frame(const std::string& path) {
  try {
    return decode_pnm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}
void save_mask(const std::string& path, const Mask& mask) { write_file_atomic(path, encode_mask_pgm(mask)); }
Mask load_mask(const std::string& path) {
  try {
    return decode_mask_pgm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void save_sequence(const std::string& dir, const VideoSequence& seq) {
  if (seq.frames.size() != seq.masks.size()) throw ShapeError("save_sequence: frame and mask counts differ");
  for (std::size_t t = 0; t < seq.size(); ++t) {
    char stem[16];
    std::snprintf(stem, sizeof stem, "%06zu", t);
    const char* ext = seq.frames[t].dim(0) == 1 ? ".pgm" : ".ppm";
    save_frame((fs::path(dir) / "frames" / (stem + std::string(ext))).string(), seq.frames[t]);
    save_mask((fs::path(dir) / "masks" / (stem + std::string(".pgm"))).string(), seq.masks[t]);
  }
}

namespace {

std::vector<fs::path> sorted_files(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("'" + dir + "' is not a readable directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

std::vector<Tensor<float>> load_frames(const std::string& dir) {
  std::vector<Tensor<float>> out;
  for (const auto& path : sorted_files(dir)) {
    Tensor<float> f = load_frame(path.string());
    if (!out.empty() && f.shape() != out.front().shape()) {
      throw FormatError("frame '" + path.string() + "' changes the frame shape within the directory");
    }
    out.push_back(std::move(f));
  }
  return out;
}

VideoSequence load_frame_directory(const std::string& frames_dir, const std::string& masks_dir) {
  const auto frames = sorted_files(frames_dir);
  const auto masks = sorted_files(masks_dir);
  if (frames.size() != masks.size()) {
    throw FormatError("'" + frames_dir + "' has " + std::to_string(frames.size()) + " frames but '" + masks_dir +
                      "' has " + std::to_string(masks.size()) + " masks");
  }
  VideoSequence seq;
  seq.id = fs::path(frames_dir).parent_path().filename().string();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    Tensor<float> f = load_frame(frames[i].string());
    Mask m = load_mask(masks[i].string());
    if (m.dim(0) != f.dim(1) || m.dim(1) != f.dim(2)) {
      throw FormatError("mask '" + masks[i].string() + "' is " + shape_string(m.shape()) + " but its frame is " +
                        shape_string(f.shape()));
    }
    if (!seq.frames.empty() && f.shape() != seq.frames.front().shape()) {
      throw FormatError("frame '" + frames[i].string() + "' changes the frame shape within the sequence");
    }
    seq.frames.push_back(std::move(f));
    seq.masks.push_back(std::move(m));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Windows and splits

std::vector<SequenceSample> sliding_windows(const VideoSequence& seq, std::size_t T, std::size_t stride) {
  if (T == 0 || stride == 0) throw ConfigError("sliding_windows: window length and stride must be positive");
  if (seq.frames.size() != seq.masks.size()) throw ShapeError("sliding_windows: frame and mask counts differ");
  if (T > seq.size()) {
    throw ConfigError("sliding_windows: window length " + std::to_string(T) + " exceeds sequence '" + seq.id +
                      "' of length " + std::to_string(seq.size()));
  }
  std::vector<SequenceSample> out;
  for (std::size_t end = T - 1; end < seq.size(); end += stride) {
    SequenceSample s;
    s.window.assign(seq.frames.begin() + static_cast<std::ptrdiff_t>(end + 1 - T),
                    seq.frames.begin() + static_cast<std::ptrdiff_t>(end + 1));
    s.target = seq.masks[end];
    s.sequence_id = seq.id;
    s.end_index = end;
    out.push_back(std::move(s));
  }
  return out;
}

TrainTestSplit split_train_test(const std::vector<SequenceSample>& samples, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split_train_test: fraction must lie in (0, 1)");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const SequenceSample*>> groups;
  for (const auto& s : samples) {
    auto [it, inserted] = groups.try_emplace(s.sequence_id);
    if (inserted) order.push_back(s.sequence_id);
    it->second.push_back(&s);
  }
  TrainTestSplit out;
  for (const auto& id : order) {
    const auto& g = groups[id];
    const std::size_t n = g.size();
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (n < 2 || n_train == 0 || n_train == n) {
      throw ConfigError("split_train_test: sequence '" + id + "' with " + std::to_string(n) +
                        " windows is too short to split at fraction " + std::to_string(fraction));
    }
    for (std::size_t i = 0; i < n; ++i) (i < n_train ? out.train : out.test).push_back(*g[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

std::string manifest_to_json(const Manifest& m) {
  json seqs = json::array();
  for (const auto& e : m.sequences) {
    seqs.push_back({{"id", e.id}, {"frames", e.frames}, {"masks", e.masks}, {"length", e.length}, {"split", e.split}});
  }
  json j = {{"version", 1},
            {"label_mode", label_mode_name(m.label_mode)},
            {"num_classes", m.num_classes},
            {"train_fraction", m.train_fraction},
            {"seed", m.seed},
            {"sequences", seqs}};
  return j.dump(2) + "\n";
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* s) { return k == s; }) == known.end()) {
      throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
    }
  }
}

}  // namespace

Manifest manifest_from_json(std::string_view text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("manifest: expected a JSON object");
    reject_unknown(j, {"version", "label_mode", "num_classes", "train_fraction", "seed", "sequences"}, "manifest");
    if (j.at("version").get<int>() != 1) throw ConfigError("manifest: unsupported version");
    m.label_mode = parse_label_mode(j.value("label_mode", std::string("binary")));
    m.num_classes = j.value("num_classes", std::size_t{2});
    m.train_fraction = j.value("train_fraction", 0.7);
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& s : j.at("sequences")) {
      reject_unknown(s, {"id", "frames", "masks", "length", "split"}, "manifest sequence");
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.frames = s.at("frames").get<std::string>();
      e.masks = s.at("masks").get<std::string>();
      e.length = s.value("length", std::size_t{0});
      e.split = s.value("split", std::string("train"));
      if (e.split != "train" && e.split != "test" && e.split != "both") {
        throw ConfigError("manifest: sequence '" + e.id + "' has unknown split '" + e.split + "'");
      }
      m.sequences.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const std::string& path, const Manifest& m) { write_file_atomic(path, manifest_to_json(m)); }

Manifest load_manifest(const std::string& path) { return manifest_from_json(read_file(path)); }

TrainTestSplit load_manifest_windows(const std::string& manifest_path, std::size_t T) {
  const Manifest m = load_manifest(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  TrainTestSplit out;
  for (const auto& e : m.sequences) {
    VideoSequence seq = load_frame_directory((root / e.frames).string(), (root / e.masks).string());
    seq.id = e.id;
    if (e.length != 0 && seq.size() != e.length) {
      throw FormatError("sequence '" + e.id + "' has " + std::to_string(seq.size()) + " frames, manifest says " +
                        std::to_string(e.length));
    }
    auto windows = sliding_windows(seq, T);
    if (e.split == "both") {
      auto s = split_train_test(windows, m.train_fraction);
      std::move(s.train.begin(), s.train.end(), std::back_inserter(out.train));
      std::move(s.test.begin(), s.test.end(), std::back_inserter(out.test));
    } else {
      auto& dst = e.split == "train" ? out.train : out.test;
      std::move(windows.begin(), windows.end(), std::back_inserter(dst));
    }
  }
  return out;
}

}  // namespace rfcn
