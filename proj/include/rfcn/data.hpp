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
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rfcn/rng.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn {

/// H x W map of integer class ids, 0 = background.
using Mask = Tensor<std::uint8_t>;

/// Frames are C x H x W (C = 1 or 3) with values in [0, 1].
struct VideoSequence {
  std::string id;
  std::vector<Tensor<float>> frames;
  std::vector<Mask> masks;

  std::size_t size() const { return frames.size(); }
};

/// T consecutive frames; `target` is the mask of the last one.
struct SequenceSample {
  std::vector<Tensor<float>> window;
  Mask target;
  std::string sequence_id;
  std::size_t end_index = 0;
};

// ---------------------------------------------------------------------------
// MNIST IDX

struct MnistDigit {
  Tensor<float> image;  // 1 x 28 x 28, pixel / 255
  std::uint8_t label = 0;
};

/// Parses an image file (magic 0x00000803) and a label file (0x00000801).
/// Throws FormatError on bad magic, truncation or a count mismatch.
std::vector<MnistDigit> parse_mnist_idx(std::string_view images, std::string_view labels);
std::vector<MnistDigit> load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// ---------------------------------------------------------------------------
// Moving MNIST

enum class BoundaryPolicy { bounce, clamp };
enum class LabelMode { binary, semantic };

std::string_view boundary_policy_name(BoundaryPolicy p);
BoundaryPolicy parse_boundary_policy(std::string_view name);
std::string_view label_mode_name(LabelMode m);
LabelMode parse_label_mode(std::string_view name);

/// Velocity in pixels per frame; x to the right, y down.
struct MotionSpec {
  double dx = 0.0;
  double dy = 0.0;
  BoundaryPolicy boundary = BoundaryPolicy::bounce;
};

struct MovingMnistOptions {
  std::size_t canvas = 28;
  double threshold = 0.5;
  LabelMode mode = LabelMode::binary;
  BoundaryPolicy boundary = BoundaryPolicy::bounce;
  double min_speed = 0.5;
  double max_speed = 2.0;
  /// Round frames to multiples of 1/255 so they survive an 8-bit PGM
  /// round trip unchanged and masks stay the threshold of the stored frame.
  bool quantize = true;
};

/// Uniform direction, speed uniform in [min_speed, max_speed].
MotionSpec sample_motion(Rng& rng, const MovingMnistOptions& opts = {});

/// Offset of `digit` at frame t. The digit's ink bounding box is kept on the
/// canvas: bounce reflects the path off the edges, clamp stops at them.
std::pair<double, double> digit_offset(const MnistDigit& digit, const MotionSpec& motion, std::size_t t,
                                       std::size_t canvas);

/// Renders `digit` moving with `motion` for T frames. Frame t samples the
/// digit bilinearly at its offset; mask t is (frame t > threshold), as class
/// 1 or as label + 1 in semantic mode.
VideoSequence render_moving_digit(const MnistDigit& digit, const MotionSpec& motion, std::size_t T,
                                  const MovingMnistOptions& opts = {});

/// Picks one digit from `digits` with `rng` and renders it. Throws
/// ConfigError when `digits` is empty or T is 0.
VideoSequence gen_moving_mnist(std::span<const MnistDigit> digits, const MotionSpec& motion, std::size_t T, Rng& rng,
                               const MovingMnistOptions& opts = {});

/// Binary-mode masks hold 1 for foreground; semantic masks hold digit + 1.
Mask threshold_mask(const Tensor<float>& frame, double threshold, std::uint8_t foreground_id);

// ---------------------------------------------------------------------------
// PGM / PPM rasters (binary P5 / P6, maxval 255)

/// 1-channel frames encode as P5, 3-channel frames as P6; values are
/// rounded to the nearest multiple of 1/255 after clamping to [0, 1].
std::string encode_pnm(const Tensor<float>& frame);
Tensor<float> decode_pnm(std::string_view bytes);
std::string encode_mask_pgm(const Mask& mask);
Mask decode_mask_pgm(std::string_view bytes);

void save_frame(const std::string& path, const Tensor<float>& frame);
Tensor<float> load_frame(const std::string& path);
void save_mask(const std::string& path, const Mask& mask);
Mask load_mask(const std::string& path);

/// Writes `<dir>/frames/NNNNNN.pgm|ppm` and `<dir>/masks/NNNNNN.pgm`.
void save_sequence(const std::string& dir, const VideoSequence& seq);

/// Every regular file of `dir` in name order, decoded as PGM/PPM.
std::vector<Tensor<float>> load_frames(const std::string& dir);

/// Pairs the regular files of both directories in lexicographic order.
/// Throws FormatError on a count or size mismatch.
VideoSequence load_frame_directory(const std::string& frames_dir, const std::string& masks_dir);

// ---------------------------------------------------------------------------
// Windows and splits

/// floor((len - T) / stride) + 1 windows, in order. Throws ConfigError when
/// T exceeds the sequence length or T or stride is 0.
std::vector<SequenceSample> sliding_windows(const VideoSequence& seq, std::size_t T, std::size_t stride = 1);

struct TrainTestSplit {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> test;
};

/// Temporal split per sequence: of each sequence's n windows (grouped by
/// sequence id, kept in order) the first round(fraction * n) go to train.
/// Throws ConfigError unless 0 < fraction < 1, or when a sequence has fewer
/// than two windows or a side would come out empty.
TrainTestSplit split_train_test(const std::vector<SequenceSample>& samples, double fraction);

// ---------------------------------------------------------------------------
// Dataset manifest

/**
 * JSON file listing sequence directories relative to the manifest:
 *
 *   {"version": 1, "label_mode": "binary", "num_classes": 2,
 *    "train_fraction": 0.7, "seed": 42,
 *    "sequences": [{"id": "seq_000000", "frames": "seq_000000/frames",
 *                   "masks": "seq_000000/masks", "length": 3,
 *                   "split": "train" | "test" | "both"}]}
 *
 * "both" sequences are split temporally with `train_fraction`.
 */
struct ManifestEntry {
  std::string id;
  std::string frames;
  std::string masks;
  std::size_t length = 0;
  std::string split = "train";

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  LabelMode label_mode = LabelMode::binary;
  std::size_t num_classes = 2;
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> sequences;

  bool operator==(const Manifest&) const = default;
};

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(std::string_view text);
void save_manifest(const std::string& path, const Manifest& m);
Manifest load_manifest(const std::string& path);

/// Loads every sequence of `manifest_path` and cuts T-frame windows with
/// stride 1, routed by each entry's split.
TrainTestSplit load_manifest_windows(const std::string& manifest_path, std::size_t T);

}  // namespace rfcn
