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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rfcn/data.hpp"

namespace rfcn {

/// Per-class true positive, false positive and false negative pixel counts.
struct ConfusionCounts {
  std::vector<std::uint64_t> tp, fp, fn;

  explicit ConfusionCounts(std::size_t num_classes = 2) : tp(num_classes), fp(num_classes), fn(num_classes) {}
  std::size_t num_classes() const { return tp.size(); }
  /// Adds another shard's counts (same class count).
  void merge(const ConfusionCounts& other);
  bool present(std::size_t cls) const { return tp[cls] + fp[cls] + fn[cls] > 0; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Tallies every pixel of `pred` against `truth`. A pixel with truth a and
/// prediction b adds tp[a] when a == b, else fn[a] and fp[b]. Throws
/// ShapeError on unequal shapes, ConfigError on ids >= num_classes.
void accumulate(const Mask& pred, const Mask& truth, ConfusionCounts& counts);

struct PrecisionRecallF {
  double precision = 1.0;
  double recall = 1.0;
  double f_measure = 1.0;
};

/**
 * precision = tp / (tp + fp), recall = tp / (tp + fn),
 * F = 2 p r / (p + r), evaluated as 2 tp / (2 tp + fp + fn) (the same
 * value, and p == r then gives F == p bitwise).
 *
 * Zero denominators: nothing predicted and nothing true scores 1; otherwise
 * an empty denominator scores 0.
 */
PrecisionRecallF precision_recall_f(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);
PrecisionRecallF precision_recall_f(const ConfusionCounts& c, std::size_t cls);

/// tp / (tp + fp + fn); 1 when all three are zero.
double iou(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);
double iou(const ConfusionCounts& c, std::size_t cls);

/// Mean IoU over `classes`, skipping classes with tp + fp + fn == 0. Returns
/// 1 when every listed class is absent.
double mean_class_iou(const ConfusionCounts& c, std::span<const std::size_t> classes);
/// Over every class id.
double mean_class_iou(const ConfusionCounts& c);

/// Class id -> category id; must cover every class that occurs.
struct CategoryMap {
  std::vector<std::size_t> category_of;
  std::vector<std::string> names;  // optional, one per category

  std::size_t num_categories() const;
};

/// Remaps both masks through `cmap` and then tallies, so confusions between
/// classes of one category count as hits. Throws ConfigError on an unmapped id.
void accumulate_categories(const Mask& pred, const Mask& truth, const CategoryMap& cmap, ConfusionCounts& counts);

struct ClassMetrics {
  std::size_t id = 0;
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double precision = 1, recall = 1, f_measure = 1, iou = 1;
  bool present = false;
};

/// Headline numbers. Binary tasks (2 classes) report the foreground class 1;
/// multiclass tasks report the mean over present non-background classes for
/// precision, recall and F, and the mean class IoU.
struct MetricSummary {
  double precision = 1, recall = 1, f_measure = 1, iou = 1;
};

struct MetricsReport {
  std::size_t num_classes = 2;
  std::size_t frames = 0;
  /// Summary from counts pooled over every frame.
  MetricSummary pooled;
  /// Arithmetic mean over frames of each frame's own summary.
  MetricSummary per_frame_mean;
  std::vector<ClassMetrics> per_class;
  double mean_class_iou = 1;
  std::vector<ClassMetrics> per_category;  // empty without a CategoryMap
  double mean_category_iou = 1;
};

MetricSummary summarize(const ConfusionCounts& c);
ClassMetrics class_metrics(const ConfusionCounts& c, std::size_t cls);

/// Streams (prediction, truth) pairs and keeps pooled counts, per-frame
/// summaries and, with a CategoryMap, category counts.
class Evaluator {
 public:
  explicit Evaluator(std::size_t num_classes, std::optional<CategoryMap> categories = std::nullopt);

  void add(const Mask& pred, const Mask& truth);
  const ConfusionCounts& counts() const { return counts_; }
  std::size_t frames() const { return frame_summaries_.size(); }
  MetricsReport report() const;

 private:
  std::size_t num_classes_;
  std::optional<CategoryMap> categories_;
  ConfusionCounts counts_;
  ConfusionCounts category_counts_;
  std::vector<MetricSummary> frame_summaries_;
};

std::string report_to_json(const MetricsReport& r);
/// Rows: scope (class | category | pooled | per_frame_mean), id, tp, fp, fn,
/// precision, recall, f_measure, iou.
std::string report_to_csv(const MetricsReport& r);

}  // namespace rfcn
