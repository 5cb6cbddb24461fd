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

#include "rfcn/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

namespace rfcn {

void ConfusionCounts::merge(const ConfusionCounts& other) {
  if (other.num_classes() != num_classes()) throw ShapeError("ConfusionCounts::merge: class counts differ");
  for (std::size_t k = 0; k < num_classes(); ++k) {
    tp[k] += other.tp[k];
    fp[k] += other.fp[k];
    fn[k] += other.fn[k];
  }
}

namespace {

void require_same_shape(const Mask& pred, const Mask& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("metrics: prediction " + shape_string(pred.shape()) + " and truth " +
                     shape_string(truth.shape()) + " differ in shape");
  }
}

void tally(std::size_t truth, std::size_t pred, ConfusionCounts& c) {
  if (truth >= c.num_classes() || pred >= c.num_classes()) {
    throw ConfigError("metrics: class id " + std::to_string(std::max(truth, pred)) + " outside 0.." +
                      std::to_string(c.num_classes() - 1));
  }
  if (truth == pred) {
    ++c.tp[truth];
  } else {
    ++c.fn[truth];
    ++c.fp[pred];
  }
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

void accumulate(const Mask& pred, const Mask& truth, ConfusionCounts& counts) {
  require_same_shape(pred, truth);
  for (std::size_t i = 0; i < pred.size(); ++i) tally(truth[i], pred[i], counts);
}

PrecisionRecallF precision_recall_f(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  if (tp + fp + fn == 0) return {1.0, 1.0, 1.0};
  PrecisionRecallF out;
  out.precision = tp + fp == 0 ? 0.0 : ratio(tp, tp + fp);
  out.recall = tp + fn == 0 ? 0.0 : ratio(tp, tp + fn);
  out.f_measure = ratio(2 * tp, 2 * tp + fp + fn);
  return out;
}

PrecisionRecallF precision_recall_f(const ConfusionCounts& c, std::size_t cls) {
  return precision_recall_f(c.tp.at(cls), c.fp.at(cls), c.fn.at(cls));
}

double iou(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  return tp + fp + fn == 0 ? 1.0 : ratio(tp, tp + fp + fn);
}

double iou(const ConfusionCounts& c, std::size_t cls) { return iou(c.tp.at(cls), c.fp.at(cls), c.fn.at(cls)); }

double mean_class_iou(const ConfusionCounts& c, std::span<const std::size_t> classes) {
  double total = 0;
  std::size_t n = 0;
  for (std::size_t cls : classes) {
    if (cls >= c.num_classes()) throw ConfigError("mean_class_iou: class id " + std::to_string(cls) + " out of range");
    if (!c.present(cls)) continue;
    total += iou(c, cls);
    ++n;
  }
  return n == 0 ? 1.0 : total / static_cast<double>(n);
}

double mean_class_iou(const ConfusionCounts& c) {
  std::vector<std::size_t> all(c.num_classes());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  return mean_class_iou(c, all);
}

std::size_t CategoryMap::num_categories() const {
  std::size_t n = names.size();
  for (std::size_t cat : category_of) n = std::max(n, cat + 1);
  return n;
}

void accumulate_categories(const Mask& pred, const Mask& truth, const CategoryMap& cmap, ConfusionCounts& counts) {
  require_same_shape(pred, truth);
  auto remap = [&](std::uint8_t cls) {
    if (cls >= cmap.category_of.size()) throw ConfigError("category map: class id " + std::to_string(cls) + " is unmapped");
    return cmap.category_of[cls];
  };
  for (std::size_t i = 0; i < pred.size(); ++i) tally(remap(truth[i]), remap(pred[i]), counts);
}

ClassMetrics class_metrics(const ConfusionCounts& c, std::size_t cls) {
  const auto prf = precision_recall_f(c, cls);
  return {cls, c.tp[cls], c.fp[cls], c.fn[cls], prf.precision, prf.recall, prf.f_measure, iou(c, cls),
          c.present(cls)};
}

MetricSummary summarize(const ConfusionCounts& c) {
  if (c.num_classes() == 2) {
    const auto m = class_metrics(c, 1);
    return {m.precision, m.recall, m.f_measure, m.iou};
  }
  MetricSummary s{0, 0, 0, mean_class_iou(c)};
  std::size_t n = 0;
  for (std::size_t k = 1; k < c.num_classes(); ++k) {
    if (!c.present(k)) continue;
    const auto m = class_metrics(c, k);
    s.precision += m.precision;
    s.recall += m.recall;
    s.f_measure += m.f_measure;
    ++n;
  }
  if (n == 0) return {1, 1, 1, s.iou};
  s.precision /= static_cast<double>(n);
  s.recall /= static_cast<double>(n);
  s.f_measure /= static_cast<double>(n);
  return s;
}

Evaluator::Evaluator(std::size_t num_classes, std::optional<CategoryMap> categories)
    : num_classes_(num_classes),
      categories_(std::move(categories)),
      counts_(num_classes),
      category_counts_(categories_ ? categories_->num_categories() : 0) {
  if (num_classes < 2) throw ConfigError("metrics: need at least two classes");
}

void Evaluator::add(const Mask& pred, const Mask& truth) {
  ConfusionCounts frame(num_classes_);
  accumulate(pred, truth, frame);
  if (categories_) accumulate_categories(pred, truth, *categories_, category_counts_);
  counts_.merge(frame);
  frame_summaries_.push_back(summarize(frame));
}

MetricsReport Evaluator::report() const {
  MetricsReport r;
  r.num_classes = num_classes_;
  r.frames = frames();
  r.pooled = summarize(counts_);
  if (!frame_summaries_.empty()) {
    MetricSummary m{0, 0, 0, 0};
    for (const auto& s : frame_summaries_) {
      m.precision += s.precision;
      m.recall += s.recall;
      m.f_measure += s.f_measure;
      m.iou += s.iou;
    }
    const double n = static_cast<double>(frame_summaries_.size());
    r.per_frame_mean = {m.precision / n, m.recall / n, m.f_measure / n, m.iou / n};
  }
  for (std::size_t k = 0; k < num_classes_; ++k) r.per_class.push_back(class_metrics(counts_, k));
  r.mean_class_iou = mean_class_iou(counts_);
  if (categories_) {
    for (std::size_t k = 0; k < category_counts_.num_classes(); ++k)
      r.per_category.push_back(class_metrics(category_counts_, k));
    r.mean_category_iou = mean_class_iou(category_counts_);
  }
  return r;
}

namespace {

nlohmann::json to_json(const MetricSummary& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f_measure", s.f_measure}, {"iou", s.iou}};
}

nlohmann::json to_json(const ClassMetrics& m) {
  return {{"id", m.id},         {"tp", m.tp},         {"fp", m.fp},
          {"fn", m.fn},         {"present", m.present}, {"precision", m.precision},
          {"recall", m.recall}, {"f_measure", m.f_measure}, {"iou", m.iou}};
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j = {{"num_classes", r.num_classes},
                      {"frames", r.frames},
                      {"pooled", to_json(r.pooled)},
                      {"per_frame_mean", to_json(r.per_frame_mean)},
                      {"mean_class_iou", r.mean_class_iou},
                      {"per_class", nlohmann::json::array()}};
  for (const auto& m : r.per_class) j["per_class"].push_back(to_json(m));
  if (!r.per_category.empty()) {
    j["mean_category_iou"] = r.mean_category_iou;
    j["per_category"] = nlohmann::json::array();
    for (const auto& m : r.per_category) j["per_category"].push_back(to_json(m));
  }
  return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "scope,id,tp,fp,fn,precision,recall,f_measure,iou\n";
  char buf[160];
  auto row = [&](const char* scope, const std::string& id, const std::string& counts, double p, double rc, double f,
                 double i) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%.9g,%.9g,%.9g,%.9g\n", scope, id.c_str(), counts.c_str(), p, rc, f, i);
    os << buf;
  };
  for (const auto& m : r.per_class) {
    row("class", std::to_string(m.id), std::to_string(m.tp) + "," + std::to_string(m.fp) + "," + std::to_string(m.fn),
        m.precision, m.recall, m.f_measure, m.iou);
  }
  for (const auto& m : r.per_category) {
    row("category", std::to_string(m.id),
        std::to_string(m.tp) + "," + std::to_string(m.fp) + "," + std::to_string(m.fn), m.precision, m.recall,
        m.f_measure, m.iou);
  }
  row("pooled", "", ",,", r.pooled.precision, r.pooled.recall, r.pooled.f_measure, r.pooled.iou);
  row("per_frame_mean", "", ",,", r.per_frame_mean.precision, r.per_frame_mean.recall, r.per_frame_mean.f_measure,
      r.per_frame_mean.iou);
  return os.str();
}

}  // namespace rfcn
