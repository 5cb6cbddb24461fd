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

#include "rfcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "rfcn/rng.hpp"

namespace rfcn {

double GradcheckReport::max_rel_error() const {
  double worst = 0;
  for (const auto& g : groups) worst = std::max(worst, g.max_rel_error);
  return worst;
}

double relative_gradient_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

// Central difference of sum(R * logits). The two objectives would each be
// rounded to a ulp of their (large) value before subtracting, which swamps
// small gradients; differencing logit by logit and accumulating in extended
// precision keeps that cancellation out. The network itself runs in double.
double central_difference(Model<double>& m, double& param, const std::vector<Tensor<double>>& frames,
                          const Tensor<double>& r, double step) {
  const double saved = param;
  param = saved + step;
  const Tensor<double> plus = forward_window(m, frames).logits;
  param = saved - step;
  const Tensor<double> minus = forward_window(m, frames).logits;
  param = saved;
  long double diff = 0;
  for (std::size_t i = 0; i < r.size(); ++i) diff += static_cast<long double>(r[i]) * (plus[i] - minus[i]);
  return static_cast<double>(diff / (2.0L * step));
}

std::vector<std::size_t> pick_entries(std::size_t size, std::size_t max_entries, Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_entries == 0 || size <= max_entries) return idx;
  for (std::size_t i = 0; i < max_entries; ++i) std::swap(idx[i], idx[i + rng.below(size - i)]);
  idx.resize(max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckReport gradcheck(const ArchitectureConfig& cfg, const GradcheckOptions& opts) {
  if (!(opts.step > 0)) throw ConfigError("gradcheck: step must be positive");
  ArchitectureConfig c = cfg;
  if (opts.window > 0) c.window = opts.window;

  Rng init_rng(derive_seed(opts.seed, 0));
  Model<double> m = build_model<double>(c, init_rng);
  Rng jitter_rng(derive_seed(opts.seed, 1));
  for (auto& [name, t] : named_tensors(m.params))
    for (auto& v : t->values()) v += jitter_rng.uniform(-opts.jitter, opts.jitter);

  Rng data_rng(derive_seed(opts.seed, 2));
  std::vector<Tensor<double>> frames;
  for (std::size_t t = 0; t < c.window; ++t) frames.push_back(fill_random<double>(c.input_shape, UniformDist{0, 1}, data_rng));
  const auto out = forward_window(m, frames);
  const Tensor<double> r = fill_random<double>(out.logits.shape(), UniformDist{-1, 1}, data_rng);
  const ModelParams<double> grads = backward_window(r, out.cache, m);

  // Each objective carries rounding error up to about u * sum|r l|, so a
  // central difference cannot resolve gradients much below u * sum|r l| / h.
  // Entries are judged relative to at least the gradient that this
  // resolution lets us verify to `tolerance`.
  double scale = 0;
  for (std::size_t i = 0; i < r.size(); ++i) scale += std::abs(r[i] * out.logits[i]);
  const double resolution = std::numeric_limits<double>::epsilon() / 2 * scale / opts.step;
  const double floor = std::max(opts.floor, resolution / opts.tolerance);

  GradcheckReport report;
  report.config_name = c.name;
  report.window = c.window;
  report.floor = floor;
  const auto params = named_tensors(m.params);
  const auto analytic = named_tensors(grads);
  for (std::size_t g = 0; g < params.size(); ++g) {
    Tensor<double>& p = *params[g].second;
    const Tensor<double>& a = *analytic[g].second;
    Rng pick_rng(derive_seed(opts.seed, 100 + g));
    GradcheckGroup group;
    group.name = params[g].first;
    group.size = p.size();
    for (std::size_t i : pick_entries(p.size(), opts.max_entries, pick_rng)) {
      double ana = a[i];
      if (opts.corrupt_backward && g == 0) ana = ana * 1.05 + 1e-3;
      const double numeric = central_difference(m, p[i], frames, r, opts.step);
      group.max_rel_error = std::max(group.max_rel_error, relative_gradient_error(ana, numeric, floor));
      group.max_abs_grad = std::max(group.max_abs_grad, std::abs(ana));
      ++group.checked;
    }
    report.groups.push_back(group);
  }
  return report;
}

std::vector<ArchitectureConfig> gradcheck_suite() {
  using L = LayerSpec;
  std::vector<ArchitectureConfig> suite;

  // conv (stride, padding), relu, pool, conv1x1.
  ArchitectureConfig conv;
  conv.name = "layers-conv-pool";
  conv.input_shape = {2, 9, 9};
  conv.window = 1;
  conv.pre_recurrent = {L::conv(3, 3, 1, 1), L::relu(), L::pool(2), L::conv(3, 3, 2, 1), L::conv1x1(1)};
  suite.push_back(conv);

  // deconv with cropping, then a centred crop.
  ArchitectureConfig deconv;
  deconv.name = "layers-deconv-crop";
  deconv.input_shape = {2, 4, 5};
  deconv.window = 1;
  deconv.pre_recurrent = {L::conv1x1(3), L::deconv(4, 2, 2, 1), L::crop(6, 7), L::deconv(3, 1, 1, 0)};
  suite.push_back(deconv);

  // dense through flatten / unflatten.
  ArchitectureConfig dense;
  dense.name = "layers-dense";
  dense.input_shape = {1, 4, 4};
  dense.window = 1;
  dense.pre_recurrent = {L::flatten(), L::dense(6), L::relu(), L::dense(16), L::unflatten({1, 4, 4})};
  suite.push_back(dense);

  auto dense_cell = [&](CellKind kind, const std::string& name) {
    ArchitectureConfig c;
    c.name = name;
    c.input_shape = {1, 4, 4};
    c.window = 3;
    c.pre_recurrent = {L::conv(3, 2, 1, 1), L::relu(), L::flatten(), L::dense(8)};
    c.recurrent.cell = kind;
    c.recurrent.hidden = 6;
    c.post_recurrent = {L::dense(16), L::unflatten({1, 4, 4})};
    return c;
  };
  suite.push_back(dense_cell(CellKind::rnn, "cell-rnn"));
  suite.push_back(dense_cell(CellKind::lstm, "cell-lstm"));
  suite.push_back(dense_cell(CellKind::gru, "cell-gru"));

  for (auto act : {CandidateActivation::sigmoid, CandidateActivation::tanh}) {
    ArchitectureConfig c;
    c.name = act == CandidateActivation::sigmoid ? "cell-conv-gru-sigmoid" : "cell-conv-gru-tanh";
    c.input_shape = {2, 5, 5};
    c.window = 3;
    c.pre_recurrent = {L::conv(3, 3, 1, 1), L::relu()};
    c.recurrent = {CellKind::conv_gru, 0, 2, 3, act};
    c.post_recurrent = {L::conv1x1(1)};
    suite.push_back(c);
  }

  // Skip links from the trunk and from inside the post-recurrent stack.
  ArchitectureConfig skip;
  skip.name = "skip-links";
  skip.input_shape = {1, 8, 8};
  skip.window = 2;
  skip.pre_recurrent = {L::conv(3, 2, 1, 1), L::relu()};
  skip.recurrent = {CellKind::conv_gru, 0, 2, 3, CandidateActivation::sigmoid};
  skip.post_recurrent = {L::pool(2), L::conv1x1(1), L::deconv(4, 2, 1, 1)};
  skip.skip_links = {{LayerRef{false, 1}, LayerRef{true, 2}}, {LayerRef{true, 0}, LayerRef{true, 1}}};
  suite.push_back(skip);

  ArchitectureConfig lenet = tiny_config(preset("rfc-lenet"));
  lenet.window = 3;
  suite.push_back(lenet);
  return suite;
}

std::string format_gradcheck(const GradcheckReport& r, double tolerance) {
  std::ostringstream os;
  char buf[256];
  for (const auto& g : r.groups) {
    std::snprintf(buf, sizeof buf, "%-24s %-28s %9zu %5zu  max_rel=%.3e  %s\n", r.config_name.c_str(), g.name.c_str(),
                  g.size, g.checked, g.max_rel_error, g.max_rel_error <= tolerance ? "ok" : "FAIL");
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-24s relative error floor %.2e\n", r.config_name.c_str(), r.floor);
  os << buf;
  return os.str();
}

}  // namespace rfcn
