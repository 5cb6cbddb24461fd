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
#include <string>
#include <vector>

#include "rfcn/model.hpp"

namespace rfcn {

// Finite-difference audit of backward_window. The objective is sum(R * logits)
// for a fixed random R, evaluated in double precision, so the analytic
// gradient of every parameter is exactly what backward_window returns for
// grad_logits = R.

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;            // central difference half-width
  double tolerance = 1e-4;       // pass threshold on the relative error
  /// Lower bound on the relative error denominator. The floor actually used
  /// is raised to resolution / tolerance, where resolution is the round-off
  /// limit u * sum|R * logits| / step of the central difference.
  double floor = 1e-6;
  std::size_t max_entries = 48;  // sampled per tensor; 0 checks every entry
  std::size_t window = 0;        // frames per window; 0 uses config.window
  /// Added to every parameter after initialisation so zero-initialised
  /// tensors (biases, skip scores) sit at a generic point.
  double jitter = 0.05;
  /// Harness self-test: skews the analytic gradient of the first group.
  bool corrupt_backward = false;
};

struct GradcheckGroup {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  double max_rel_error = 0;
  double max_abs_grad = 0;  // largest |analytic| among checked entries
};

struct GradcheckReport {
  std::string config_name;
  std::size_t window = 0;
  double floor = 0;  // denominator floor in effect
  std::vector<GradcheckGroup> groups;

  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
};

/// |a - n| / max(|a|, |n|, floor).
double relative_gradient_error(double analytic, double numeric, double floor);

GradcheckReport gradcheck(const ArchitectureConfig& cfg, const GradcheckOptions& opts = {});

/// Small configurations that together exercise every layer kind, every
/// recurrent cell (both conv_gru candidate activations), skip links, and the
/// tiny rfc-lenet.
std::vector<ArchitectureConfig> gradcheck_suite();

/// One line per group: config, group, size, checked, max relative error.
std::string format_gradcheck(const GradcheckReport& r, double tolerance);

}  // namespace rfcn
