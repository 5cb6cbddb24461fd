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

#include <cstdint>
#include <random>
#include <variant>

#include "rfcn/tensor.hpp"

namespace rfcn {

/**
 * Deterministic random stream backed by std::mt19937_64.
 *
 * The engine's output sequence is fixed by the C++ standard, and every
 * derived draw below is computed from raw 64-bit words (never through the
 * implementation-defined std:: distributions), so a seed yields the same
 * scalars on every platform.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); unbiased (rejection sampling). n must be > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed for independent stream `stream` derived from `base`:
/// splitmix64(base ^ splitmix64(stream + 1)).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct UniformDist {
  double lo = 0.0;
  double hi = 1.0;
};

/// Uniform in [-sqrt(6 / fan_in), +sqrt(6 / fan_in)].
struct ScaledFanInDist {
  std::size_t fan_in = 1;
};

using Distribution = std::variant<UniformDist, ScaledFanInDist>;

template <typename T>
Tensor<T> fill_random(const Shape& shape, const Distribution& dist, Rng& rng);

}  // namespace rfcn
