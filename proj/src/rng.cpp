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

#include "rfcn/rng.hpp"

#include <cmath>

namespace rfcn {

std::uint64_t Rng::below(std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 1));
}

template <typename T>
Tensor<T> fill_random(const Shape& shape, const Distribution& dist, Rng& rng) {
  double lo = 0.0;
  double hi = 0.0;
  if (const auto* u = std::get_if<UniformDist>(&dist)) {
    lo = u->lo;
    hi = u->hi;
  } else {
    const auto& f = std::get<ScaledFanInDist>(dist);
    if (f.fan_in == 0) throw ConfigError("fill_random: fan_in must be positive");
    hi = std::sqrt(6.0 / static_cast<double>(f.fan_in));
    lo = -hi;
  }
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template Tensor<float> fill_random(const Shape&, const Distribution&, Rng&);
template Tensor<double> fill_random(const Shape&, const Distribution&, Rng&);

}  // namespace rfcn
