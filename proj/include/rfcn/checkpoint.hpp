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
#include <string>
#include <string_view>

#include "rfcn/model.hpp"

namespace rfcn {

/**
 * Checkpoint container, all integers little-endian:
 *
 *   "RFCN"                      4-byte magic
 *   u32 version
 *   u32 n, n bytes              canonical config JSON
 *   u32 count                   number of tensor records
 *   count x {
 *     u32 n, n bytes            canonical parameter name
 *     u8 rank, rank x u32 dims
 *     f32 payload               row-major
 *   }
 *
 * Loading validates magic, version and config, and requires the record set
 * to equal the config's parameter names with matching dims. Malformed bytes
 * raise FormatError; a dims disagreement raises ShapeError.
 */
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model<float>& m);
Model<float> deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Model<float>& m, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

}  // namespace rfcn
