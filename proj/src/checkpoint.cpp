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

#include "rfcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <set>

#include "rfcn/io.hpp"

namespace rfcn {

namespace {

constexpr char kMagic[4] = {'R', 'F', 'C', 'N'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_bytes(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    const auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(take(1, what)[0]); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model<float>& m) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_bytes(out, config_to_json(m.config));
  const auto tensors = named_tensors(m.params);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_bytes(out, name);
    out.push_back(static_cast<char>(t->rank()));
    for (std::size_t d : t->shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t->values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Model<float> deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("not a checkpoint: bad magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t config_len = r.u32("config length");
  ArchitectureConfig cfg;
  try {
    cfg = config_from_json(r.take(config_len, "config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
  }
  Model<float> m{cfg, allocate_params<float>(cfg)};
  std::map<std::string, Tensor<float>*> slots;
  for (auto& [name, t] : named_tensors(m.params)) slots.emplace(name, t);

  const std::uint32_t count = r.u32("tensor count");
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name(r.take(r.u32("name length"), "name"));
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint tensor '" + name + "' is not a parameter of its config");
    if (!seen.insert(name).second) throw FormatError("checkpoint tensor '" + name + "' appears twice");
    const std::uint8_t rank = r.u8("rank");
    Shape dims(rank);
    for (auto& d : dims) d = r.u32("dims");
    Tensor<float>& dst = *it->second;
    if (dims != dst.shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has dims " + shape_string(dims) + ", config implies " +
                       shape_string(dst.shape()));
    }
    const auto payload = r.take(4 * dst.size(), "payload");
    for (std::size_t k = 0; k < dst.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * k + b])) << (8 * b);
      dst[k] = std::bit_cast<float>(bits);
    }
  }
  if (seen.size() != slots.size()) {
    for (const auto& [name, t] : slots)
      if (!seen.count(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  return m;
}

void save_checkpoint(const Model<float>& m, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(m));
}

Model<float> load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace rfcn
