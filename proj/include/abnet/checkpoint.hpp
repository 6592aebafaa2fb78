// Copyright 2026 The abnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "abnet/config.hpp"
#include "abnet/error.hpp"
#include "abnet/params.hpp"

namespace abnet {

// Layout, all integers 32-bit little-endian:
//   magic "ABNET1\0" | version | config length | config text | tensor count |
//   per tensor: name length | name | partition byte | rank | extents | float32 values
inline constexpr std::string_view kCheckpointMagic{"ABNET1\0", 7};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kMaxTensorRank = 4;

struct Checkpoint {
  ModelConfig config;
  ParameterStore<float> params;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline bool valid_tensor_name(std::string_view name) {
  if (name.empty()) return false;
  for (const char ch : name) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                    ch == '.' || ch == '_';
    if (!ok) return false;
  }
  return true;
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointFault::truncated,
                            std::string("checkpoint truncated while reading ") + what + " at byte " +
                                std::to_string(pos_));
    }
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32(const char* what) {
    const auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const ParameterStore<T>& params, const ModelConfig& config) {
  std::string out(kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  const std::string text = config.to_text();
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, e] : params.entries()) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(e.partition == Partition::trainable ? 1 : 0));
    const auto& shape = e.var.value().shape();
    detail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (const std::size_t d : shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < e.var.value().size(); ++i) {
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(e.var.value()[i])));
    }
  }
  return out;
}

/// Load faults: bad_magic, unsupported_version, truncated (the file ends
/// before the data its headers describe), extent_mismatch (zero or
/// oversized extents, or bytes left after the last tensor) and malformed
/// (bad partition byte, rank, name or config text).
inline Checkpoint parse_checkpoint(std::string_view bytes) {
  detail::Reader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError(CheckpointFault::bad_magic, "not an abnet checkpoint (bad magic bytes)");
  }
  r.take(kCheckpointMagic.size(), "magic");
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointFault::unsupported_version,
                          "unsupported checkpoint format version " + std::to_string(version));
  }
  const std::uint32_t text_len = r.u32("config length");
  const std::string text(r.take(text_len, "config text"));
  for (const char ch : text) {
    if (static_cast<unsigned char>(ch) < 0x20 && ch != '\n') {
      throw CheckpointError(CheckpointFault::malformed, "checkpoint config text contains control bytes");
    }
  }
  Checkpoint ck;
  try {
    ck.config = ModelConfig::from_config(ConfigMap::parse(text, "checkpoint config"));
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointFault::malformed, std::string("checkpoint config: ") + e.what());
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = r.u32("tensor name length");
    const std::string name(r.take(name_len, "tensor name"));
    if (!detail::valid_tensor_name(name)) {
      throw CheckpointError(CheckpointFault::malformed, "invalid tensor name in checkpoint entry " + std::to_string(k));
    }
    const auto part = static_cast<unsigned char>(r.take(1, "partition byte")[0]);
    if (part > 1) {
      throw CheckpointError(CheckpointFault::malformed, "tensor '" + name + "' has partition byte " + std::to_string(part));
    }
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > kMaxTensorRank) {
      throw CheckpointError(CheckpointFault::malformed, "tensor '" + name + "' has rank " + std::to_string(rank));
    }
    Shape shape;
    std::uint64_t elements = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("tensor extent");
      elements *= d;
      if (d == 0 || elements * 4 > bytes.size()) {
        throw CheckpointError(CheckpointFault::extent_mismatch,
                              "tensor '" + name + "' extents do not fit the file");
      }
      shape.push_back(d);
    }
    const auto raw = r.take(static_cast<std::size_t>(elements) * 4, "tensor values");
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint32_t v = 0;
      for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(raw[i * 4 + static_cast<std::size_t>(b)]);
      t[i] = std::bit_cast<float>(v);
    }
    if (ck.params.has(name)) {
      throw CheckpointError(CheckpointFault::malformed, "duplicate tensor '" + name + "'");
    }
    ck.params.add(name, std::move(t), part ? Partition::trainable : Partition::frozen);
  }
  if (r.remaining() != 0) {
    throw CheckpointError(CheckpointFault::extent_mismatch,
                          std::to_string(r.remaining()) + " bytes left after the last tensor");
  }
  return ck;
}

template <class T>
void save_checkpoint(const ParameterStore<T>& params, const ModelConfig& config, const std::string& path) {
  const std::string bytes = serialize_checkpoint(params, config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointFault::io, "cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointFault::io, "write failed for checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointFault::io, "cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace abnet
