/* Copyright 2026 The stquant Authors. All Rights Reserved.

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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "stq/tensor.hpp"

namespace stq {

// Self-describing binary container shared by checkpoints and fused models.
//
//   magic        8 bytes
//   version      u32
//   digest       u64 (config digest)
//   meta count   u32, then (u32 len, key bytes, u32 len, value bytes)*
//   tensor count u32, then per tensor:
//       u32 name length, name bytes, u8 dtype (0 = f64, 1 = i32),
//       u64 n, h, w, c, payload
//   crc32        u32 over every preceding byte
//
// All integers and payloads are little-endian. Entries are written in name
// order so equal archives serialize to identical bytes.
struct Archive {
  using Magic = std::array<char, 8>;
  using Entry = std::variant<Tensor, IntTensor>;

  Magic magic{};
  std::uint32_t version = 1;
  std::uint64_t digest = 0;
  std::map<std::string, std::string> meta;
  std::map<std::string, Entry> tensors;

  const Tensor& f64(const std::string& name) const;
  const IntTensor& i32(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  const std::string& meta_at(const std::string& key) const;
};

std::vector<std::uint8_t> serialize(const Archive& archive);
// Rejects a wrong magic, unsupported version, truncated data or checksum
// mismatch.
Archive deserialize(const std::vector<std::uint8_t>& bytes, const Archive::Magic& magic,
                    std::uint32_t version);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path, const Archive::Magic& magic,
                     std::uint32_t version);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// 64-bit FNV-1a, used for config digests.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace stq
