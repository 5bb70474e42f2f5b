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

#include "stq/archive.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace stq {

const Tensor& Archive::f64(const std::string& name) const {
  auto it = tensors.find(name);
  require(it != tensors.end(), ErrorCode::kMissingTensor, "archive: missing tensor " + name);
  const Tensor* t = std::get_if<Tensor>(&it->second);
  require(t != nullptr, ErrorCode::kFormat, "archive: tensor " + name + " is not f64");
  return *t;
}

const IntTensor& Archive::i32(const std::string& name) const {
  auto it = tensors.find(name);
  require(it != tensors.end(), ErrorCode::kMissingTensor, "archive: missing tensor " + name);
  const IntTensor* t = std::get_if<IntTensor>(&it->second);
  require(t != nullptr, ErrorCode::kFormat, "archive: tensor " + name + " is not i32");
  return *t;
}

const std::string& Archive::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  require(it != meta.end(), ErrorCode::kFormat, "archive: missing metadata key " + key);
  return it->second;
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* data, std::size_t n) { bytes_.insert(bytes_.end(), data, data + n); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) fail(ErrorCode::kFormat, "archive: truncated data");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

constexpr std::uint8_t kDtypeF64 = 0;
constexpr std::uint8_t kDtypeI32 = 1;

}  // namespace

std::vector<std::uint8_t> serialize(const Archive& archive) {
  Writer w;
  w.raw(archive.magic.data(), archive.magic.size());
  w.u32(archive.version);
  w.u64(archive.digest);
  w.u32(static_cast<std::uint32_t>(archive.meta.size()));
  for (const auto& [k, v] : archive.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, entry] : archive.tensors) {
    w.str(name);
    std::visit(
        [&](const auto& t) {
          using T = typename std::decay_t<decltype(t)>::value_type;
          w.u8(std::is_same_v<T, double> ? kDtypeF64 : kDtypeI32);
          const Shape& s = t.shape();
          for (std::size_t d : {s.n, s.h, s.w, s.c}) w.u64(d);
          for (T v : t.data()) {
            if constexpr (std::is_same_v<T, double>) {
              w.u64(std::bit_cast<std::uint64_t>(v));
            } else {
              w.u32(std::bit_cast<std::uint32_t>(v));
            }
          }
        },
        entry);
  }
  const std::uint32_t crc = crc_of(w.bytes().data(), w.bytes().size());
  w.u32(crc);
  return std::move(w.bytes());
}

Archive deserialize(const std::vector<std::uint8_t>& bytes, const Archive::Magic& magic,
                    std::uint32_t version) {
  require(bytes.size() >= magic.size() + 4, ErrorCode::kFormat, "archive: file too short");
  require(std::memcmp(bytes.data(), magic.data(), magic.size()) == 0, ErrorCode::kFormat,
          "archive: bad magic, expected '" + std::string(magic.data(), magic.size()) + "'");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  require(stored == crc_of(bytes.data(), body), ErrorCode::kChecksum,
          "archive: checksum mismatch");

  Reader r(bytes, body);
  for (std::size_t i = 0; i < magic.size(); ++i) r.u8();
  Archive a;
  a.magic = magic;
  a.version = r.u32();
  require(a.version == version, ErrorCode::kVersion,
          "archive: format version " + std::to_string(a.version) + ", expected " +
              std::to_string(version));
  a.digest = r.u64();
  const std::uint32_t meta_count = r.u32();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string k = r.str();
    a.meta[k] = r.str();
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint8_t dtype = r.u8();
    Shape s;
    s.n = r.u64();
    s.h = r.u64();
    s.w = r.u64();
    s.c = r.u64();
    const std::size_t n = s.numel();
    require(n <= body, ErrorCode::kFormat, "archive: tensor " + name + " larger than file");
    if (dtype == kDtypeF64) {
      std::vector<double> data(n);
      for (double& v : data) v = std::bit_cast<double>(r.u64());
      a.tensors.emplace(std::move(name), Tensor(s, std::move(data)));
    } else if (dtype == kDtypeI32) {
      std::vector<std::int32_t> data(n);
      for (std::int32_t& v : data) v = std::bit_cast<std::int32_t>(r.u32());
      a.tensors.emplace(std::move(name), IntTensor(s, std::move(data)));
    } else {
      fail(ErrorCode::kFormat, "archive: unknown dtype " + std::to_string(dtype));
    }
  }
  require(r.pos() == body, ErrorCode::kFormat, "archive: trailing bytes before checksum");
  return a;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorCode::kIo, "write failed for " + path.string());
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  write_file_bytes(path, serialize(archive));
}

Archive read_archive(const std::filesystem::path& path, const Archive::Magic& magic,
                     std::uint32_t version) {
  return deserialize(read_file_bytes(path), magic, version);
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace stq
