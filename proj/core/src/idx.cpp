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

#include "stq/idx.hpp"

#include <fmt/format.h>

#include <cmath>

#include "stq/archive.hpp"
#include "stq/error.hpp"

namespace stq {
namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at, const char* what) {
  require(b.size() >= at + 4, ErrorCode::kFormat,
          fmt::format("idx {}: truncated header ({} bytes)", what, b.size()));
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

Dataset parse_idx(const std::vector<std::uint8_t>& image_bytes,
                  const std::vector<std::uint8_t>& label_bytes, std::size_t classes) {
  const std::uint32_t im = read_be32(image_bytes, 0, "images");
  require(im == kIdxImagesMagic, ErrorCode::kFormat,
          fmt::format("idx images: bad magic 0x{:08x}, expected 0x{:08x}", im, kIdxImagesMagic));
  const std::uint32_t lm = read_be32(label_bytes, 0, "labels");
  require(lm == kIdxLabelsMagic, ErrorCode::kFormat,
          fmt::format("idx labels: bad magic 0x{:08x}, expected 0x{:08x}", lm, kIdxLabelsMagic));
  const std::uint64_t n = read_be32(image_bytes, 4, "images");
  const std::uint64_t rows = read_be32(image_bytes, 8, "images");
  const std::uint64_t cols = read_be32(image_bytes, 12, "images");
  const std::uint64_t nl = read_be32(label_bytes, 4, "labels");
  require(n == nl, ErrorCode::kFormat,
          fmt::format("idx: {} images but {} labels", n, nl));
  const std::uint64_t payload = n * rows * cols;
  require(image_bytes.size() == 16 + payload, ErrorCode::kFormat,
          fmt::format("idx images: expected {} payload bytes, found {}", payload,
                      image_bytes.size() < 16 ? 0 : image_bytes.size() - 16));
  require(label_bytes.size() == 8 + nl, ErrorCode::kFormat,
          fmt::format("idx labels: expected {} payload bytes, found {}", nl,
                      label_bytes.size() < 8 ? 0 : label_bytes.size() - 8));
  Dataset d;
  d.classes = classes;
  d.images = Tensor(Shape{static_cast<std::size_t>(n), static_cast<std::size_t>(rows),
                          static_cast<std::size_t>(cols), 1});
  for (std::size_t i = 0; i < payload; ++i) d.images[i] = image_bytes[16 + i] / 255.0;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = label_bytes[8 + i];
    require(static_cast<std::size_t>(d.labels[i]) < classes, ErrorCode::kFormat,
            fmt::format("idx labels: label {} at record {} is outside [0, {})", d.labels[i], i,
                        classes));
  }
  return d;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes) {
  return parse_idx(read_file_bytes(images), read_file_bytes(labels), classes);
}

std::vector<std::uint8_t> encode_idx_images(const std::vector<std::uint8_t>& pixels,
                                            std::uint32_t count, std::uint32_t rows,
                                            std::uint32_t cols) {
  require(pixels.size() == std::uint64_t{count} * rows * cols, ErrorCode::kInvalidArgument,
          "encode_idx_images: pixel count does not match dimensions");
  std::vector<std::uint8_t> out;
  out.reserve(16 + pixels.size());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const Dataset& data) {
  data.validate();
  const Shape& s = data.images.shape();
  require(s.c == 1, ErrorCode::kInvalidArgument, "write_idx: images must have one channel");
  std::vector<std::uint8_t> pixels(data.images.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(data.images[i], 0.0, 1.0);
    pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  std::vector<std::uint8_t> lab(data.labels.size());
  for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = static_cast<std::uint8_t>(data.labels[i]);
  write_file_bytes(images, encode_idx_images(pixels, static_cast<std::uint32_t>(s.n),
                                             static_cast<std::uint32_t>(s.h),
                                             static_cast<std::uint32_t>(s.w)));
  write_file_bytes(labels, encode_idx_labels(lab));
}

}  // namespace stq
