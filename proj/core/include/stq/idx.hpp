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

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stq/dataset.hpp"

namespace stq {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Unsigned-byte IDX pair: images (N,rows,cols) and labels (N). Pixels are
// scaled to [0, 1]; labels must lie in [0, classes). An empty but valid pair
// yields an empty dataset.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes = 10);
Dataset parse_idx(const std::vector<std::uint8_t>& image_bytes,
                  const std::vector<std::uint8_t>& label_bytes, std::size_t classes = 10);

// Big-endian IDX encodings of raw bytes.
std::vector<std::uint8_t> encode_idx_images(const std::vector<std::uint8_t>& pixels,
                                            std::uint32_t count, std::uint32_t rows,
                                            std::uint32_t cols);
std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels);

// Quantizes [0, 1] images to bytes and writes both files.
void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const Dataset& data);

}  // namespace stq
