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
#include <random>
#include <string>
#include <vector>

#include "stq/dataset.hpp"
#include "stq/model.hpp"
#include "stq/tensor.hpp"

namespace stq::testing {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

// A quantized conv-BN-ActiQuan chain in the compile() pattern (float stem,
// 1-3 quantized blocks, pooled classifier) with every parameter and buffer
// drawn at random: signed BN scales, arbitrary shifts and running statistics,
// thresholds in [0.05, 1.5], LSQ steps around their initializer.
struct RandomChain {
  Model model;
  Tensor images;
  int bits = 0;
};
RandomChain random_chain(std::uint64_t seed, std::size_t images = 8);

// Fresh directory under the system temp path, removed by the caller.
std::string temp_dir(const std::string& tag);

// The canonical 4-record IDX fixture: labels 7, 2, 1, 0 and pixel
// (n, r, c) = (n * 61 + r * 7 + c * 3) mod 256, written byte by byte.
std::vector<std::uint8_t> fixture_image_bytes();
std::vector<std::uint8_t> fixture_label_bytes();
inline constexpr std::uint8_t fixture_pixel(std::size_t n, std::size_t r, std::size_t c) {
  return static_cast<std::uint8_t>((n * 61 + r * 7 + c * 3) % 256);
}

}  // namespace stq::testing
