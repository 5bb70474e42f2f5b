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

#include <cstddef>
#include <cstdint>

#include "stq/dataset.hpp"

namespace stq {

struct DigitStyle {
  std::size_t size = 28;
  double max_rotation = 0.45;  // radians
  double min_scale = 0.8;
  double max_scale = 1.1;
  double max_shear = 0.35;
  double max_shift = 3.0;      // pixels
  double jitter = 0.07;        // control point displacement, unit square
  double min_thickness = 1.1;  // pixels
  double max_thickness = 2.3;
  double noise = 0.25;         // additive uniform pixel noise amplitude
  std::size_t clutter = 5;     // maximum stray strokes
};

// Procedural 10-class handwritten-style digits: each class is a fixed stroke
// skeleton drawn with random affine distortion, stroke width, point jitter,
// pixel noise and stray strokes. Classes are interleaved (label = index mod
// 10) and the output depends only on (count, seed, style).
Dataset make_digits(std::size_t count, std::uint64_t seed, const DigitStyle& style = {});

}  // namespace stq
