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
#include <span>
#include <vector>

#include "stq/tensor.hpp"

namespace stq {

// Labelled image set, images as (N,H,W,C) floats in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t classes = 10;

  std::size_t size() const { return labels.size(); }
  void validate() const;

  Tensor gather_images(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  // Records [begin, begin + count).
  Dataset slice(std::size_t begin, std::size_t count) const;
};

}  // namespace stq
