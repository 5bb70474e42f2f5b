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

#include "stq/dataset.hpp"

#include <algorithm>
#include <cstring>

namespace stq {

void Dataset::validate() const {
  require(images.shape().n == labels.size(), ErrorCode::kShapeMismatch,
          "dataset: " + std::to_string(images.shape().n) + " images vs " +
              std::to_string(labels.size()) + " labels");
  for (int l : labels) {
    require(l >= 0 && static_cast<std::size_t>(l) < classes, ErrorCode::kInvalidArgument,
            "dataset: label " + std::to_string(l) + " outside [0, " + std::to_string(classes) +
                ")");
  }
}

Tensor Dataset::gather_images(std::span<const std::size_t> indices) const {
  const Shape& s = images.shape();
  const std::size_t stride = s.h * s.w * s.c;
  Tensor out(Shape{indices.size(), s.h, s.w, s.c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < s.n, ErrorCode::kInvalidArgument, "dataset: index out of range");
    std::memcpy(out.raw() + i * stride, images.raw() + indices[i] * stride,
                stride * sizeof(double));
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  require(begin + count <= size(), ErrorCode::kInvalidArgument, "dataset: slice out of range");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
  return Dataset{gather_images(idx), gather_labels(idx), classes};
}

}  // namespace stq
