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

#include "stq/tensor.hpp"

#include <cmath>
#include <limits>

namespace stq {

std::size_t Shape::numel() const {
  std::size_t total = 1;
  for (std::size_t dim : {n, h, w, c}) {
    if (dim != 0 && total > std::numeric_limits<std::size_t>::max() / dim) {
      fail(ErrorCode::kInvalidArgument, "shape " + str() + " overflows size_t");
    }
    total *= dim;
  }
  return total;
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
         std::to_string(c) + ")";
}

Tensor channel_vector(std::size_t channels, double fill) {
  return Tensor(Shape{1, 1, 1, channels}, fill);
}

Tensor channel_vector(std::vector<double> values) {
  const std::size_t c = values.size();
  return Tensor(Shape{1, 1, 1, c}, std::move(values));
}

Tensor scalar_tensor(double value) { return Tensor(Shape{1, 1, 1, 1}, value); }

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + ": shape " + a.str() + " vs " + b.str());
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace stq
