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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stq/error.hpp"

namespace stq {

// Extent of an NHWC tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;

  std::size_t numel() const;
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense rank-4 array in NHWC row-major order. Owns its storage; copies are deep.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{})
      : shape_(shape), data_(shape.numel(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require(data_.size() == shape_.numel(), ErrorCode::kShapeMismatch,
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t offset(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return ((n * shape_.h + h) * shape_.w + w) * shape_.c + c;
  }

  T& operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[offset(n, h, w, c)];
  }
  const T& operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_[offset(n, h, w, c)];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using IntTensor = BasicTensor<std::int32_t>;

// Per-channel vector helpers: tensors of shape (1,1,1,C).
Tensor channel_vector(std::size_t channels, double fill = 0.0);
Tensor channel_vector(std::vector<double> values);
Tensor scalar_tensor(double value);

void require_same_shape(const Shape& a, const Shape& b, const char* what);
bool all_finite(const Tensor& t);

}  // namespace stq
