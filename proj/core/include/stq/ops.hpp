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

#include "stq/tensor.hpp"

namespace stq {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

// Output extent of a cross-correlation of `input` with a (Kh,Kw,Cin,Cout) kernel.
Shape conv2d_output_shape(const Shape& input, const Shape& kernel, ConvGeometry geometry);

// Cross-correlation in NHWC with kernel layout (Kh,Kw,Cin,Cout). The loop nest
// is n, oh, ow, kh, kw, ci, co, so every output element accumulates its terms
// in the same order on every call.
Tensor conv2d(const Tensor& input, const Tensor& kernel, ConvGeometry geometry);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         ConvGeometry geometry);
Tensor conv2d_grad_kernel(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          ConvGeometry geometry);

// Fully connected layer over (N,1,1,Cin) rows; weight is (1,1,Cin,Cout) and
// bias (1,1,1,Cout). Implemented as a 1x1 convolution.
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& input_shape);

// Mean over the batch axis of an (N,1,1,C) tensor.
Tensor batch_mean(const Tensor& x);
Tensor batch_mean_backward(const Tensor& grad_out, std::size_t batch);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);
Tensor sigmoid(const Tensor& x);

// Elementwise arithmetic. `b` must match `a` exactly or be a (1,1,1,C) or
// (N,1,1,C) broadcast operand; any other shape is rejected.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);
void add_inplace(Tensor& a, const Tensor& b);

// Sum of `x` over all axes but C, as a (1,1,1,C) vector.
Tensor channel_sum(const Tensor& x);

double sum(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);
double mean(const Tensor& x);

}  // namespace stq
