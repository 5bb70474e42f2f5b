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
#include <random>

#include "stq/batchnorm.hpp"
#include "stq/tensor.hpp"

namespace stq {

struct DenseParams {
  Tensor weight;  // (1,1,in,out)
  Tensor bias;    // (1,1,1,out)

  std::size_t in() const { return weight.shape().w; }
  std::size_t out() const { return weight.shape().c; }
};

// Double-stage Squeeze-and-Threshold block:
//   avg-pool -> FC1 -> BN -> ReLU -> FC2 -> sigmoid -> mean over batch.
// With single_stage set the FC1-BN-ReLU stage is skipped and FC2 maps C -> C.
struct STBlockParams {
  std::size_t channels = 0;
  std::size_t hidden = 0;
  bool single_stage = false;
  DenseParams fc1;
  BatchNormParams bn;
  DenseParams fc2;

  // FC layers uniform in +-1/sqrt(fan_in), BN gamma = 1, beta = 0.
  // hidden = max(1, channels / reduction).
  static STBlockParams init(std::size_t channels, std::size_t reduction, std::mt19937_64& rng,
                            bool single_stage = false);
  void validate() const;
};

struct STCache {
  bool training = false;
  Shape input_shape;
  Tensor x_sq;      // (N,1,1,C)
  Tensor hidden_in;  // FC1 output
  BatchNormCache bn;
  Tensor bn_out;
  Tensor hidden;    // after ReLU
  Tensor x_th_batch;  // sigmoid output (N,1,1,C)
};

struct STForward {
  Tensor y_th_ins;  // (1,1,1,C), every element in (0, 1)
  STCache cache;
};

// Training mode normalizes with batch statistics and updates the BN running
// statistics; eval mode uses the running statistics and leaves params alone.
STForward st_forward(const Tensor& x, STBlockParams& params, bool training);

struct STGrads {
  Tensor dx;
  DenseParams dfc1;
  Tensor dgamma;
  Tensor dbeta;
  DenseParams dfc2;
};

STGrads st_backward(const Tensor& upstream, const STCache& cache, const STBlockParams& params);

// Number of st_forward calls since the last reset, across all threads.
std::uint64_t st_invocation_count();
void reset_st_invocation_count();

}  // namespace stq
