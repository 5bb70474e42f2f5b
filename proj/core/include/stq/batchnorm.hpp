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

// Per-channel batch normalization over every axis but C. Used both by the
// 2-D layers (stats over N,H,W) and by the ST block's hidden stage (stats
// over N on (N,1,1,C) features).
struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormParams identity(std::size_t channels);
  std::size_t channels() const { return gamma.shape().c; }
  void validate() const;
  friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

struct BatchNormCache {
  Tensor x_hat;
  Tensor inv_std;
  Tensor batch_mean;
  Tensor batch_var;  // biased
  std::size_t count = 0;
};

Tensor batchnorm_train(const Tensor& x, const BatchNormParams& params, BatchNormCache& cache);
Tensor batchnorm_eval(const Tensor& x, const BatchNormParams& params);

// running <- (1 - momentum) * running + momentum * batch (unbiased variance).
void batchnorm_update_running(BatchNormParams& params, const BatchNormCache& cache);

struct BatchNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};

BatchNormGrads batchnorm_backward(const Tensor& grad_out, const BatchNormCache& cache,
                                  const BatchNormParams& params);

// Eval-mode BN as y = scale * x + shift per channel.
struct ChannelAffine {
  Tensor scale;
  Tensor shift;
};

ChannelAffine batchnorm_affine(const BatchNormParams& params);

}  // namespace stq
