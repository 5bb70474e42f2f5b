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

#include "stq/batchnorm.hpp"

#include <cmath>

#include "stq/ops.hpp"

namespace stq {

BatchNormParams BatchNormParams::identity(std::size_t channels) {
  BatchNormParams p;
  p.gamma = channel_vector(channels, 1.0);
  p.beta = channel_vector(channels, 0.0);
  p.running_mean = channel_vector(channels, 0.0);
  p.running_var = channel_vector(channels, 1.0);
  return p;
}

void BatchNormParams::validate() const {
  const Shape s{1, 1, 1, gamma.shape().c};
  require_same_shape(gamma.shape(), s, "batchnorm gamma");
  require_same_shape(beta.shape(), s, "batchnorm beta");
  require_same_shape(running_mean.shape(), s, "batchnorm running_mean");
  require_same_shape(running_var.shape(), s, "batchnorm running_var");
  require(eps > 0.0, ErrorCode::kInvalidArgument, "batchnorm eps must be positive");
  for (double v : running_var.data()) {
    require(v >= 0.0, ErrorCode::kInvalidArgument, "batchnorm running variance is negative");
  }
}

Tensor batchnorm_train(const Tensor& x, const BatchNormParams& params, BatchNormCache& cache) {
  const std::size_t c = x.shape().c;
  require(c == params.channels(), ErrorCode::kShapeMismatch,
          "batchnorm: input " + x.shape().str() + " vs " + std::to_string(params.channels()) +
              " channels");
  const std::size_t rows = c == 0 ? 0 : x.size() / c;
  require(rows >= 1, ErrorCode::kInvalidArgument, "batchnorm: empty batch");
  const double inv_rows = 1.0 / static_cast<double>(rows);

  cache.count = rows;
  cache.batch_mean = scale(channel_sum(x), inv_rows);
  cache.batch_var = channel_vector(c);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      const double d = x[r * c + k] - cache.batch_mean[k];
      cache.batch_var[k] += d * d;
    }
  }
  cache.inv_std = channel_vector(c);
  for (std::size_t k = 0; k < c; ++k) {
    cache.batch_var[k] *= inv_rows;
    cache.inv_std[k] = 1.0 / std::sqrt(cache.batch_var[k] + params.eps);
  }
  cache.x_hat = Tensor(x.shape());
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      cache.x_hat[i] = (x[i] - cache.batch_mean[k]) * cache.inv_std[k];
      y[i] = params.gamma[k] * cache.x_hat[i] + params.beta[k];
    }
  }
  return y;
}

Tensor batchnorm_eval(const Tensor& x, const BatchNormParams& params) {
  const std::size_t c = x.shape().c;
  require(c == params.channels(), ErrorCode::kShapeMismatch,
          "batchnorm: input " + x.shape().str() + " vs " + std::to_string(params.channels()) +
              " channels");
  Tensor y(x.shape());
  const std::size_t rows = c == 0 ? 0 : x.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      y[i] = params.gamma[k] * (x[i] - params.running_mean[k]) /
                 std::sqrt(params.running_var[k] + params.eps) +
             params.beta[k];
    }
  }
  return y;
}

void batchnorm_update_running(BatchNormParams& params, const BatchNormCache& cache) {
  const double m = params.momentum;
  const double n = static_cast<double>(cache.count);
  const double unbias = cache.count > 1 ? n / (n - 1.0) : 1.0;
  for (std::size_t k = 0; k < params.channels(); ++k) {
    params.running_mean[k] = (1.0 - m) * params.running_mean[k] + m * cache.batch_mean[k];
    params.running_var[k] = (1.0 - m) * params.running_var[k] + m * cache.batch_var[k] * unbias;
  }
}

BatchNormGrads batchnorm_backward(const Tensor& grad_out, const BatchNormCache& cache,
                                  const BatchNormParams& params) {
  require_same_shape(grad_out.shape(), cache.x_hat.shape(), "batchnorm_backward");
  const std::size_t c = params.channels();
  const std::size_t rows = cache.count;
  BatchNormGrads g;
  g.dgamma = channel_vector(c);
  g.dbeta = channel_vector(c);
  Tensor sum_dxhat = channel_vector(c);
  Tensor sum_dxhat_xhat = channel_vector(c);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      g.dgamma[k] += grad_out[i] * cache.x_hat[i];
      g.dbeta[k] += grad_out[i];
      const double dxhat = grad_out[i] * params.gamma[k];
      sum_dxhat[k] += dxhat;
      sum_dxhat_xhat[k] += dxhat * cache.x_hat[i];
    }
  }
  const double m = static_cast<double>(rows);
  g.dx = Tensor(grad_out.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      const double dxhat = grad_out[i] * params.gamma[k];
      g.dx[i] = cache.inv_std[k] / m *
                (m * dxhat - sum_dxhat[k] - cache.x_hat[i] * sum_dxhat_xhat[k]);
    }
  }
  return g;
}

ChannelAffine batchnorm_affine(const BatchNormParams& params) {
  const std::size_t c = params.channels();
  ChannelAffine a{channel_vector(c), channel_vector(c)};
  for (std::size_t k = 0; k < c; ++k) {
    a.scale[k] = params.gamma[k] / std::sqrt(params.running_var[k] + params.eps);
    a.shift[k] = params.beta[k] - a.scale[k] * params.running_mean[k];
  }
  return a;
}

}  // namespace stq
