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

#include "stq/st_block.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "stq/ops.hpp"

namespace stq {

namespace {

std::atomic<std::uint64_t> g_st_calls{0};

DenseParams init_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  DenseParams p{Tensor(Shape{1, 1, in, out}), channel_vector(out)};
  for (double& v : p.weight.data()) v = dist(rng);
  for (double& v : p.bias.data()) v = dist(rng);
  return p;
}

DenseParams dense_grads(const Tensor& input, const Tensor& grad_out, const DenseParams& p) {
  return DenseParams{conv2d_grad_kernel(input, grad_out, p.weight.shape(), ConvGeometry{}),
                     channel_sum(grad_out)};
}

}  // namespace

STBlockParams STBlockParams::init(std::size_t channels, std::size_t reduction,
                                  std::mt19937_64& rng, bool single_stage) {
  require(channels >= 1, ErrorCode::kInvalidArgument, "st block: channels must be >= 1");
  require(reduction >= 1, ErrorCode::kInvalidArgument, "st block: reduction must be >= 1");
  STBlockParams p;
  p.channels = channels;
  p.single_stage = single_stage;
  p.hidden = single_stage ? channels : std::max<std::size_t>(1, channels / reduction);
  if (!single_stage) {
    p.fc1 = init_dense(channels, p.hidden, rng);
    p.bn = BatchNormParams::identity(p.hidden);
  }
  p.fc2 = init_dense(p.hidden, channels, rng);
  return p;
}

void STBlockParams::validate() const {
  if (!single_stage) {
    require(fc1.in() == channels && fc1.out() == hidden, ErrorCode::kShapeMismatch,
            "st block: fc1 shape " + fc1.weight.shape().str());
    bn.validate();
    require(bn.channels() == hidden, ErrorCode::kShapeMismatch, "st block: bn width");
  }
  require(fc2.in() == hidden && fc2.out() == channels, ErrorCode::kShapeMismatch,
          "st block: fc2 shape " + fc2.weight.shape().str());
}

STForward st_forward(const Tensor& x, STBlockParams& params, bool training) {
  g_st_calls.fetch_add(1, std::memory_order_relaxed);
  require(x.shape().n >= 1, ErrorCode::kInvalidArgument, "st_forward: empty batch");
  require(x.shape().c == params.channels, ErrorCode::kShapeMismatch,
          "st_forward: input " + x.shape().str() + " vs " + std::to_string(params.channels) +
              " block channels");
  STForward f;
  STCache& c = f.cache;
  c.training = training;
  c.input_shape = x.shape();
  c.x_sq = global_avg_pool(x);
  if (params.single_stage) {
    c.hidden = c.x_sq;
  } else {
    c.hidden_in = dense(c.x_sq, params.fc1.weight, params.fc1.bias);
    if (training) {
      c.bn_out = batchnorm_train(c.hidden_in, params.bn, c.bn);
      batchnorm_update_running(params.bn, c.bn);
    } else {
      c.bn_out = batchnorm_eval(c.hidden_in, params.bn);
    }
    c.hidden = relu(c.bn_out);
  }
  c.x_th_batch = sigmoid(dense(c.hidden, params.fc2.weight, params.fc2.bias));
  f.y_th_ins = batch_mean(c.x_th_batch);
  return f;
}

STGrads st_backward(const Tensor& upstream, const STCache& cache, const STBlockParams& params) {
  require(cache.training, ErrorCode::kInvalidArgument,
          "st_backward: cache comes from an eval-mode forward");
  require_same_shape(upstream.shape(), Shape{1, 1, 1, params.channels}, "st_backward upstream");
  STGrads g;
  Tensor d_sig = batch_mean_backward(upstream, cache.input_shape.n);
  Tensor d_logit(d_sig.shape());
  for (std::size_t i = 0; i < d_sig.size(); ++i) {
    const double s = cache.x_th_batch[i];
    d_logit[i] = d_sig[i] * s * (1.0 - s);
  }
  g.dfc2 = dense_grads(cache.hidden, d_logit, params.fc2);
  Tensor d_hidden = conv2d_grad_input(d_logit, params.fc2.weight, cache.hidden.shape(),
                                      ConvGeometry{});
  Tensor d_sq;
  if (params.single_stage) {
    d_sq = std::move(d_hidden);
  } else {
    Tensor d_bn_out = relu_backward(cache.bn_out, d_hidden);
    BatchNormGrads bn = batchnorm_backward(d_bn_out, cache.bn, params.bn);
    g.dgamma = std::move(bn.dgamma);
    g.dbeta = std::move(bn.dbeta);
    g.dfc1 = dense_grads(cache.x_sq, bn.dx, params.fc1);
    d_sq = conv2d_grad_input(bn.dx, params.fc1.weight, cache.x_sq.shape(), ConvGeometry{});
  }
  g.dx = global_avg_pool_backward(d_sq, cache.input_shape);
  return g;
}

std::uint64_t st_invocation_count() { return g_st_calls.load(); }
void reset_st_invocation_count() { g_st_calls.store(0); }

}  // namespace stq
