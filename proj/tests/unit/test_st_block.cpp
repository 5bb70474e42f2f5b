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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stq/st_block.hpp"
#include "test_support.hpp"

namespace stq {
namespace {

using testing::random_tensor;

// Straight-line restatement of the double-stage pipeline in training mode:
// pool, FC1, batch-statistics BN, ReLU, FC2, sigmoid, mean over the batch.
std::vector<double> st_oracle(const Tensor& x, const STBlockParams& p) {
  const Shape s = x.shape();
  const std::size_t n = s.n;
  const std::size_t c = s.c;
  std::vector<std::vector<double>> pooled(n, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t h = 0; h < s.h; ++h)
      for (std::size_t w = 0; w < s.w; ++w)
        for (std::size_t k = 0; k < c; ++k)
          pooled[i][k] += x(i, h, w, k) / static_cast<double>(s.h * s.w);
  std::vector<std::vector<double>> hidden = pooled;
  if (!p.single_stage) {
    const std::size_t m = p.hidden;
    std::vector<std::vector<double>> a(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = p.fc1.bias[j];
        for (std::size_t k = 0; k < c; ++k) acc += pooled[i][k] * p.fc1.weight(0, 0, k, j);
        a[i][j] = acc;
      }
    for (std::size_t j = 0; j < m; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += a[i][j] / static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (a[i][j] - mu) * (a[i][j] - mu) / n;
      for (std::size_t i = 0; i < n; ++i) {
        const double b = p.bn.gamma[j] * (a[i][j] - mu) / std::sqrt(var + p.bn.eps) + p.bn.beta[j];
        a[i][j] = b > 0.0 ? b : 0.0;
      }
    }
    hidden = a;
  }
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      double acc = p.fc2.bias[k];
      for (std::size_t j = 0; j < hidden[i].size(); ++j) acc += hidden[i][j] * p.fc2.weight(0, 0, j, k);
      out[k] += 1.0 / (1.0 + std::exp(-acc)) / static_cast<double>(n);
    }
  return out;
}

TEST(StBlock, ZeroFc2GivesOneHalf) {
  std::mt19937_64 rng(1);
  STBlockParams p = STBlockParams::init(4, 2, rng);
  p.fc2.weight.fill(0.0);
  p.fc2.bias.fill(0.0);
  const Tensor x = random_tensor({3, 2, 2, 4}, rng);
  const STForward f = st_forward(x, p, true);
  EXPECT_EQ(f.y_th_ins, channel_vector(4, 0.5));
}

TEST(StBlock, MatchesStraightLineOracle) {
  std::mt19937_64 rng(7);
  for (bool single : {false, true}) {
    for (std::size_t n : {2u, 3u, 5u}) {
      STBlockParams p = STBlockParams::init(6, 2, rng, single);
      const Tensor x = random_tensor({n, 3, 4, 6}, rng, -2.0, 2.0);
      const std::vector<double> ref = st_oracle(x, p);
      const STForward f = st_forward(x, p, true);
      ASSERT_EQ(f.y_th_ins.shape(), (Shape{1, 1, 1, 6}));
      for (std::size_t c = 0; c < 6; ++c) {
        EXPECT_NEAR(f.y_th_ins[c], ref[c], 1e-10);
        EXPECT_GT(f.y_th_ins[c], 0.0);
        EXPECT_LT(f.y_th_ins[c], 1.0);
      }
    }
  }
}

TEST(StBlock, SingleSampleBatchMeanIsIdentity) {
  std::mt19937_64 rng(2);
  STBlockParams p = STBlockParams::init(3, 1, rng, true);
  const Tensor x = random_tensor({1, 2, 2, 3}, rng);
  const STForward f = st_forward(x, p, false);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(f.y_th_ins[c], f.cache.x_th_batch[c]);
}

TEST(StBlock, EvalLeavesRunningStatisticsAlone) {
  std::mt19937_64 rng(4);
  STBlockParams p = STBlockParams::init(4, 2, rng);
  const STBlockParams before = p;
  const Tensor x = random_tensor({4, 2, 2, 4}, rng);
  st_forward(x, p, false);
  EXPECT_EQ(p.bn.running_mean, before.bn.running_mean);
  EXPECT_EQ(p.bn.running_var, before.bn.running_var);
  st_forward(x, p, true);
  EXPECT_NE(p.bn.running_mean, before.bn.running_mean);
}

TEST(StBlock, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(5);
  STBlockParams p = STBlockParams::init(4, 2, rng);
  const Tensor x = random_tensor({3, 2, 2, 4}, rng);
  const STForward f = st_forward(x, p, true);
  const STGrads g = st_backward(Tensor({1, 1, 1, 4}), f.cache, p);
  for (double v : g.dx.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.dfc1.weight.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.dfc2.weight.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.dgamma.data()) EXPECT_EQ(v, 0.0);
}

TEST(StBlock, InvocationCounter) {
  std::mt19937_64 rng(6);
  STBlockParams p = STBlockParams::init(2, 1, rng);
  const Tensor x = random_tensor({2, 2, 2, 2}, rng);
  reset_st_invocation_count();
  st_forward(x, p, true);
  st_forward(x, p, false);
  EXPECT_EQ(st_invocation_count(), 2u);
}

TEST(StBlock, HiddenWidthFollowsReduction) {
  std::mt19937_64 rng(6);
  EXPECT_EQ(STBlockParams::init(16, 4, rng).hidden, 4u);
  EXPECT_EQ(STBlockParams::init(3, 8, rng).hidden, 1u);
}

}  // namespace
}  // namespace stq
