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
#include <set>

#include "stq/quantizer.hpp"
#include "test_support.hpp"

namespace stq {
namespace {

using testing::random_tensor;

ThresholdState state_of(std::vector<double> values) {
  ThresholdState s(values.size());
  s.y_th = channel_vector(std::move(values));
  s.initialized = true;
  return s;
}

// Scalar restatement of the quantizer definition.
double quantize_oracle(double x, double t, int bits, bool is_signed) {
  if (bits == 1) return x >= 0.0 ? 1.0 : 0.0;
  const double lo = is_signed ? -std::pow(2.0, bits - 1) : 0.0;
  const double hi = is_signed ? std::pow(2.0, bits - 1) - 1.0 : std::pow(2.0, bits) - 1.0;
  const double v = x / t;
  const double r = v < 0.0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5);
  return std::min(hi, std::max(lo, r));
}

TEST(QuantSpec, GridBounds) {
  EXPECT_EQ(QuantSpec::unsigned_bits(2).v_hi(), 3);
  EXPECT_EQ(QuantSpec::signed_bits(2).v_lo(), -2);
  EXPECT_EQ(QuantSpec::signed_bits(2).v_hi(), 1);
  EXPECT_EQ(QuantSpec::signed_bits(1).v_lo(), -1);
  EXPECT_EQ(QuantSpec::signed_bits(1).v_hi(), 0);
  EXPECT_THROW(QuantSpec(0, false), Error);
  EXPECT_THROW(QuantSpec(17, true), Error);
}

TEST(RoundHalfAway, Ties) {
  EXPECT_EQ(round_half_away(2.5), 3.0);
  EXPECT_EQ(round_half_away(-2.5), -3.0);
  EXPECT_EQ(round_half_away(0.49999999999999994), 0.0);
}

TEST(Momentum, ClosedForm) {
  EXPECT_EQ(momentum({0.1, 90}, 0), 1.0);
  EXPECT_EQ(momentum({1.0, 90}, 37), 1.0);
  // 0.1 * (1 - cos 1) + cos 1 evaluated in extended precision.
  const long double c1 = std::cos(1.0L);
  const double oracle = static_cast<double>(0.1L * (1.0L - c1) + c1);
  EXPECT_NEAR(momentum({0.1, 90}, 90), oracle, 1e-15);
  EXPECT_NEAR(momentum({0.1, 90}, 90), 0.586272, 1e-6);
  EXPECT_THROW(momentum({0.1, 90}, 91), Error);
  EXPECT_THROW(momentum({0.0, 90}, 1), Error);
}

TEST(Ema, Endpoints) {
  ThresholdState s = state_of({0.2});
  EXPECT_EQ(ema_update(s, channel_vector(std::vector<double>{0.4}), 1.0), 1.0);
  EXPECT_EQ(s.y_th[0], 0.4);
  s = state_of({0.2});
  EXPECT_EQ(ema_update(s, channel_vector(std::vector<double>{0.4}), 0.0), 0.0);
  EXPECT_EQ(s.y_th[0], 0.2);
  s = state_of({0.2});
  ema_update(s, channel_vector(std::vector<double>{0.4}), 0.5);
  EXPECT_NEAR(s.y_th[0], 0.3, 1e-16);
}

TEST(Ema, FirstUpdateCopies) {
  ThresholdState s(2);
  EXPECT_EQ(ema_update(s, channel_vector(std::vector<double>{0.3, 0.7}), 0.25), 1.0);
  EXPECT_TRUE(s.initialized);
  EXPECT_EQ(s.y_th, channel_vector(std::vector<double>{0.3, 0.7}));
}

TEST(Ema, RejectsNegativeInstantThreshold) {
  ThresholdState s = state_of({0.2});
  try {
    ema_update(s, channel_vector(std::vector<double>{-0.1}), 0.5);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNegativeThreshold);
  }
}

TEST(QuantizeForward, HandCases) {
  const Tensor x({1, 1, 1, 1}, std::vector<double>{2.6});
  EXPECT_EQ(quantize_forward(x, state_of({1.0}), QuantSpec::unsigned_bits(2))[0], 3.0);
  const Tensor neg({1, 1, 1, 1}, std::vector<double>{-0.3});
  EXPECT_EQ(quantize_forward(neg, state_of({1.0}), QuantSpec::unsigned_bits(1))[0], 0.0);
  const Tensor zero({1, 1, 1, 1}, std::vector<double>{0.0});
  EXPECT_EQ(quantize_forward(zero, state_of({1.0}), QuantSpec::unsigned_bits(1))[0], 1.0);
}

TEST(QuantizeForward, MatchesScalarOracle) {
  std::mt19937_64 rng(42);
  for (int bits : {1, 2, 3, 4}) {
    for (bool is_signed : {false, true}) {
      const Tensor x = random_tensor({2, 3, 3, 4}, rng, -20.0, 20.0);
      const Tensor t = random_tensor({1, 1, 1, 4}, rng, 0.1, 2.0);
      ThresholdState s(4);
      s.y_th = t;
      s.initialized = true;
      const Tensor q = quantize_forward(x, s, QuantSpec(bits, is_signed));
      for (std::size_t i = 0; i < x.size(); ++i) {
        ASSERT_EQ(q[i], quantize_oracle(x[i], t[i % 4], bits, is_signed))
            << "bits " << bits << " signed " << is_signed << " index " << i;
      }
    }
  }
}

TEST(QuantizeForward, Errors) {
  const Tensor x({1, 1, 1, 2});
  ThresholdState uninit(2);
  EXPECT_THROW(quantize_forward(x, uninit, QuantSpec::unsigned_bits(2)), Error);
  try {
    quantize_forward(x, state_of({0.5, 0.0}), QuantSpec::unsigned_bits(2));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateThreshold);
  }
  EXPECT_THROW(quantize_forward(x, state_of({0.5}), QuantSpec::unsigned_bits(2)), Error);
}

TEST(QuantizeBackward, SurrogateHandCases) {
  const Tensor x0({1, 1, 1, 1}, std::vector<double>{0.0});
  const Tensor up({1, 1, 1, 1}, std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(quantize_backward(x0, up, state_of({1.0}), QuantSpec::unsigned_bits(1)).dx[0],
                   0.5);
  const Tensor clipped({1, 1, 1, 1}, std::vector<double>{5.0});
  const QuantizeGrads g =
      quantize_backward(clipped, up, state_of({1.0}), QuantSpec::unsigned_bits(2));
  EXPECT_EQ(g.dx[0], 0.0);
  EXPECT_EQ(g.dy_th[0], 0.0);
}

TEST(Rescale, MeanThreshold) {
  const Tensor ones({2, 2, 2, 2}, 1.0);
  const Tensor y = rescale(ones, state_of({0.2, 0.4}));
  for (double v : y.data()) EXPECT_NEAR(v, 0.3, 1e-16);
  const Tensor codes({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  const Tensor u = rescale(codes, state_of({0.7, 0.7}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(u[i], 0.7 * codes[i], 1e-15);
}

TEST(Lsq, HandCasesAndInitializer) {
  LsqWeightQuantizer q{1.0, QuantSpec::signed_bits(2)};
  const Tensor w({1, 1, 1, 2}, std::vector<double>{0.4, -10.0});
  const LsqResult r = lsq_quantize(w, q);
  EXPECT_EQ(r.w_q[0], 0.0);
  EXPECT_EQ(r.w_q[1], -2.0);
  const Tensor w2({1, 1, 1, 2}, std::vector<double>{0.5, -1.5});
  EXPECT_DOUBLE_EQ(LsqWeightQuantizer::initial_step(w2, QuantSpec::signed_bits(4)),
                   2.0 * 1.0 / std::sqrt(7.0));
  EXPECT_DOUBLE_EQ(lsq_grad_scale(10, QuantSpec::signed_bits(4)), 1.0 / std::sqrt(70.0));
  EXPECT_EQ(lsq_positive_levels(QuantSpec::signed_bits(1)), 1.0);
}

TEST(Lsq, StepProjection) {
  LsqWeightQuantizer q{-3.0, QuantSpec::signed_bits(3)};
  q.project();
  EXPECT_EQ(q.step, kStepFloor);
  const Tensor w({1, 1, 1, 1}, std::vector<double>{0.1});
  EXPECT_THROW(lsq_quantize(w, LsqWeightQuantizer{0.0, QuantSpec::signed_bits(3)}), Error);
}

TEST(Lsq, OutputCardinalityBoundedByGrid) {
  std::mt19937_64 rng(8);
  for (int bits : {1, 2, 3, 4}) {
    const Tensor w = random_tensor({3, 3, 4, 4}, rng, -3.0, 3.0);
    const LsqResult r = lsq_quantize(w, LsqWeightQuantizer{0.25, QuantSpec::signed_bits(bits)});
    const std::set<double> levels(r.w_q.data().begin(), r.w_q.data().end());
    EXPECT_LE(levels.size(), std::size_t{1} << bits);
  }
}

}  // namespace
}  // namespace stq
