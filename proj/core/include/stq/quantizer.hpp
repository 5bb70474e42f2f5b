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
#include <functional>

#include "stq/tensor.hpp"

namespace stq {

// Thresholds below this are rejected by the multi-bit quantizer and by fusion.
inline constexpr double kThresholdFloor = 1e-8;
// Lower bound for learned weight step sizes after every optimizer step.
inline constexpr double kStepFloor = 1e-8;

// Bit width and signedness of an integer grid [v_lo, v_hi].
class QuantSpec {
 public:
  QuantSpec(int bits, bool is_signed);

  static QuantSpec unsigned_bits(int bits) { return QuantSpec(bits, false); }
  static QuantSpec signed_bits(int bits) { return QuantSpec(bits, true); }

  int bits() const { return bits_; }
  bool is_signed() const { return signed_; }
  int v_lo() const;
  int v_hi() const;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;

 private:
  int bits_;
  bool signed_;
};

// Round half away from zero. The fused integer engine uses the same rule.
double round_half_away(double v);

// Per-output-channel activation threshold, updated by EMA from the ST block.
struct ThresholdState {
  Tensor y_th;  // (1,1,1,C)
  bool initialized = false;

  explicit ThresholdState(std::size_t channels = 0) : y_th(channel_vector(channels)) {}
  std::size_t channels() const { return y_th.shape().c; }
  double mean() const;
  friend bool operator==(const ThresholdState&, const ThresholdState&) = default;
};

struct MomentumSchedule {
  double m_min = 0.1;
  int e_total = 1;
};

// M = m_min * (1 - cos(e_cur / e_total)) + cos(e_cur / e_total), radians.
double momentum(const MomentumSchedule& schedule, int e_cur);

// Y+ = (1 - m) * Y- + m * Y_ins. The first update on an uninitialized state
// copies Y_ins. Returns the coefficient actually applied to Y_ins (1 on the
// first update), which is dY+/dY_ins for the backward pass.
double ema_update(ThresholdState& state, const Tensor& y_th_ins, double m);

// B = 1: sign(x) * 0.5 + 0.5 with sign(0) = +1, for either signedness.
// B > 1: clip(round(x / y_th[c]), v_lo, v_hi).
Tensor quantize_forward(const Tensor& x, const ThresholdState& state, QuantSpec spec);

struct QuantizeGrads {
  Tensor dx;    // same shape as x
  Tensor dy_th; // (1,1,1,C)
};

// Surrogate gradients: sign -> sigmoid(4x), round -> identity, clip passes
// gradient only where v_lo <= x / y_th <= v_hi.
QuantizeGrads quantize_backward(const Tensor& x, const Tensor& upstream,
                                const ThresholdState& state, QuantSpec spec);

// X_int_scale = mean(Y_th) * X_int.
Tensor rescale(const Tensor& x_int, const ThresholdState& state);

struct RescaleGrads {
  Tensor dx_int;
  Tensor dy_th;
};

RescaleGrads rescale_backward(const Tensor& x_int, const Tensor& upstream,
                              const ThresholdState& state);

// Learned-step-size weight quantizer, w_q = clip(round(w / s), v_lo, v_hi) * s.
struct LsqWeightQuantizer {
  double step = 1.0;
  QuantSpec spec = QuantSpec::signed_bits(4);

  // s0 = 2 * mean(|w|) / sqrt(q_pos).
  static double initial_step(const Tensor& w, QuantSpec spec);
  void project() { if (!(step >= kStepFloor)) step = kStepFloor; }
};

// Positive grid extent used for the step initializer and gradient scale;
// max(v_hi, 1) so that the 1-bit signed grid {-1, 0} stays well defined.
double lsq_positive_levels(QuantSpec spec);

// 1 / sqrt(numel * q_pos).
double lsq_grad_scale(std::size_t numel, QuantSpec spec);

struct LsqGrads {
  Tensor dw;
  double dstep = 0.0;  // already multiplied by lsq_grad_scale
};

struct LsqResult {
  Tensor w_q;
  std::function<LsqGrads(const Tensor& upstream)> backward;
};

LsqResult lsq_quantize(const Tensor& w, const LsqWeightQuantizer& q);

namespace debug {
// Scales the quantizer's x-gradient by 0.5 when set. Used only to prove that
// the gradient checks catch a broken backward.
void set_quantizer_backward_fault(bool enabled);
bool quantizer_backward_fault();
}  // namespace debug

}  // namespace stq
