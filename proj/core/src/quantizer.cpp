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

#include "stq/quantizer.hpp"

#include <atomic>
#include <cmath>

#include "stq/ops.hpp"

namespace stq {

QuantSpec::QuantSpec(int bits, bool is_signed) : bits_(bits), signed_(is_signed) {
  require(bits >= 1 && bits <= 16, ErrorCode::kInvalidArgument,
          "quant spec: bits must be in [1, 16], got " + std::to_string(bits));
}

int QuantSpec::v_lo() const { return signed_ ? -(1 << (bits_ - 1)) : 0; }

int QuantSpec::v_hi() const { return signed_ ? (1 << (bits_ - 1)) - 1 : (1 << bits_) - 1; }

double round_half_away(double v) { return std::round(v); }

double ThresholdState::mean() const { return stq::mean(y_th); }

double momentum(const MomentumSchedule& schedule, int e_cur) {
  require(schedule.e_total > 0, ErrorCode::kInvalidArgument,
          "momentum: total epochs must be positive");
  require(schedule.m_min > 0.0 && schedule.m_min <= 1.0, ErrorCode::kInvalidArgument,
          "momentum: m_min must lie in (0, 1]");
  require(e_cur >= 0 && e_cur <= schedule.e_total, ErrorCode::kInvalidArgument,
          "momentum: epoch " + std::to_string(e_cur) + " outside [0, " +
              std::to_string(schedule.e_total) + "]");
  const double c = std::cos(static_cast<double>(e_cur) / static_cast<double>(schedule.e_total));
  return schedule.m_min * (1.0 - c) + c;
}

double ema_update(ThresholdState& state, const Tensor& y_th_ins, double m) {
  require_same_shape(y_th_ins.shape(), state.y_th.shape(), "ema_update");
  require(m >= 0.0 && m <= 1.0, ErrorCode::kInvalidArgument,
          "ema_update: momentum must lie in [0, 1]");
  for (double v : y_th_ins.data()) {
    if (!(v >= 0.0)) {
      fail(ErrorCode::kNegativeThreshold,
           "ema_update: instant threshold " + std::to_string(v) + " is negative or NaN");
    }
  }
  if (!state.initialized) {
    state.y_th = y_th_ins;
    state.initialized = true;
    return 1.0;
  }
  for (std::size_t c = 0; c < state.channels(); ++c) {
    state.y_th[c] = (1.0 - m) * state.y_th[c] + m * y_th_ins[c];
  }
  return m;
}

namespace {

void check_quantizer_inputs(const Tensor& x, const ThresholdState& state, QuantSpec spec) {
  require(state.initialized, ErrorCode::kUninitializedState,
          "quantize: threshold state is uninitialized");
  require(x.shape().c == state.channels(), ErrorCode::kShapeMismatch,
          "quantize: input " + x.shape().str() + " vs threshold " + state.y_th.shape().str());
  // The binarizer maps to {0, 1} whatever the signedness and ignores y_th.
  if (spec.bits() == 1) return;
  for (std::size_t c = 0; c < state.channels(); ++c) {
    if (!(state.y_th[c] >= kThresholdFloor)) {
      fail(ErrorCode::kDegenerateThreshold, "quantize: threshold of channel " + std::to_string(c) +
                                                " is " + std::to_string(state.y_th[c]));
    }
  }
}

std::atomic<bool> g_backward_fault{false};

}  // namespace

Tensor quantize_forward(const Tensor& x, const ThresholdState& state, QuantSpec spec) {
  check_quantizer_inputs(x, state, spec);
  Tensor out(x.shape());
  const std::size_t c = x.shape().c;
  if (spec.bits() == 1) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= 0.0 ? 1.0 : 0.0;
    return out;
  }
  const double lo = spec.v_lo();
  const double hi = spec.v_hi();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = round_half_away(x[i] / state.y_th[i % c]);
    out[i] = q < lo ? lo : (q > hi ? hi : q);
  }
  return out;
}

QuantizeGrads quantize_backward(const Tensor& x, const Tensor& upstream,
                                const ThresholdState& state, QuantSpec spec) {
  check_quantizer_inputs(x, state, spec);
  require_same_shape(x.shape(), upstream.shape(), "quantize_backward");
  const std::size_t c = x.shape().c;
  QuantizeGrads g{Tensor(x.shape()), channel_vector(c)};
  const double fault = g_backward_fault.load() ? 0.5 : 1.0;
  if (spec.bits() == 1) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-4.0 * x[i]));
      g.dx[i] = fault * upstream[i] * 2.0 * s * (1.0 - s);
    }
    return g;
  }
  const double lo = spec.v_lo();
  const double hi = spec.v_hi();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = state.y_th[i % c];
    const double v = x[i] / t;
    if (v < lo || v > hi) continue;
    g.dx[i] = fault * upstream[i] / t;
    g.dy_th[i % c] -= upstream[i] * x[i] / (t * t);
  }
  return g;
}

Tensor rescale(const Tensor& x_int, const ThresholdState& state) {
  require(state.initialized, ErrorCode::kUninitializedState,
          "rescale: threshold state is uninitialized");
  return scale(x_int, state.mean());
}

RescaleGrads rescale_backward(const Tensor& x_int, const Tensor& upstream,
                              const ThresholdState& state) {
  require_same_shape(x_int.shape(), upstream.shape(), "rescale_backward");
  const double m = state.mean();
  // d mean / d y_th[c] = 1 / C for every channel.
  const double shared = dot(x_int, upstream) / static_cast<double>(state.channels());
  return RescaleGrads{scale(upstream, m), channel_vector(state.channels(), shared)};
}

double lsq_positive_levels(QuantSpec spec) {
  return spec.v_hi() >= 1 ? static_cast<double>(spec.v_hi()) : 1.0;
}

double LsqWeightQuantizer::initial_step(const Tensor& w, QuantSpec spec) {
  require(w.size() > 0, ErrorCode::kInvalidArgument, "lsq: empty weight tensor");
  double abs_sum = 0.0;
  for (double v : w.data()) abs_sum += std::abs(v);
  const double s = 2.0 * (abs_sum / static_cast<double>(w.size())) /
                   std::sqrt(lsq_positive_levels(spec));
  return s >= kStepFloor ? s : kStepFloor;
}

double lsq_grad_scale(std::size_t numel, QuantSpec spec) {
  require(numel > 0, ErrorCode::kInvalidArgument, "lsq: empty weight tensor");
  return 1.0 / std::sqrt(static_cast<double>(numel) * lsq_positive_levels(spec));
}

LsqResult lsq_quantize(const Tensor& w, const LsqWeightQuantizer& q) {
  require(q.step > 0.0 && std::isfinite(q.step), ErrorCode::kInvalidArgument,
          "lsq: step size must be positive, got " + std::to_string(q.step));
  const double s = q.step;
  const double lo = q.spec.v_lo();
  const double hi = q.spec.v_hi();
  Tensor w_q(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double r = round_half_away(w[i] / s);
    w_q[i] = (r < lo ? lo : (r > hi ? hi : r)) * s;
  }
  const double gscale = lsq_grad_scale(w.size(), q.spec);
  auto backward = [w, s, lo, hi, gscale](const Tensor& upstream) {
    require_same_shape(w.shape(), upstream.shape(), "lsq backward");
    LsqGrads g{Tensor(w.shape()), 0.0};
    double ds = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double v = w[i] / s;
      if (v <= lo) {
        ds += upstream[i] * lo;
      } else if (v >= hi) {
        ds += upstream[i] * hi;
      } else {
        g.dw[i] = upstream[i];
        ds += upstream[i] * (round_half_away(v) - v);
      }
    }
    g.dstep = ds * gscale;
    return g;
  };
  return LsqResult{std::move(w_q), std::move(backward)};
}

namespace debug {
void set_quantizer_backward_fault(bool enabled) { g_backward_fault.store(enabled); }
bool quantizer_backward_fault() { return g_backward_fault.load(); }
}  // namespace debug

}  // namespace stq
