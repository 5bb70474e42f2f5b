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

#include "stq/gradcheck.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "stq/batchnorm.hpp"
#include "stq/error.hpp"
#include "stq/layers.hpp"
#include "stq/model.hpp"
#include "stq/ops.hpp"
#include "stq/quantizer.hpp"
#include "stq/st_block.hpp"
#include "stq/train.hpp"

namespace stq {

Tensor finite_diff_grad_inplace(const std::function<double()>& f, Tensor& target, double eps) {
  require(eps > 0.0, ErrorCode::kInvalidArgument, "finite_diff_grad: eps must be positive");
  Tensor g(target.shape());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double saved = target[i];
    target[i] = saved + eps;
    const double up = f();
    target[i] = saved - eps;
    const double down = f();
    target[i] = saved;
    require(std::isfinite(up) && std::isfinite(down), ErrorCode::kNonFinite,
            fmt::format("finite_diff_grad: non-finite function value at element {}", i));
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps) {
  Tensor probe = x;
  return finite_diff_grad_inplace([&] { return f(probe); }, probe, eps);
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  require_same_shape(analytic.shape(), numeric.shape(), "relative_error");
  double diff = 0.0;
  double na = 0.0;
  double nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nn)), kRelativeErrorFloor);
  return std::sqrt(diff) / denom;
}

namespace {

using Rng = std::mt19937_64;

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::size_t pick(std::size_t lo, std::size_t hi, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Keeps |v - k| >= margin for every listed kink k by resampling.
bool away_from(double v, std::initializer_list<double> kinks, double margin) {
  for (double k : kinks) {
    if (std::abs(v - k) < margin) return false;
  }
  return true;
}

double sigmoid4(double x) { return 1.0 / (1.0 + std::exp(-4.0 * x)); }

// Element surrogate differentiated by the quantizer backward: the binarizer
// becomes 0.5 * sigmoid(4x) + 0.5 and round becomes identity inside the clip.
double quant_surrogate(double x, double t, QuantSpec spec) {
  if (spec.bits() == 1) return 0.5 * sigmoid4(x) + 0.5;
  const double v = x / t;
  return std::clamp(v, static_cast<double>(spec.v_lo()), static_cast<double>(spec.v_hi()));
}

bool quant_margin_ok(const Tensor& x, const Tensor& y_th, QuantSpec spec, double margin) {
  if (spec.bits() == 1) return true;
  const std::size_t c = y_th.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i] / y_th[i % c];
    if (!away_from(v, {double(spec.v_lo()), double(spec.v_hi())}, margin)) return false;
  }
  return true;
}

class Suite {
 public:
  Suite(std::string name, const GradCheckOptions& options) : options_(options) {
    result_.name = std::move(name);
  }
  void record(const Tensor& analytic, const Tensor& numeric) {
    worst_ = std::max(worst_, relative_error(analytic, numeric));
  }
  void point_done() { ++result_.points; }
  GradCheckResult finish() {
    result_.max_relative_error = worst_;
    result_.passed = result_.points >= options_.points && worst_ < options_.tolerance;
    return result_;
  }

 private:
  GradCheckOptions options_;
  GradCheckResult result_;
  double worst_ = 0.0;
};

constexpr int kMaxTries = 1000;

template <typename Sample, typename Check>
GradCheckResult run_points(const std::string& name, const GradCheckOptions& o, Rng& rng,
                           Sample sample, Check check) {
  Suite suite(name, o);
  for (std::size_t p = 0; p < o.points; ++p) {
    int tries = 0;
    auto point = sample(rng);
    while (!point.interior) {
      require(++tries < kMaxTries, ErrorCode::kInvalidArgument,
              "gradcheck " + name + ": could not sample an interior point");
      point = sample(rng);
    }
    check(point, suite);
    suite.point_done();
  }
  return suite.finish();
}

// ---------------------------------------------------------------- quantizer

struct QuantPoint {
  bool interior = true;
  Tensor x;
  Tensor y_th;
  Tensor upstream;
};

GradCheckResult check_quantizer(QuantSpec spec, const GradCheckOptions& o, Rng& rng) {
  const std::string name = fmt::format("quantize_backward/B{}{}", spec.bits(),
                                       spec.is_signed() ? "s" : "u");
  auto sample = [&](Rng& r) {
    QuantPoint p;
    const Shape s{pick(1, 2, r), pick(1, 3, r), pick(1, 3, r), pick(1, 4, r)};
    const double span = spec.bits() == 1 ? 1.5 : 1.2 * (spec.v_hi() - spec.v_lo() + 1);
    p.y_th = uniform({1, 1, 1, s.c}, 0.2, 1.5, r);
    p.x = uniform(s, -span * 0.8, span * 0.8, r);
    p.upstream = uniform(s, -1.0, 1.0, r);
    p.interior = quant_margin_ok(p.x, p.y_th, spec, 10.0 * o.eps / 0.2 + 1e-6);
    return p;
  };
  auto check = [&](QuantPoint& p, Suite& suite) {
    ThresholdState state(p.y_th.size());
    state.y_th = p.y_th;
    state.initialized = true;
    const QuantizeGrads g = quantize_backward(p.x, p.upstream, state, spec);
    auto f = [&] {
      double acc = 0.0;
      for (std::size_t i = 0; i < p.x.size(); ++i) {
        acc += p.upstream[i] * quant_surrogate(p.x[i], p.y_th[i % p.y_th.size()], spec);
      }
      return acc;
    };
    suite.record(g.dx, finite_diff_grad_inplace(f, p.x, o.eps));
    if (spec.bits() > 1) suite.record(g.dy_th, finite_diff_grad_inplace(f, p.y_th, o.eps));
  };
  return run_points(name, o, rng, sample, check);
}

GradCheckResult check_rescale(const GradCheckOptions& o, Rng& rng) {
  auto sample = [&](Rng& r) {
    QuantPoint p;
    const Shape s{pick(1, 3, r), pick(1, 3, r), pick(1, 3, r), pick(1, 5, r)};
    p.x = uniform(s, 0.0, 7.0, r);
    p.y_th = uniform({1, 1, 1, s.c}, 0.1, 2.0, r);
    p.upstream = uniform(s, -1.0, 1.0, r);
    return p;
  };
  auto check = [&](QuantPoint& p, Suite& suite) {
    ThresholdState state(p.y_th.size());
    state.y_th = p.y_th;
    state.initialized = true;
    const RescaleGrads g = rescale_backward(p.x, p.upstream, state);
    auto f = [&] { return mean(p.y_th) * dot(p.x, p.upstream); };
    suite.record(g.dx_int, finite_diff_grad_inplace(f, p.x, o.eps));
    suite.record(g.dy_th, finite_diff_grad_inplace(f, p.y_th, o.eps));
  };
  return run_points("rescale_backward", o, rng, sample, check);
}

// ---------------------------------------------------------------------- LSQ

struct LsqPoint {
  bool interior = true;
  Tensor w;
  double step = 1.0;
  Tensor upstream;
};

// LSQ surrogate at (w, s0): round offsets and the clip region frozen at the
// evaluation point, step entering as g * s + (1 - g) * s0 so its derivative
// carries the gradient scale g while the value is unchanged at s = s0.
double lsq_surrogate(const Tensor& w, double s, const LsqPoint& at, QuantSpec spec,
                     const Tensor& upstream) {
  const double g = lsq_grad_scale(w.size(), spec);
  const double s_eff = g * s + (1.0 - g) * at.step;
  const double lo = spec.v_lo();
  const double hi = spec.v_hi();
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v0 = at.w[i] / at.step;
    double wq;
    if (v0 <= lo) {
      wq = lo * s_eff;
    } else if (v0 >= hi) {
      wq = hi * s_eff;
    } else {
      wq = w[i] + s_eff * (round_half_away(v0) - v0);
    }
    acc += upstream[i] * wq;
  }
  return acc;
}

GradCheckResult check_lsq(QuantSpec spec, const GradCheckOptions& o, Rng& rng) {
  auto sample = [&](Rng& r) {
    LsqPoint p;
    const Shape s{pick(1, 3, r), pick(1, 3, r), pick(1, 3, r), pick(1, 4, r)};
    p.step = std::uniform_real_distribution<double>(0.05, 0.5)(r);
    const double reach = (spec.v_hi() - spec.v_lo() + 2) * p.step;
    p.w = uniform(s, -0.7 * reach, 0.7 * reach, r);
    p.upstream = uniform(s, -1.0, 1.0, r);
    for (double w : p.w.data()) {
      const double v = w / p.step;
      p.interior = p.interior && away_from(v, {double(spec.v_lo()), double(spec.v_hi())},
                                           10.0 * o.eps / p.step + 1e-6);
    }
    return p;
  };
  auto check = [&](LsqPoint& p, Suite& suite) {
    const LsqResult r = lsq_quantize(p.w, LsqWeightQuantizer{p.step, spec});
    const LsqGrads g = r.backward(p.upstream);
    const LsqPoint at = p;
    Tensor w = p.w;
    Tensor step = scalar_tensor(p.step);
    auto f = [&] { return lsq_surrogate(w, step[0], at, spec, p.upstream); };
    suite.record(g.dw, finite_diff_grad_inplace(f, w, o.eps));
    suite.record(scalar_tensor(g.dstep), finite_diff_grad_inplace(f, step, o.eps));
  };
  return run_points(fmt::format("lsq/B{}", spec.bits()), o, rng, sample, check);
}

// ------------------------------------------------------------------ ST block

struct StPoint {
  bool interior = true;
  Tensor x;
  STBlockParams params;
  Tensor upstream;
};

bool st_interior(const Tensor& x, const STBlockParams& params, double margin) {
  if (params.single_stage) return true;
  STBlockParams copy = params;
  const STForward fw = st_forward(x, copy, true);
  for (double v : fw.cache.bn_out.data()) {
    if (std::abs(v) < margin) return false;
  }
  return true;
}

GradCheckResult check_st_block(bool single_stage, const GradCheckOptions& o, Rng& rng) {
  auto sample = [&](Rng& r) {
    StPoint p;
    const std::size_t c = pick(1, 8, r);
    const Shape s{pick(3, 4, r), pick(1, 3, r), pick(1, 3, r), c};
    p.params = STBlockParams::init(c, pick(1, 2, r), r, single_stage);
    if (!single_stage) {
      p.params.bn.gamma = uniform({1, 1, 1, p.params.hidden}, 0.5, 1.5, r);
      p.params.bn.beta = uniform({1, 1, 1, p.params.hidden}, -0.5, 0.5, r);
    }
    p.x = uniform(s, -1.0, 2.0, r);
    p.upstream = uniform({1, 1, 1, c}, -1.0, 1.0, r);
    p.interior = st_interior(p.x, p.params, 1e-3);
    return p;
  };
  auto check = [&](StPoint& p, Suite& suite) {
    STBlockParams work = p.params;
    const STForward fw = st_forward(p.x, work, true);
    const STGrads g = st_backward(p.upstream, fw.cache, p.params);
    STBlockParams probe = p.params;
    Tensor x = p.x;
    auto f = [&] {
      STBlockParams scratch = probe;
      return dot(st_forward(x, scratch, true).y_th_ins, p.upstream);
    };
    suite.record(g.dx, finite_diff_grad_inplace(f, x, o.eps));
    suite.record(g.dfc2.weight, finite_diff_grad_inplace(f, probe.fc2.weight, o.eps));
    suite.record(g.dfc2.bias, finite_diff_grad_inplace(f, probe.fc2.bias, o.eps));
    if (!single_stage) {
      suite.record(g.dfc1.weight, finite_diff_grad_inplace(f, probe.fc1.weight, o.eps));
      suite.record(g.dfc1.bias, finite_diff_grad_inplace(f, probe.fc1.bias, o.eps));
      suite.record(g.dgamma, finite_diff_grad_inplace(f, probe.bn.gamma, o.eps));
      suite.record(g.dbeta, finite_diff_grad_inplace(f, probe.bn.beta, o.eps));
    }
  };
  return run_points(single_stage ? "st_block/single_stage" : "st_block/double_stage", o, rng,
                    sample, check);
}

// ----------------------------------------------------------- ActiQuan layer

struct AqPoint {
  bool interior = true;
  Tensor x;
  Tensor prev_threshold;
  double momentum = 0.5;
  std::uint64_t seed = 0;
  Tensor upstream;
};

GradCheckResult check_actiquan(QuantSpec spec, const GradCheckOptions& o, Rng& rng) {
  const std::size_t channels = 4;
  auto make_layer = [&](const AqPoint& p) {
    Rng init(p.seed);
    ActiQuan layer("aq", channels, spec, 1, false, init);
    layer.state().y_th = p.prev_threshold;
    layer.state().initialized = true;
    return layer;
  };
  auto sample = [&](Rng& r) {
    AqPoint p;
    p.seed = r();
    const double top = spec.bits() == 1 ? 1.0 : 0.6 * spec.v_hi();
    p.x = uniform({pick(2, 3, r), 2, 2, channels}, -0.5 * top, top, r);
    p.prev_threshold = uniform({1, 1, 1, channels}, 0.2, 0.8, r);
    p.momentum = std::uniform_real_distribution<double>(0.2, 0.9)(r);
    p.upstream = uniform(p.x.shape(), -1.0, 1.0, r);
    ActiQuan layer = make_layer(p);
    const STForward fw = st_forward(p.x, layer.st_params(), true);
    for (double v : fw.cache.bn_out.data()) p.interior = p.interior && std::abs(v) >= 1e-3;
    ThresholdState s = layer.state();
    ema_update(s, fw.y_th_ins, p.momentum);
    p.interior = p.interior && quant_margin_ok(p.x, s.y_th, spec, 1e-3);
    return p;
  };
  auto check = [&](AqPoint& p, Suite& suite) {
    ActiQuan layer = make_layer(p);
    const ForwardContext ctx{Mode::kTrain, p.momentum};
    layer.forward(p.x, ctx);
    const Tensor dx = layer.backward(p.upstream);
    const Tensor codes = layer.last_codes();
    const Tensor y_used = layer.state().y_th;
    // Frozen offset between the integer code and the element surrogate.
    Tensor offset(p.x.shape());
    for (std::size_t i = 0; i < p.x.size(); ++i) {
      offset[i] = codes[i] - quant_surrogate(p.x[i], y_used[i % channels], spec);
    }
    const ActiQuan pristine = make_layer(p);
    Tensor x = p.x;
    auto f = [&] {
      ActiQuan scratch = pristine;
      const STForward fw = st_forward(x, scratch.st_params(), true);
      ThresholdState s = scratch.state();
      ema_update(s, fw.y_th_ins, p.momentum);
      const double m = s.mean();
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double q = quant_surrogate(x[i], s.y_th[i % channels], spec) + offset[i];
        acc += p.upstream[i] * m * q;
      }
      return acc;
    };
    suite.record(dx, finite_diff_grad_inplace(f, x, o.eps));
  };
  return run_points(fmt::format("actiquan/B{}", spec.bits()), o, rng, sample, check);
}

// ------------------------------------------------------------ float kernels

struct ConvPoint {
  bool interior = true;
  Tensor x;
  Tensor k;
  ConvGeometry geo;
  Tensor upstream;
};

GradCheckResult check_conv(const GradCheckOptions& o, Rng& rng) {
  auto sample = [&](Rng& r) {
    ConvPoint p;
    const std::size_t ks = pick(1, 3, r);
    p.geo = ConvGeometry{pick(1, 2, r), pick(0, 1, r)};
    p.x = uniform({pick(1, 2, r), pick(ks, 5, r), pick(ks, 5, r), pick(1, 3, r)}, -1, 1, r);
    p.k = uniform({ks, ks, p.x.shape().c, pick(1, 3, r)}, -1, 1, r);
    p.upstream = uniform(conv2d_output_shape(p.x.shape(), p.k.shape(), p.geo), -1, 1, r);
    return p;
  };
  auto check = [&](ConvPoint& p, Suite& suite) {
    const Tensor dx = conv2d_grad_input(p.upstream, p.k, p.x.shape(), p.geo);
    const Tensor dk = conv2d_grad_kernel(p.x, p.upstream, p.k.shape(), p.geo);
    auto f = [&] { return dot(conv2d(p.x, p.k, p.geo), p.upstream); };
    suite.record(dx, finite_diff_grad_inplace(f, p.x, o.eps));
    suite.record(dk, finite_diff_grad_inplace(f, p.k, o.eps));
  };
  return run_points("conv2d", o, rng, sample, check);
}

GradCheckResult check_conv_lsq(const GradCheckOptions& o, Rng& rng) {
  const QuantSpec spec = QuantSpec::signed_bits(3);
  struct P {
    bool interior = true;
    std::uint64_t seed = 0;
    Tensor x;
    Tensor upstream;
  };
  auto make_layer = [&](std::uint64_t seed) {
    Rng init(seed);
    return Conv2d("conv", 2, 3, 3, ConvGeometry{1, 1}, spec, init);
  };
  auto sample = [&](Rng& r) {
    P p;
    p.seed = r();
    p.x = uniform({pick(1, 2, r), 4, 4, 2}, -1, 1, r);
    p.upstream = uniform({p.x.shape().n, 4, 4, 3}, -1, 1, r);
    const Conv2d layer = make_layer(p.seed);
    for (double w : layer.weight().data()) {
      const double v = w / layer.step();
      p.interior = p.interior &&
                   away_from(v, {double(spec.v_lo()), double(spec.v_hi())}, 1e-3);
    }
    return p;
  };
  auto check = [&](P& p, Suite& suite) {
    Conv2d layer = make_layer(p.seed);
    layer.forward(p.x, ForwardContext{Mode::kTrain, 1.0});
    std::vector<ParamRef> refs;
    layer.params(refs);
    for (ParamRef& ref : refs) ref.grad->fill(0.0);
    const Tensor dx = layer.backward(p.upstream);
    const LsqPoint at{true, layer.weight(), layer.step(), {}};
    Tensor w = layer.weight();
    Tensor step = scalar_tensor(layer.step());
    Tensor x = p.x;
    auto f = [&] {
      // Surrogate weights, then the convolution, contracted with upstream.
      Tensor wq(w.shape());
      Tensor unit(w.shape());
      for (std::size_t i = 0; i < w.size(); ++i) {
        unit.fill(0.0);
        unit[i] = 1.0;
        wq[i] = lsq_surrogate(w, step[0], at, spec, unit);
      }
      return dot(conv2d(x, wq, layer.geometry()), p.upstream);
    };
    suite.record(dx, finite_diff_grad_inplace(f, x, o.eps));
    suite.record(*refs[0].grad, finite_diff_grad_inplace(f, w, o.eps));
    suite.record(*refs[1].grad, finite_diff_grad_inplace(f, step, o.eps));
  };
  return run_points("conv_lsq/B3", o, rng, sample, check);
}

GradCheckResult check_dense(const GradCheckOptions& o, Rng& rng) {
  struct P {
    bool interior = true;
    Tensor x, w, b, upstream;
  };
  auto sample = [&](Rng& r) {
    P p;
    const std::size_t n = pick(1, 4, r), in = pick(1, 6, r), out = pick(1, 5, r);
    p.x = uniform({n, 1, 1, in}, -1, 1, r);
    p.w = uniform({1, 1, in, out}, -1, 1, r);
    p.b = uniform({1, 1, 1, out}, -1, 1, r);
    p.upstream = uniform({n, 1, 1, out}, -1, 1, r);
    return p;
  };
  auto check = [&](P& p, Suite& suite) {
    const Tensor dx = conv2d_grad_input(p.upstream, p.w, p.x.shape(), {});
    const Tensor dw = conv2d_grad_kernel(p.x, p.upstream, p.w.shape(), {});
    const Tensor db = channel_sum(p.upstream);
    auto f = [&] { return dot(dense(p.x, p.w, p.b), p.upstream); };
    suite.record(dx, finite_diff_grad_inplace(f, p.x, o.eps));
    suite.record(dw, finite_diff_grad_inplace(f, p.w, o.eps));
    suite.record(db, finite_diff_grad_inplace(f, p.b, o.eps));
  };
  return run_points("dense", o, rng, sample, check);
}

GradCheckResult check_pooling(const GradCheckOptions& o, Rng& rng) {
  struct P {
    bool interior = true;
    Tensor x, up_pool, y, up_mean;
  };
  auto sample = [&](Rng& r) {
    P p;
    p.x = uniform({pick(1, 3, r), pick(1, 4, r), pick(1, 4, r), pick(1, 4, r)}, -1, 1, r);
    p.up_pool = uniform({p.x.shape().n, 1, 1, p.x.shape().c}, -1, 1, r);
    p.y = uniform({pick(1, 5, r), 1, 1, pick(1, 4, r)}, -1, 1, r);
    p.up_mean = uniform({1, 1, 1, p.y.shape().c}, -1, 1, r);
    return p;
  };
  auto check = [&](P& p, Suite& suite) {
    auto f = [&] { return dot(global_avg_pool(p.x), p.up_pool); };
    suite.record(global_avg_pool_backward(p.up_pool, p.x.shape()),
                 finite_diff_grad_inplace(f, p.x, o.eps));
    auto g = [&] { return dot(batch_mean(p.y), p.up_mean); };
    suite.record(batch_mean_backward(p.up_mean, p.y.shape().n),
                 finite_diff_grad_inplace(g, p.y, o.eps));
  };
  return run_points("global_avg_pool+batch_mean", o, rng, sample, check);
}

GradCheckResult check_relu(const GradCheckOptions& o, Rng& rng) {
  struct P {
    bool interior = true;
    Tensor x, upstream;
  };
  auto sample = [&](Rng& r) {
    P p;
    p.x = uniform({pick(1, 2, r), pick(1, 3, r), pick(1, 3, r), pick(1, 4, r)}, -1, 1, r);
    p.upstream = uniform(p.x.shape(), -1, 1, r);
    for (double v : p.x.data()) p.interior = p.interior && std::abs(v) >= 10.0 * o.eps;
    return p;
  };
  auto check = [&](P& p, Suite& suite) {
    auto f = [&] { return dot(relu(p.x), p.upstream); };
    suite.record(relu_backward(p.x, p.upstream), finite_diff_grad_inplace(f, p.x, o.eps));
  };
  return run_points("relu", o, rng, sample, check);
}

GradCheckResult check_batchnorm(const GradCheckOptions& o, Rng& rng) {
  struct P {
    bool interior = true;
    Tensor x, upstream;
    BatchNormParams bn;
  };
  auto sample = [&](Rng& r) {
    P p;
    const std::size_t c = pick(1, 4, r);
    p.x = uniform({pick(2, 3, r), pick(1, 3, r), pick(1, 3, r), c}, -1, 2, r);
    p.bn = BatchNormParams::identity(c);
    p.bn.gamma = uniform({1, 1, 1, c}, 0.5, 1.5, r);
    p.bn.beta = uniform({1, 1, 1, c}, -0.5, 0.5, r);
    p.upstream = uniform(p.x.shape(), -1, 1, r);
    return p;
  };
  auto check = [&](P& p, Suite& suite) {
    BatchNormCache cache;
    batchnorm_train(p.x, p.bn, cache);
    const BatchNormGrads g = batchnorm_backward(p.upstream, cache, p.bn);
    auto f = [&] {
      BatchNormCache scratch;
      return dot(batchnorm_train(p.x, p.bn, scratch), p.upstream);
    };
    suite.record(g.dx, finite_diff_grad_inplace(f, p.x, o.eps));
    suite.record(g.dgamma, finite_diff_grad_inplace(f, p.bn.gamma, o.eps));
    suite.record(g.dbeta, finite_diff_grad_inplace(f, p.bn.beta, o.eps));
  };
  return run_points("batchnorm_train", o, rng, sample, check);
}

GradCheckResult check_loss(const GradCheckOptions& o, Rng& rng) {
  struct P {
    bool interior = true;
    Tensor logits;
    std::vector<int> labels;
    double factor = 0.1;
  };
  auto sample = [&](Rng& r) {
    P p;
    const std::size_t n = pick(1, 4, r), k = pick(2, 10, r);
    p.logits = uniform({n, 1, 1, k}, -3, 3, r);
    for (std::size_t i = 0; i < n; ++i) p.labels.push_back(static_cast<int>(pick(0, k - 1, r)));
    p.factor = std::uniform_real_distribution<double>(0.0, 0.3)(r);
    return p;
  };
  auto check = [&](P& p, Suite& suite) {
    const BatchLoss l = smoothed_cross_entropy_batch(p.logits, p.labels, p.factor);
    auto f = [&] { return smoothed_cross_entropy_batch(p.logits, p.labels, p.factor).loss; };
    suite.record(l.grad, finite_diff_grad_inplace(f, p.logits, o.eps));
  };
  return run_points("smoothed_cross_entropy", o, rng, sample, check);
}

// Full-precision conv-BN-ReLU-conv-BN-ReLU-pool-FC network through Model.
GradCheckResult check_float_net(const GradCheckOptions& o, Rng& rng) {
  ReferenceArch arch;
  arch.input_h = 5;
  arch.input_w = 5;
  arch.input_c = 2;
  arch.classes = 3;
  arch.channels = {3, 4};
  arch.strides = {1, 2};
  struct P {
    bool interior = true;
    std::uint64_t seed = 0;
    Tensor x, upstream;
  };
  auto sample = [&](Rng& r) {
    P p;
    p.seed = r();
    p.x = uniform(arch.input_shape(2), -1, 1, r);
    p.upstream = uniform({2, 1, 1, arch.classes}, -1, 1, r);
    Model m = Model::build(reference_cnn_specs(arch), arch.input_shape(), p.seed);
    // Every ReLU input must sit away from zero.
    Tensor h = p.x;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m.layer(i).kind() == LayerKind::kReLU) {
        for (double v : h.data()) p.interior = p.interior && std::abs(v) >= 1e-3;
      }
      h = m.layer(i).forward(h, ForwardContext{Mode::kTrain, 1.0});
    }
    return p;
  };
  auto check = [&](P& p, Suite& suite) {
    Model model = Model::build(reference_cnn_specs(arch), arch.input_shape(), p.seed);
    const ForwardContext ctx{Mode::kTrain, 1.0};
    const Model pristine = model;
    model.zero_grad();
    model.forward(p.x, ctx);
    const Tensor dx = model.backward(p.upstream);
    Tensor x = p.x;
    Model probe = pristine;
    auto f = [&] {
      Model scratch = probe;
      return dot(scratch.forward(x, ctx), p.upstream);
    };
    suite.record(dx, finite_diff_grad_inplace(f, x, o.eps));
    std::vector<ParamRef> analytic = model.params();
    std::vector<ParamRef> probed = probe.params();
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      suite.record(*analytic[i].grad, finite_diff_grad_inplace(f, *probed[i].value, o.eps));
    }
  };
  return run_points("float_net", o, rng, sample, check);
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options) {
  require(options.points >= 1 && options.eps > 0.0 && options.tolerance > 0.0,
          ErrorCode::kInvalidArgument, "gradcheck: invalid options");
  Rng rng(options.seed);
  std::vector<GradCheckResult> out;
  out.push_back(check_quantizer(QuantSpec::unsigned_bits(1), options, rng));
  for (int bits : {2, 3, 4}) {
    out.push_back(check_quantizer(QuantSpec::unsigned_bits(bits), options, rng));
    out.push_back(check_quantizer(QuantSpec::signed_bits(bits), options, rng));
  }
  out.push_back(check_rescale(options, rng));
  for (int bits : {1, 2, 4}) out.push_back(check_lsq(QuantSpec::signed_bits(bits), options, rng));
  out.push_back(check_st_block(false, options, rng));
  out.push_back(check_st_block(true, options, rng));
  for (int bits : {1, 2, 4}) {
    out.push_back(check_actiquan(QuantSpec::unsigned_bits(bits), options, rng));
  }
  out.push_back(check_conv(options, rng));
  out.push_back(check_conv_lsq(options, rng));
  out.push_back(check_dense(options, rng));
  out.push_back(check_pooling(options, rng));
  out.push_back(check_relu(options, rng));
  out.push_back(check_batchnorm(options, rng));
  out.push_back(check_loss(options, rng));
  out.push_back(check_float_net(options, rng));
  return out;
}

}  // namespace stq
