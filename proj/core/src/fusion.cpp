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

#include "stq/fusion.hpp"

#include <fmt/format.h>

#include <cmath>
#include <json.hpp>
#include <limits>

#include "stq/error.hpp"
#include "stq/layers.hpp"

namespace stq {

using json = nlohmann::ordered_json;

BatchNormParams fold_forward(const BatchNormParams& bn, const Tensor& y_th) {
  bn.validate();
  require_same_shape(y_th.shape(), Shape{1, 1, 1, bn.channels()}, "fold_forward threshold");
  BatchNormParams out = bn;
  for (std::size_t c = 0; c < bn.channels(); ++c) {
    if (!(y_th[c] > kThresholdFloor)) {
      fail(ErrorCode::kDegenerateThreshold,
           fmt::format("fold_forward: threshold {} in channel {} is not above {}", y_th[c], c,
                       kThresholdFloor));
    }
    out.gamma[c] = bn.gamma[c] / y_th[c];
    out.beta[c] = bn.beta[c] / y_th[c];
  }
  return out;
}

BatchNormParams fold_backward_scale(double alpha, const BatchNormParams& bn) {
  bn.validate();
  require(alpha > 0.0 && std::isfinite(alpha), ErrorCode::kInvalidArgument,
          fmt::format("fold_backward_scale: alpha must be positive, got {}", alpha));
  BatchNormParams out = bn;
  for (std::size_t c = 0; c < bn.channels(); ++c) {
    out.gamma[c] = bn.gamma[c] * alpha;
    out.running_mean[c] = bn.running_mean[c] / alpha;
  }
  return out;
}

LongTensor int_conv2d(const IntTensor& input, const IntTensor& kernel, ConvGeometry geometry,
                      AccumulatorWidth width, const std::string& layer) {
  const Shape out_shape = conv2d_output_shape(input.shape(), kernel.shape(), geometry);
  const Shape& in = input.shape();
  const std::size_t kh_n = kernel.shape().n;
  const std::size_t kw_n = kernel.shape().h;
  const std::size_t cin = kernel.shape().w;
  const std::size_t cout = kernel.shape().c;
  const auto pad = static_cast<std::ptrdiff_t>(geometry.padding);
  constexpr std::int64_t lo32 = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi32 = std::numeric_limits<std::int32_t>::max();
  const bool narrow = width == AccumulatorWidth::k32;
  LongTensor out(out_shape);
  for (std::size_t n = 0; n < out_shape.n; ++n) {
    for (std::size_t oh = 0; oh < out_shape.h; ++oh) {
      for (std::size_t ow = 0; ow < out_shape.w; ++ow) {
        std::int64_t* orow = out.raw() + out.offset(n, oh, ow, 0);
        for (std::size_t kh = 0; kh < kh_n; ++kh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * geometry.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in.h)) continue;
          for (std::size_t kw = 0; kw < kw_n; ++kw) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * geometry.stride + kw) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in.w)) continue;
            const std::int32_t* irow =
                input.raw() + input.offset(n, static_cast<std::size_t>(ih),
                                           static_cast<std::size_t>(iw), 0);
            const std::int32_t* wtap = kernel.raw() + (kh * kw_n + kw) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::int64_t x = irow[ci];
              const std::int32_t* wrow = wtap + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) {
                std::int64_t& acc = orow[co];
                if (__builtin_add_overflow(acc, x * wrow[co], &acc)) {
                  fail(ErrorCode::kOverflow,
                       fmt::format("{}: 64-bit accumulator overflow in channel {}", layer, co));
                }
                if (narrow && (acc < lo32 || acc > hi32)) {
                  fail(ErrorCode::kOverflow,
                       fmt::format("{}: 32-bit accumulator overflow in channel {} at ({},{},{})",
                                   layer, co, n, oh, ow));
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

IntTensor to_codes(const Tensor& codes) {
  IntTensor out(codes.shape());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<std::int32_t>(codes[i]);
  return out;
}

void check_codes(const IntTensor& x, QuantSpec spec, const std::string& layer) {
  const int lo = spec.bits() == 1 ? 0 : spec.v_lo();
  const int hi = spec.bits() == 1 ? 1 : spec.v_hi();
  for (std::int32_t v : x.data()) {
    if (v < lo || v > hi) {
      fail(ErrorCode::kInvalidArgument,
           fmt::format("{}: input code {} outside [{}, {}]", layer, v, lo, hi));
    }
  }
}

std::int64_t biased(const LongTensor& acc, std::size_t i, const IntTensor& b_int,
                    AccumulatorWidth width, const std::string& layer) {
  const std::size_t c = i % b_int.size();
  const std::int64_t z = acc[i] + b_int[c];
  if (width == AccumulatorWidth::k32 &&
      (z < std::numeric_limits<std::int32_t>::min() ||
       z > std::numeric_limits<std::int32_t>::max())) {
    fail(ErrorCode::kOverflow, fmt::format("{}: bias add overflows int32 in channel {}", layer, c));
  }
  return z;
}

}  // namespace

FusedLayerResult run_fused_layer(const FusedLayer& layer, const IntTensor& x_int,
                                 AccumulatorWidth width) {
  check_codes(x_int, layer.input_spec, layer.name);
  const LongTensor acc = int_conv2d(x_int, layer.kernel, layer.geometry, width, layer.name);
  const std::size_t channels = layer.b_int.size();
  FusedLayerResult r;
  r.values = Tensor(acc.shape());
  if (layer.output != FusedOutput::kDequantize) r.codes = IntTensor(acc.shape());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const std::int64_t z = biased(acc, i, layer.b_int, width, layer.name);
    const double s = layer.s_th[i % channels];
    switch (layer.output) {
      case FusedOutput::kRequantize: {
        const double v = s * static_cast<double>(z);
        const double q = std::clamp(round_half_away(v), static_cast<double>(layer.clip_lo),
                                    static_cast<double>(layer.clip_hi));
        r.values[i] = v;
        r.codes[i] = static_cast<std::int32_t>(q);
        break;
      }
      case FusedOutput::kBinarize:
        r.values[i] = static_cast<double>(z);
        r.codes[i] = (layer.relu || z >= 0) ? 1 : 0;
        break;
      case FusedOutput::kDequantize: {
        const double y = s * static_cast<double>(z);
        r.values[i] = layer.relu ? std::max(0.0, y) : y;
        break;
      }
    }
  }
  return r;
}

FusedTrace run_fused(const std::vector<FusedLayer>& layers, const IntTensor& x_int,
                     AccumulatorWidth width) {
  require(!layers.empty(), ErrorCode::kInvalidArgument, "run_fused: no layers");
  FusedTrace trace;
  IntTensor x = x_int;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const bool last = k + 1 == layers.size();
    require(last == (layers[k].output == FusedOutput::kDequantize), ErrorCode::kInvalidArgument,
            "run_fused: only the last layer dequantizes");
    FusedLayerResult r = run_fused_layer(layers[k], x, width);
    if (last) {
      trace.output = std::move(r.values);
    } else {
      trace.pre_round.push_back(std::move(r.values));
      trace.codes.push_back(r.codes);
      x = std::move(r.codes);
    }
  }
  return trace;
}

Shape FusedModel::quantized_input_shape(std::size_t batch) const {
  return conv2d_output_shape(Shape{batch, input_shape.h, input_shape.w, input_shape.c},
                             stem_kernel.shape(), stem_geometry);
}

IntTensor FusedModel::quantize_input(const Tensor& images) const {
  require(images.shape().h == input_shape.h && images.shape().w == input_shape.w &&
              images.shape().c == input_shape.c,
          ErrorCode::kShapeMismatch,
          "fused: images " + images.shape().str() + " vs model input " + input_shape.str());
  Tensor h = batchnorm_eval(conv2d(images, stem_kernel, stem_geometry), stem_bn);
  if (stem_relu) h = relu(h);
  return to_codes(quantize_forward(h, input_threshold, input_spec));
}

Tensor FusedModel::infer(const Tensor& images, AccumulatorWidth width) const {
  const FusedTrace t = run_fused(layers, quantize_input(images), width);
  return dense(global_avg_pool(t.output), fc_weight, fc_bias);
}

// ------------------------------------------------------------ model walking

namespace {

struct Block {
  const ActiQuan* aq = nullptr;
  const Conv2d* conv = nullptr;
  const BatchNorm2d* bn = nullptr;
  std::size_t bn_index = 0;
  bool relu = false;
};

struct Walk {
  const Conv2d* stem = nullptr;
  const BatchNorm2d* stem_bn = nullptr;
  bool stem_relu = false;
  std::vector<Block> blocks;
  const Linear* fc = nullptr;
};

template <typename T>
const T* as(const Model& m, std::size_t i) {
  return i < m.size() ? dynamic_cast<const T*>(&m.layer(i)) : nullptr;
}

Walk walk(const Model& model) {
  auto unsupported = [&](std::size_t i) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("fusion: unsupported layer sequence at index {} ({}); expected "
                     "conv-bn[-relu] (actiquan-conv-bn[-relu])+ avgpool-fc",
                     i, i < model.size() ? model.layer(i).name() : std::string("end")));
  };
  Walk w;
  std::size_t i = 0;
  w.stem = as<Conv2d>(model, i++);
  w.stem_bn = as<BatchNorm2d>(model, i++);
  if (w.stem == nullptr || w.stem_bn == nullptr) unsupported(0);
  if (as<ReLU>(model, i) != nullptr) {
    w.stem_relu = true;
    ++i;
  }
  while (as<ActiQuan>(model, i) != nullptr) {
    Block b;
    b.aq = as<ActiQuan>(model, i++);
    b.conv = as<Conv2d>(model, i++);
    b.bn_index = i;
    b.bn = as<BatchNorm2d>(model, i++);
    if (b.conv == nullptr || b.bn == nullptr) unsupported(i - 1);
    if (as<ReLU>(model, i) != nullptr) {
      b.relu = true;
      ++i;
    }
    w.blocks.push_back(b);
  }
  if (w.blocks.empty()) unsupported(i);
  if (as<GlobalAvgPool>(model, i++) == nullptr) unsupported(i - 1);
  w.fc = as<Linear>(model, i++);
  if (w.fc == nullptr || i != model.size()) unsupported(i - 1);
  return w;
}

void check_block_state(const Block& b) {
  const std::string& name = b.conv->name();
  if (!b.aq->state().initialized) {
    fail(ErrorCode::kUninitializedState,
         fmt::format("fusion: threshold of {} (input of {}) is uninitialized", b.aq->name(), name));
  }
  if (!b.conv->step_initialized()) {
    fail(ErrorCode::kUninitializedState,
         fmt::format("fusion: {} has no initialized LSQ step (stage-2 checkpoint required)",
                     name));
  }
  const double alpha = b.aq->state().mean();
  require(alpha > kThresholdFloor, ErrorCode::kDegenerateThreshold,
          fmt::format("fusion: mean threshold of {} is {}", b.aq->name(), alpha));
}

// Per-channel BN scale a and shift b of eval-mode BN as y = a * x + b.
ChannelAffine checked_affine(const BatchNorm2d& bn) {
  const ChannelAffine a = batchnorm_affine(bn.bn());
  for (std::size_t c = 0; c < a.scale.size(); ++c) {
    require(a.scale[c] != 0.0 && std::isfinite(a.scale[c]) && std::isfinite(a.shift[c]),
            ErrorCode::kInvalidArgument,
            fmt::format("fusion: {} has a zero or non-finite scale in channel {}", bn.name(), c));
  }
  return a;
}

IntTensor lsq_codes(const Conv2d& conv, const Tensor& channel_sign) {
  const QuantSpec spec = *conv.weight_spec();
  const double s = conv.step();
  const Tensor& w = conv.weight();
  const std::size_t cout = w.shape().c;
  IntTensor k(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double q = std::clamp(round_half_away(w[i] / s), static_cast<double>(spec.v_lo()),
                                static_cast<double>(spec.v_hi()));
    k[i] = static_cast<std::int32_t>(q * channel_sign[i % cout]);
  }
  return k;
}

std::int32_t to_int32(double v, const std::string& what) {
  require(std::isfinite(v) && std::abs(v) <= std::numeric_limits<std::int32_t>::max(),
          ErrorCode::kOverflow, fmt::format("fusion: {} = {} does not fit int32", what, v));
  return static_cast<std::int32_t>(v);
}

}  // namespace

FusedModel compile(const Model& model) {
  const Walk w = walk(model);
  FusedModel f;
  f.specs = model.specs();
  f.input_shape = model.input_shape();
  f.stem_kernel = w.stem->weight();
  f.stem_geometry = w.stem->geometry();
  f.stem_bn = w.stem_bn->bn();
  f.stem_relu = w.stem_relu;
  for (const Block& b : w.blocks) check_block_state(b);
  f.input_threshold = w.blocks.front().aq->state();
  f.input_spec = w.blocks.front().aq->spec();
  f.fc_weight = w.fc->weight();
  f.fc_bias = w.fc->bias();

  for (std::size_t k = 0; k < w.blocks.size(); ++k) {
    const Block& b = w.blocks[k];
    const bool last = k + 1 == w.blocks.size();
    const std::size_t channels = b.bn->bn().channels();
    FusedLayer L;
    L.name = b.conv->name();
    L.geometry = b.conv->geometry();
    L.weight_spec = *b.conv->weight_spec();
    L.input_spec = b.aq->spec();
    L.relu = b.relu;
    L.alpha = b.aq->state().mean();
    const double step = b.conv->step();

    // Backward fusion absorbs the input rescale; forward fusion absorbs the
    // output threshold of a multi-bit successor.
    BatchNormParams folded = fold_backward_scale(L.alpha, b.bn->bn());
    std::optional<QuantSpec> next_spec;
    if (!last) {
      next_spec = w.blocks[k + 1].aq->spec();
      if (next_spec->bits() > 1) folded = fold_forward(folded, w.blocks[k + 1].aq->state().y_th);
    }
    const ChannelAffine unfolded = checked_affine(*b.bn);
    const ChannelAffine affine = batchnorm_affine(folded);

    Tensor sign = channel_vector(channels, 1.0);
    L.s_th = channel_vector(channels);
    L.s_w = channel_vector(channels);
    L.b_int = IntTensor(Shape{1, 1, 1, channels});
    const bool binary = next_spec && next_spec->bits() == 1;
    for (std::size_t c = 0; c < channels; ++c) {
      sign[c] = affine.scale[c] < 0.0 ? -1.0 : 1.0;
      L.s_w[c] = step * std::abs(unfolded.scale[c]);
      L.s_th[c] = step * std::abs(affine.scale[c]);
      require(L.s_th[c] > 0.0 && std::isfinite(L.s_th[c]), ErrorCode::kDegenerateThreshold,
              fmt::format("fusion: {} S_th is not positive in channel {}", L.name, c));
      const double grid_bias = affine.shift[c] / L.s_th[c];
      // Binary outputs compare an integer against -bias, which floor makes exact.
      L.b_int[c] = to_int32(binary ? std::floor(grid_bias) : round_half_away(grid_bias),
                            fmt::format("{} B_int[{}]", L.name, c));
    }
    L.kernel = lsq_codes(*b.conv, sign);

    if (last) {
      L.output = FusedOutput::kDequantize;
    } else if (binary) {
      L.output = FusedOutput::kBinarize;
      L.output_spec = next_spec;
      L.clip_lo = 0;
      L.clip_hi = 1;
    } else {
      L.output = FusedOutput::kRequantize;
      L.output_spec = next_spec;
      L.clip_lo = b.relu ? std::max(next_spec->v_lo(), 0) : next_spec->v_lo();
      L.clip_hi = next_spec->v_hi();
    }
    f.layers.push_back(std::move(L));
  }
  return f;
}

FusedModel compile(const Checkpoint& checkpoint) {
  Model model = restore_model(checkpoint);
  model.set_weight_quantization(true);
  return compile(model);
}

// --------------------------------------------------------------- reference

Model snapped_reference(const Model& model) {
  Model ref = model;
  ref.set_weight_quantization(true);
  const Walk w = walk(ref);
  for (std::size_t k = 0; k < w.blocks.size(); ++k) {
    const Block& b = w.blocks[k];
    check_block_state(b);
    const bool last = k + 1 == w.blocks.size();
    if (!last && w.blocks[k + 1].aq->spec().bits() == 1) continue;
    const ChannelAffine a = checked_affine(*b.bn);
    const double alpha = b.aq->state().mean();
    const double step = b.conv->step();
    auto& bn = dynamic_cast<BatchNorm2d&>(ref.layer(b.bn_index)).bn();
    for (std::size_t c = 0; c < a.scale.size(); ++c) {
      const double unit = step * std::abs(a.scale[c]) * alpha;
      const double snapped = unit * round_half_away(a.shift[c] / unit);
      bn.beta[c] = snapped + a.scale[c] * bn.running_mean[c];
    }
  }
  return ref;
}

ReferenceTrace run_reference(Model& reference, const Tensor& images) {
  const ForwardContext ctx{Mode::kEval, 1.0};
  ReferenceTrace t;
  Tensor h = images;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    Layer& layer = reference.layer(i);
    if (auto* aq = dynamic_cast<ActiQuan*>(&layer)) {
      const QuantSpec spec = aq->spec();
      const Tensor& y = aq->state().y_th;
      Tensor pre(h.shape());
      for (std::size_t j = 0; j < h.size(); ++j) {
        pre[j] = spec.bits() == 1 ? h[j] : h[j] / y[j % y.size()];
      }
      t.activations.push_back(h);
      t.pre_round.push_back(std::move(pre));
      h = layer.forward(h, ctx);
      t.codes.push_back(aq->last_codes());
      continue;
    }
    if (layer.kind() == LayerKind::kAvgPool) t.last_output = h;
    h = layer.forward(h, ctx);
  }
  t.logits = std::move(h);
  return t;
}

// ------------------------------------------------------------- equivalence

bool is_round_tie(double pre_round, bool binary) {
  if (binary) return std::abs(pre_round) < 1e-9;
  const double a = std::abs(pre_round);
  return std::abs(a - std::floor(a) - 0.5) < 1e-9;
}

double EquivalenceReport::tie_fraction() const {
  return activations == 0 ? 0.0 : static_cast<double>(ties) / static_cast<double>(activations);
}

bool EquivalenceReport::passed() const { return hard_mismatches == 0 && tie_fraction() < 1e-6; }

namespace {

// Compares fused codes against reference codes. `tied` marks samples with an
// earlier tie; their mismatches count as propagated rather than hard.
void census(LayerEquivalence& e, const IntTensor& fused, const Tensor& ref, const Tensor& pre,
            bool binary, std::vector<bool>* tied) {
  require_same_shape(fused.shape(), ref.shape(), "equivalence census");
  const std::size_t per_sample = fused.size() / std::max<std::size_t>(fused.shape().n, 1);
  std::vector<bool> new_ties(fused.shape().n, false);
  e.elements += fused.size();
  for (std::size_t i = 0; i < fused.size(); ++i) {
    const auto r = static_cast<std::int64_t>(ref[i]);
    const std::int64_t d = std::abs(fused[i] - r);
    if (d == 0) continue;
    ++e.mismatches;
    e.max_deviation = std::max(e.max_deviation, d);
    const std::size_t n = i / per_sample;
    if (tied != nullptr && (*tied)[n]) {
      ++e.propagated;
    } else if (is_round_tie(pre[i], binary)) {
      ++e.ties;
      new_ties[n] = true;
    } else {
      ++e.hard;
    }
  }
  if (tied != nullptr) {
    for (std::size_t n = 0; n < new_ties.size(); ++n) (*tied)[n] = (*tied)[n] || new_ties[n];
  }
}

}  // namespace

EquivalenceReport equivalence_report(const Model& model, const FusedModel& fused,
                                     const Tensor& images, std::size_t batch_size) {
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "equivalence_report: batch_size >= 1");
  Model reference = snapped_reference(model);
  EquivalenceReport rep;
  const std::size_t layers = fused.layers.size();
  rep.per_layer.resize(layers);
  rep.end_to_end.resize(layers);
  for (std::size_t k = 0; k < layers; ++k) {
    rep.per_layer[k].name = fused.layers[k].name;
    rep.end_to_end[k].name = fused.layers[k].name;
  }
  const std::size_t total = images.shape().n;
  rep.samples = total;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < total; begin += batch_size) {
    const std::size_t count = std::min(batch_size, total - begin);
    const Shape s = images.shape();
    const std::size_t per = s.h * s.w * s.c;
    Tensor batch(Shape{count, s.h, s.w, s.c},
                 std::vector<double>(images.raw() + begin * per,
                                     images.raw() + (begin + count) * per));
    const ReferenceTrace ref = run_reference(reference, batch);
    require(ref.codes.size() == layers, ErrorCode::kInvalidArgument,
            "equivalence_report: fused model does not match the model's quantized layers");

    // Per layer: both executors consume the reference codes.
    for (std::size_t k = 0; k < layers; ++k) {
      const FusedLayerResult r = run_fused_layer(fused.layers[k], to_codes(ref.codes[k]));
      if (k + 1 < layers) {
        const bool binary = fused.layers[k].output == FusedOutput::kBinarize;
        census(rep.per_layer[k], r.codes, ref.codes[k + 1], ref.pre_round[k + 1], binary,
               nullptr);
      }
    }

    // End to end: the fused engine runs on its own codes.
    const IntTensor x0 = fused.quantize_input(batch);
    std::vector<bool> tied(count, false);
    census(rep.end_to_end[0], x0, ref.codes[0], ref.pre_round[0],
           fused.input_spec.bits() == 1, &tied);
    const FusedTrace ft = run_fused(fused.layers, x0);
    for (std::size_t k = 0; k + 1 < layers; ++k) {
      const bool binary = fused.layers[k].output == FusedOutput::kBinarize;
      census(rep.end_to_end[k + 1], ft.codes[k], ref.codes[k + 1], ref.pre_round[k + 1], binary,
             &tied);
    }
    const Tensor logits = dense(global_avg_pool(ft.output), fused.fc_weight, fused.fc_bias);
    const std::size_t out_per = ft.output.size() / count;
    const std::size_t classes = logits.shape().c;
    for (std::size_t n = 0; n < count; ++n) {
      if (tied[n]) continue;
      for (std::size_t j = 0; j < out_per; ++j) {
        const std::size_t i = n * out_per + j;
        rep.max_output_deviation =
            std::max(rep.max_output_deviation, std::abs(ft.output[i] - ref.last_output[i]));
      }
      std::size_t am_f = 0;
      std::size_t am_r = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t i = n * classes + c;
        rep.max_logit_deviation =
            std::max(rep.max_logit_deviation, std::abs(logits[i] - ref.logits[i]));
        if (logits[i] > logits[n * classes + am_f]) am_f = c;
        if (ref.logits[i] > ref.logits[n * classes + am_r]) am_r = c;
      }
      if (am_f != am_r) ++rep.prediction_mismatches;
    }
  }
  for (const LayerEquivalence& e : rep.end_to_end) {
    rep.activations += e.elements;
    rep.hard_mismatches += e.hard;
    rep.ties += e.ties + e.propagated;
    rep.max_int_deviation = std::max(rep.max_int_deviation, e.max_deviation);
  }
  for (const LayerEquivalence& e : rep.per_layer) {
    rep.hard_mismatches += e.hard;
    rep.max_int_deviation = std::max(rep.max_int_deviation, e.max_deviation);
  }
  return rep;
}

// ------------------------------------------------------- scalar output scale

std::vector<ReferenceQuantParams> compile_scalar_scale(const Model& model) {
  const Walk w = walk(model);
  std::vector<ReferenceQuantParams> out;
  for (std::size_t k = 0; k < w.blocks.size(); ++k) {
    const Block& b = w.blocks[k];
    check_block_state(b);
    const bool last = k + 1 == w.blocks.size();
    const ChannelAffine a = checked_affine(*b.bn);
    const std::size_t channels = a.scale.size();
    ReferenceQuantParams p;
    p.name = b.conv->name();
    p.geometry = b.conv->geometry();
    p.s_x_in = b.aq->state().mean();
    p.s_x_out = last ? 1.0 : w.blocks[k + 1].aq->state().mean();
    p.dequantize = last;
    if (!last) {
      const QuantSpec next = w.blocks[k + 1].aq->spec();
      p.min = next.bits() == 1 ? 0 : (b.relu ? std::max(next.v_lo(), 0) : next.v_lo());
      p.max = next.bits() == 1 ? 1 : next.v_hi();
    }
    Tensor sign = channel_vector(channels, 1.0);
    p.s = channel_vector(channels);
    p.b_int = IntTensor(Shape{1, 1, 1, channels});
    for (std::size_t c = 0; c < channels; ++c) {
      sign[c] = a.scale[c] < 0.0 ? -1.0 : 1.0;
      const double s_w = b.conv->step() * std::abs(a.scale[c]);
      p.s[c] = s_w * p.s_x_in / p.s_x_out;
      p.b_int[c] = to_int32(round_half_away(a.shift[c] / (s_w * p.s_x_in)),
                            fmt::format("{} B_int[{}]", p.name, c));
    }
    p.kernel = lsq_codes(*b.conv, sign);
    out.push_back(std::move(p));
  }
  return out;
}

FusedTrace run_scalar_scale(const std::vector<ReferenceQuantParams>& layers, const IntTensor& x_int) {
  require(!layers.empty(), ErrorCode::kInvalidArgument, "run_scalar_scale: no layers");
  FusedTrace trace;
  IntTensor x = x_int;
  for (const ReferenceQuantParams& p : layers) {
    const LongTensor acc = int_conv2d(x, p.kernel, p.geometry, AccumulatorWidth::k32, p.name);
    const std::size_t channels = p.b_int.size();
    Tensor values(acc.shape());
    IntTensor codes(acc.shape());
    for (std::size_t i = 0; i < acc.size(); ++i) {
      const double y = p.s[i % channels] *
                       static_cast<double>(biased(acc, i, p.b_int, AccumulatorWidth::k32, p.name));
      values[i] = y;
      codes[i] = static_cast<std::int32_t>(std::clamp(
          round_half_away(y), static_cast<double>(p.min), static_cast<double>(p.max)));
    }
    if (p.dequantize) {
      trace.output = relu(values);
    } else {
      trace.pre_round.push_back(std::move(values));
      trace.codes.push_back(codes);
      x = std::move(codes);
    }
  }
  return trace;
}

namespace {

template <typename L>
MultiplyCount count_layers(const std::vector<L>& layers, Shape in) {
  MultiplyCount m;
  for (const L& l : layers) {
    const Shape out = conv2d_output_shape(in, l.kernel.shape(), l.geometry);
    const Shape& k = l.kernel.shape();
    m.macs += static_cast<std::uint64_t>(out.numel()) * k.n * k.h * k.w;
    m.requant += out.numel();
    in = out;
  }
  return m;
}

}  // namespace

MultiplyCount count_multiplies(const FusedModel& fused) {
  return count_layers(fused.layers, fused.quantized_input_shape(1));
}

MultiplyCount count_multiplies(const std::vector<ReferenceQuantParams>& layers,
                               const Shape& input_shape) {
  return count_layers(layers, input_shape);
}

// ----------------------------------------------------------- persistence

namespace {

json spec_json(QuantSpec s) { return json{{"bits", s.bits()}, {"signed", s.is_signed()}}; }

QuantSpec spec_from(const json& j) {
  return QuantSpec(j.at("bits").get<int>(), j.at("signed").get<bool>());
}

std::string_view output_name(FusedOutput o) {
  switch (o) {
    case FusedOutput::kRequantize: return "requantize";
    case FusedOutput::kBinarize: return "binarize";
    case FusedOutput::kDequantize: return "dequantize";
  }
  return "requantize";
}

FusedOutput output_from(const std::string& s) {
  if (s == "requantize") return FusedOutput::kRequantize;
  if (s == "binarize") return FusedOutput::kBinarize;
  if (s == "dequantize") return FusedOutput::kDequantize;
  fail(ErrorCode::kFormat, "fused model: unknown output mode '" + s + "'");
}

std::string layer_key(std::size_t k, const char* field) {
  return fmt::format("layers.{:03}.{}", k, field);
}

}  // namespace

Archive to_archive(const FusedModel& f) {
  Archive a;
  a.magic = kFusedMagic;
  a.version = kFusedVersion;
  json layout;
  layout["input"] = {f.input_shape.h, f.input_shape.w, f.input_shape.c};
  layout["stem"] = {{"stride", f.stem_geometry.stride},
                    {"padding", f.stem_geometry.padding},
                    {"relu", f.stem_relu},
                    {"bn_eps", f.stem_bn.eps},
                    {"bn_momentum", f.stem_bn.momentum}};
  layout["input_spec"] = spec_json(f.input_spec);
  layout["input_threshold_initialized"] = f.input_threshold.initialized;
  json layers = json::array();
  for (std::size_t k = 0; k < f.layers.size(); ++k) {
    const FusedLayer& L = f.layers[k];
    json j{{"name", L.name},
           {"stride", L.geometry.stride},
           {"padding", L.geometry.padding},
           {"weight_spec", spec_json(L.weight_spec)},
           {"input_spec", spec_json(L.input_spec)},
           {"output", output_name(L.output)},
           {"clip_lo", L.clip_lo},
           {"clip_hi", L.clip_hi},
           {"relu", L.relu}};
    if (L.output_spec) j["output_spec"] = spec_json(*L.output_spec);
    layers.push_back(std::move(j));
    a.tensors[layer_key(k, "kernel")] = L.kernel;
    a.tensors[layer_key(k, "b_int")] = L.b_int;
    a.tensors[layer_key(k, "s_th")] = L.s_th;
    a.tensors[layer_key(k, "s_w")] = L.s_w;
    a.tensors[layer_key(k, "alpha")] = scalar_tensor(L.alpha);
  }
  layout["layers"] = std::move(layers);
  const std::string text = layout.dump();
  a.meta["fused.layout"] = text;
  a.meta["fused.specs"] = specs_to_json(f.specs);
  a.digest = fnv1a64(text);
  a.tensors["stem.kernel"] = f.stem_kernel;
  a.tensors["stem.bn.gamma"] = f.stem_bn.gamma;
  a.tensors["stem.bn.beta"] = f.stem_bn.beta;
  a.tensors["stem.bn.running_mean"] = f.stem_bn.running_mean;
  a.tensors["stem.bn.running_var"] = f.stem_bn.running_var;
  a.tensors["input.threshold"] = f.input_threshold.y_th;
  a.tensors["fc.weight"] = f.fc_weight;
  a.tensors["fc.bias"] = f.fc_bias;
  return a;
}

FusedModel fused_from_archive(const Archive& a) {
  require(a.magic == kFusedMagic, ErrorCode::kFormat, "fused model: wrong magic");
  const std::string& text = a.meta_at("fused.layout");
  require(fnv1a64(text) == a.digest, ErrorCode::kChecksum, "fused model: layout digest mismatch");
  FusedModel f;
  try {
    const json layout = json::parse(text);
    f.specs = specs_from_json(a.meta_at("fused.specs"));
    const auto& in = layout.at("input");
    f.input_shape = Shape{1, in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(),
                          in.at(2).get<std::size_t>()};
    const json& stem = layout.at("stem");
    f.stem_geometry = ConvGeometry{stem.at("stride").get<std::size_t>(),
                                   stem.at("padding").get<std::size_t>()};
    f.stem_relu = stem.at("relu").get<bool>();
    f.stem_bn.eps = stem.at("bn_eps").get<double>();
    f.stem_bn.momentum = stem.at("bn_momentum").get<double>();
    f.input_spec = spec_from(layout.at("input_spec"));
    f.input_threshold.initialized = layout.at("input_threshold_initialized").get<bool>();
    const json& layers = layout.at("layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const json& j = layers.at(k);
      FusedLayer L;
      L.name = j.at("name").get<std::string>();
      L.geometry = ConvGeometry{j.at("stride").get<std::size_t>(),
                                j.at("padding").get<std::size_t>()};
      L.weight_spec = spec_from(j.at("weight_spec"));
      L.input_spec = spec_from(j.at("input_spec"));
      L.output = output_from(j.at("output").get<std::string>());
      if (j.contains("output_spec")) L.output_spec = spec_from(j.at("output_spec"));
      L.clip_lo = j.at("clip_lo").get<int>();
      L.clip_hi = j.at("clip_hi").get<int>();
      L.relu = j.at("relu").get<bool>();
      L.kernel = a.i32(layer_key(k, "kernel"));
      L.b_int = a.i32(layer_key(k, "b_int"));
      L.s_th = a.f64(layer_key(k, "s_th"));
      L.s_w = a.f64(layer_key(k, "s_w"));
      L.alpha = a.f64(layer_key(k, "alpha"))[0];
      f.layers.push_back(std::move(L));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("fused model: bad layout: ") + e.what());
  }
  f.stem_kernel = a.f64("stem.kernel");
  f.stem_bn.gamma = a.f64("stem.bn.gamma");
  f.stem_bn.beta = a.f64("stem.bn.beta");
  f.stem_bn.running_mean = a.f64("stem.bn.running_mean");
  f.stem_bn.running_var = a.f64("stem.bn.running_var");
  f.input_threshold.y_th = a.f64("input.threshold");
  f.fc_weight = a.f64("fc.weight");
  f.fc_bias = a.f64("fc.bias");
  return f;
}

void save_fused(const std::filesystem::path& path, const FusedModel& fused) {
  write_archive(path, to_archive(fused));
}

FusedModel load_fused(const std::filesystem::path& path) {
  return fused_from_archive(read_archive(path, kFusedMagic, kFusedVersion));
}

}  // namespace stq
