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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stq/archive.hpp"
#include "stq/batchnorm.hpp"
#include "stq/checkpoint.hpp"
#include "stq/model.hpp"
#include "stq/ops.hpp"
#include "stq/quantizer.hpp"

namespace stq {

using LongTensor = BasicTensor<std::int64_t>;

// Forward fusion: BN followed by division by the per-channel threshold t,
// expressed as a single BN with gamma / t and beta / t.
BatchNormParams fold_forward(const BatchNormParams& bn, const Tensor& y_th);

// Backward fusion: a BN fed by conv(alpha * x) rewritten as a BN fed by
// conv(x), with gamma * alpha and running mean / alpha.
BatchNormParams fold_backward_scale(double alpha, const BatchNormParams& bn);

enum class AccumulatorWidth { k32, k64 };

// Integer cross-correlation with the float conv2d loop nest. With k32 every
// partial sum must fit in int32; the first overflow raises kOverflow naming
// `layer` and the output channel.
LongTensor int_conv2d(const IntTensor& input, const IntTensor& kernel, ConvGeometry geometry,
                      AccumulatorWidth width, const std::string& layer = "conv");

// How a fused layer turns Y = S_th * (Y_conv_int + B_int) into its output.
enum class FusedOutput {
  kRequantize,  // clip(round(Y), lo, hi): codes for the next quantized layer
  kBinarize,    // (Y_conv_int + B_int >= 0) or 1 everywhere after a ReLU
  kDequantize,  // float Y (ReLU applied when present), feeds the float tail
};

// conv + BN (+ ReLU) + next ActiQuan compiled to integer form.
struct FusedLayer {
  std::string name;
  IntTensor kernel;  // LSQ codes, channel negated where the BN scale is negative
  ConvGeometry geometry;
  IntTensor b_int;   // (1,1,1,C)
  Tensor s_th;       // (1,1,1,C), alpha * S_w / Y_th^o (or alpha * S_w when dequantizing)
  Tensor s_w;        // (1,1,1,C), step * |BN scale|
  double alpha = 0.0;  // mean of the input thresholds
  QuantSpec weight_spec = QuantSpec::signed_bits(4);
  QuantSpec input_spec = QuantSpec::unsigned_bits(4);
  FusedOutput output = FusedOutput::kRequantize;
  std::optional<QuantSpec> output_spec;
  int clip_lo = 0;
  int clip_hi = 0;
  bool relu = false;

  friend bool operator==(const FusedLayer&, const FusedLayer&) = default;
};

struct FusedLayerResult {
  IntTensor codes;  // empty for kDequantize
  Tensor values;    // dequantized output for kDequantize, else the pre-round value
};

FusedLayerResult run_fused_layer(const FusedLayer& layer, const IntTensor& x_int,
                                 AccumulatorWidth width = AccumulatorWidth::k32);

// Float stem, input quantizer, integer layers and float tail.
struct FusedModel {
  std::vector<LayerSpec> specs;  // source architecture
  Shape input_shape;             // (1,H,W,C)
  Tensor stem_kernel;
  ConvGeometry stem_geometry;
  BatchNormParams stem_bn;
  bool stem_relu = false;
  ThresholdState input_threshold;
  QuantSpec input_spec = QuantSpec::unsigned_bits(4);
  std::vector<FusedLayer> layers;
  Tensor fc_weight;
  Tensor fc_bias;

  // Stem output quantized with the first ActiQuan's frozen threshold.
  IntTensor quantize_input(const Tensor& images) const;
  // Shape of the codes fed to the first integer layer.
  Shape quantized_input_shape(std::size_t batch = 1) const;
  Tensor infer(const Tensor& images, AccumulatorWidth width = AccumulatorWidth::k32) const;

  friend bool operator==(const FusedModel&, const FusedModel&) = default;
};

// Integer layers only; the input must be codes of the first layer's input
// spec. Returns the codes after every requantizing layer and the float
// output of the last one.
struct FusedTrace {
  std::vector<IntTensor> codes;
  std::vector<Tensor> pre_round;
  Tensor output;
};
FusedTrace run_fused(const std::vector<FusedLayer>& layers, const IntTensor& x_int,
                     AccumulatorWidth width = AccumulatorWidth::k32);

// Requires the pattern conv-BN[-ReLU] (ActiQuan-conv-BN[-ReLU])+ avgpool-FC
// with LSQ weights and initialized thresholds on every quantized layer.
FusedModel compile(const Model& model);
FusedModel compile(const Checkpoint& checkpoint);

// Float fake-quant reference: a copy of the model whose BN shifts are snapped
// to the accumulator grid of the fused layer (multi-bit and dequantized
// outputs; binarized outputs keep the exact shift). Its eval-mode forward is
// the oracle for the fused engine.
Model snapped_reference(const Model& model);

struct ReferenceTrace {
  std::vector<Tensor> activations;  // float input of every ActiQuan
  std::vector<Tensor> codes;        // its integer codes
  std::vector<Tensor> pre_round;    // x / y_th (multi-bit) or x (binary)
  Tensor last_output;               // float output of the last quantized block
  Tensor logits;
};
ReferenceTrace run_reference(Model& reference, const Tensor& images);

// Mismatch census for one integer layer.
struct LayerEquivalence {
  std::string name;
  std::size_t elements = 0;
  std::size_t mismatches = 0;
  std::size_t ties = 0;        // mismatches at a round-half (or sign-zero) boundary
  std::size_t hard = 0;        // mismatches that are not ties
  std::size_t propagated = 0;  // end-to-end mismatches downstream of an earlier tie
  std::int64_t max_deviation = 0;
};

struct EquivalenceReport {
  std::vector<LayerEquivalence> per_layer;   // both executors fed identical inputs
  std::vector<LayerEquivalence> end_to_end;  // each executor fed its own outputs
  std::size_t samples = 0;
  std::size_t activations = 0;  // integer activations compared end to end
  std::size_t hard_mismatches = 0;
  std::size_t ties = 0;
  std::int64_t max_int_deviation = 0;
  double max_output_deviation = 0.0;  // last float block output, untied samples
  double max_logit_deviation = 0.0;
  std::size_t prediction_mismatches = 0;
  double tie_fraction() const;
  bool passed() const;  // no hard mismatch and ties below 1e-6 of activations
};

// |frac(|v|) - 0.5| < 1e-9 for multi-bit codes, |v| < 1e-9 for binary codes.
bool is_round_tie(double pre_round, bool binary);

EquivalenceReport equivalence_report(const Model& model, const FusedModel& fused,
                                     const Tensor& images, std::size_t batch_size = 100);

// Scalar-scale baseline: the same integer layers with a scalar output activation
// scale S_x^o = mean(Y_th^o), so S = S_w * S_x^i / S_x^o.
struct ReferenceQuantParams {
  std::string name;
  IntTensor kernel;
  ConvGeometry geometry;
  IntTensor b_int;
  Tensor s;  // (1,1,1,C)
  double s_x_in = 0.0;
  double s_x_out = 0.0;
  int min = 0;
  int max = 0;
  bool dequantize = false;
};
std::vector<ReferenceQuantParams> compile_scalar_scale(const Model& model);
FusedTrace run_scalar_scale(const std::vector<ReferenceQuantParams>& layers, const IntTensor& x_int);

// Static multiply count of one inference on one sample: integer MACs of the
// quantized convolutions plus one requantization multiply per output element.
struct MultiplyCount {
  std::uint64_t macs = 0;
  std::uint64_t requant = 0;
  std::uint64_t total() const { return macs + requant; }
};
MultiplyCount count_multiplies(const FusedModel& fused);
// `input_shape` is the shape of the codes fed to the first layer.
MultiplyCount count_multiplies(const std::vector<ReferenceQuantParams>& layers,
                               const Shape& input_shape);

inline constexpr Archive::Magic kFusedMagic{'S', 'T', 'Q', 'F', 'U', 'S', 'E', 'D'};
inline constexpr std::uint32_t kFusedVersion = 1;

Archive to_archive(const FusedModel& fused);
FusedModel fused_from_archive(const Archive& archive);
void save_fused(const std::filesystem::path& path, const FusedModel& fused);
FusedModel load_fused(const std::filesystem::path& path);

}  // namespace stq
