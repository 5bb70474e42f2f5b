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
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stq/batchnorm.hpp"
#include "stq/ops.hpp"
#include "stq/quantizer.hpp"
#include "stq/st_block.hpp"

namespace stq {

enum class Mode { kTrain, kEval };

struct ForwardContext {
  Mode mode = Mode::kEval;
  // EMA coefficient for ActiQuan thresholds in this epoch.
  double threshold_momentum = 1.0;
};

enum class LayerKind { kConv, kBatchNorm, kReLU, kFC, kAvgPool, kActiQuan };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

// Declarative description of one layer of a sequential model.
struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  std::string name;
  std::size_t out_channels = 0;  // conv, fc
  std::size_t kernel = 3;        // conv
  std::size_t stride = 1;        // conv
  std::size_t padding = 1;       // conv
  bool quantize_weights = false;      // conv: LSQ weights
  bool quantize_activations = false;  // conv, fc: fed by an ActiQuan
  int bits = 0;                       // conv: weight bits; actiquan: activation bits
  bool is_signed = false;             // actiquan
  std::size_t st_reduction = 1;       // actiquan
  bool single_stage = false;          // actiquan

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
  bool decay;
};

// Non-trainable tensors: BN running statistics, thresholds and their flags.
struct BufferRef {
  std::string name;
  Tensor* value;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual LayerKind kind() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) = 0;
  // Accumulates parameter gradients and returns the input gradient.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void params(std::vector<ParamRef>& /*out*/) {}
  virtual void buffers(std::vector<BufferRef>& /*out*/) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
  // Called after buffers were overwritten from a checkpoint.
  virtual void on_state_loaded() {}

 private:
  std::string name_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         ConvGeometry geometry, std::optional<QuantSpec> weight_spec, std::mt19937_64& rng);

  LayerKind kind() const override { return LayerKind::kConv; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(std::vector<ParamRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  const Tensor& weight() const { return weight_; }
  Tensor& weight() { return weight_; }
  ConvGeometry geometry() const { return geometry_; }
  const std::optional<QuantSpec>& weight_spec() const { return weight_spec_; }
  bool step_initialized() const { return weight_spec_.has_value() && step_[0] > 0.0; }
  double step() const { return step_[0]; }
  void set_step(double s);
  void init_step_from_weights();
  void project_step();
  void set_weight_quantization(bool enabled) { quant_enabled_ = enabled; }
  bool weight_quantization() const { return quant_enabled_ && weight_spec_.has_value(); }
  // Weights as used by the forward pass (LSQ-quantized when enabled).
  Tensor effective_weight() const;

 private:
  Tensor weight_;
  Tensor weight_grad_;
  ConvGeometry geometry_;
  std::optional<QuantSpec> weight_spec_;
  Tensor step_;
  Tensor step_grad_;
  bool quant_enabled_ = true;

  Tensor input_;
  std::function<LsqGrads(const Tensor&)> lsq_backward_;
  Tensor used_weight_;
};

class BatchNorm2d final : public Layer {
 public:
  BatchNorm2d(std::string name, std::size_t channels);

  LayerKind kind() const override { return LayerKind::kBatchNorm; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(std::vector<ParamRef>& out) override;
  void buffers(std::vector<BufferRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

  const BatchNormParams& bn() const { return params_; }
  BatchNormParams& bn() { return params_; }

 private:
  BatchNormParams params_;
  Tensor dgamma_;
  Tensor dbeta_;
  BatchNormCache cache_;
  bool cached_train_ = false;
};

class ReLU final : public Layer {
 public:
  using Layer::Layer;
  LayerKind kind() const override { return LayerKind::kReLU; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  Tensor input_;
};

class GlobalAvgPool final : public Layer {
 public:
  using Layer::Layer;
  LayerKind kind() const override { return LayerKind::kAvgPool; }
  Shape output_shape(const Shape& input) const override { return {input.n, 1, 1, input.c}; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  Shape input_shape_;
};

class Linear final : public Layer {
 public:
  Linear(std::string name, std::size_t in_features, std::size_t out_features,
         std::mt19937_64& rng);

  LayerKind kind() const override { return LayerKind::kFC; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(std::vector<ParamRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
  Tensor weight_grad_;
  Tensor bias_grad_;
  Tensor input_;
};

// Activation quantizer fed by a double-stage ST block. Training mode runs the
// ST block, folds its instant threshold into the EMA state and quantizes with
// the updated state; eval mode quantizes with the frozen state only.
class ActiQuan final : public Layer {
 public:
  ActiQuan(std::string name, std::size_t channels, QuantSpec spec, std::size_t st_reduction,
           bool single_stage, std::mt19937_64& rng);

  LayerKind kind() const override { return LayerKind::kActiQuan; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(std::vector<ParamRef>& out) override;
  void buffers(std::vector<BufferRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ActiQuan>(*this); }
  void on_state_loaded() override;

  QuantSpec spec() const { return spec_; }
  const ThresholdState& state() const { return state_; }
  ThresholdState& state() { return state_; }
  const STBlockParams& st_params() const { return st_; }
  STBlockParams& st_params() { return st_; }
  // Integer codes produced by the last forward.
  const Tensor& last_codes() const { return x_int_; }

 private:
  QuantSpec spec_;
  STBlockParams st_;
  ThresholdState state_;
  Tensor initialized_flag_;

  STGrads st_grads_;
  Tensor input_;
  Tensor x_int_;
  STCache st_cache_;
  double applied_momentum_ = 1.0;
  bool cached_train_ = false;
};

}  // namespace stq
