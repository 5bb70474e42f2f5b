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

#include "stq/layers.hpp"

#include <cmath>

namespace stq {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kBatchNorm: return "bn";
    case LayerKind::kReLU: return "relu";
    case LayerKind::kFC: return "fc";
    case LayerKind::kAvgPool: return "avgpool";
    case LayerKind::kActiQuan: return "actiquan";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind k : {LayerKind::kConv, LayerKind::kBatchNorm, LayerKind::kReLU, LayerKind::kFC,
                      LayerKind::kAvgPool, LayerKind::kActiQuan}) {
    if (to_string(k) == name) return k;
  }
  fail(ErrorCode::kFormat, "unknown layer kind '" + std::string(name) + "'");
}

namespace {

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

void accumulate(Tensor& acc, const Tensor& g) {
  require_same_shape(acc.shape(), g.shape(), "gradient accumulation");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, ConvGeometry geometry, std::optional<QuantSpec> weight_spec,
               std::mt19937_64& rng)
    : Layer(std::move(name)),
      weight_(Shape{kernel, kernel, in_channels, out_channels}),
      weight_grad_(weight_.shape()),
      geometry_(geometry),
      weight_spec_(weight_spec),
      step_(scalar_tensor(0.0)),
      step_grad_(scalar_tensor(0.0)) {
  require(kernel >= 1 && in_channels >= 1 && out_channels >= 1, ErrorCode::kInvalidArgument,
          "conv " + this->name() + ": empty kernel");
  // He-uniform keeps post-ReLU activations at unit scale.
  fill_uniform(weight_, std::sqrt(6.0 / static_cast<double>(kernel * kernel * in_channels)), rng);
  if (weight_spec_) init_step_from_weights();
}

Shape Conv2d::output_shape(const Shape& input) const {
  return conv2d_output_shape(input, weight_.shape(), geometry_);
}

void Conv2d::set_step(double s) {
  require(weight_spec_.has_value(), ErrorCode::kInvalidArgument,
          "conv " + name() + " has no weight quantizer");
  step_[0] = s;
  project_step();
}

void Conv2d::init_step_from_weights() {
  step_[0] = LsqWeightQuantizer::initial_step(weight_, *weight_spec_);
}

void Conv2d::project_step() {
  if (!weight_spec_) return;
  LsqWeightQuantizer q{step_[0], *weight_spec_};
  q.project();
  step_[0] = q.step;
}

Tensor Conv2d::effective_weight() const {
  if (!weight_quantization()) return weight_;
  return lsq_quantize(weight_, LsqWeightQuantizer{step_[0], *weight_spec_}).w_q;
}

Tensor Conv2d::forward(const Tensor& x, const ForwardContext& ctx) {
  if (weight_quantization()) {
    LsqResult r = lsq_quantize(weight_, LsqWeightQuantizer{step_[0], *weight_spec_});
    used_weight_ = std::move(r.w_q);
    lsq_backward_ = std::move(r.backward);
  } else {
    used_weight_ = weight_;
    lsq_backward_ = nullptr;
  }
  Tensor y = conv2d(x, used_weight_, geometry_);
  if (ctx.mode == Mode::kTrain) input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  require(!input_.empty(), ErrorCode::kInvalidArgument,
          "conv " + name() + ": backward without a training forward");
  Tensor dw = conv2d_grad_kernel(input_, grad_out, weight_.shape(), geometry_);
  if (lsq_backward_) {
    LsqGrads g = lsq_backward_(dw);
    accumulate(weight_grad_, g.dw);
    step_grad_[0] += g.dstep;
  } else {
    accumulate(weight_grad_, dw);
  }
  return conv2d_grad_input(grad_out, used_weight_, input_.shape(), geometry_);
}

void Conv2d::params(std::vector<ParamRef>& out) {
  out.push_back({name() + ".weight", &weight_, &weight_grad_, true});
  if (weight_spec_) out.push_back({name() + ".lsq_step", &step_, &step_grad_, false});
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, std::size_t channels)
    : Layer(std::move(name)),
      params_(BatchNormParams::identity(channels)),
      dgamma_(channel_vector(channels)),
      dbeta_(channel_vector(channels)) {}

Tensor BatchNorm2d::forward(const Tensor& x, const ForwardContext& ctx) {
  if (ctx.mode == Mode::kTrain) {
    Tensor y = batchnorm_train(x, params_, cache_);
    batchnorm_update_running(params_, cache_);
    cached_train_ = true;
    return y;
  }
  cached_train_ = false;
  return batchnorm_eval(x, params_);
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  require(cached_train_, ErrorCode::kInvalidArgument,
          "bn " + name() + ": backward without a training forward");
  BatchNormGrads g = batchnorm_backward(grad_out, cache_, params_);
  accumulate(dgamma_, g.dgamma);
  accumulate(dbeta_, g.dbeta);
  return std::move(g.dx);
}

void BatchNorm2d::params(std::vector<ParamRef>& out) {
  out.push_back({name() + ".gamma", &params_.gamma, &dgamma_, false});
  out.push_back({name() + ".beta", &params_.beta, &dbeta_, false});
}

void BatchNorm2d::buffers(std::vector<BufferRef>& out) {
  out.push_back({name() + ".running_mean", &params_.running_mean});
  out.push_back({name() + ".running_var", &params_.running_var});
}

// ------------------------------------------------------- ReLU / pooling

Tensor ReLU::forward(const Tensor& x, const ForwardContext& ctx) {
  if (ctx.mode == Mode::kTrain) input_ = x;
  return relu(x);
}

Tensor ReLU::backward(const Tensor& grad_out) { return relu_backward(input_, grad_out); }

Tensor GlobalAvgPool::forward(const Tensor& x, const ForwardContext& /*ctx*/) {
  input_shape_ = x.shape();
  return global_avg_pool(x);
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  return global_avg_pool_backward(grad_out, input_shape_);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, std::size_t in_features, std::size_t out_features,
               std::mt19937_64& rng)
    : Layer(std::move(name)),
      weight_(Shape{1, 1, in_features, out_features}),
      bias_(channel_vector(out_features)),
      weight_grad_(weight_.shape()),
      bias_grad_(bias_.shape()) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  fill_uniform(weight_, bound, rng);
  fill_uniform(bias_, bound, rng);
}

Shape Linear::output_shape(const Shape& input) const {
  require(input.h == 1 && input.w == 1 && input.c == weight_.shape().w,
          ErrorCode::kShapeMismatch, "fc " + name() + ": input " + input.str());
  return Shape{input.n, 1, 1, weight_.shape().c};
}

Tensor Linear::forward(const Tensor& x, const ForwardContext& ctx) {
  output_shape(x.shape());
  if (ctx.mode == Mode::kTrain) input_ = x;
  return dense(x, weight_, bias_);
}

Tensor Linear::backward(const Tensor& grad_out) {
  accumulate(weight_grad_, conv2d_grad_kernel(input_, grad_out, weight_.shape(), ConvGeometry{}));
  accumulate(bias_grad_, channel_sum(grad_out));
  return conv2d_grad_input(grad_out, weight_, input_.shape(), ConvGeometry{});
}

void Linear::params(std::vector<ParamRef>& out) {
  out.push_back({name() + ".weight", &weight_, &weight_grad_, true});
  out.push_back({name() + ".bias", &bias_, &bias_grad_, true});
}

// -------------------------------------------------------------- ActiQuan

ActiQuan::ActiQuan(std::string name, std::size_t channels, QuantSpec spec,
                   std::size_t st_reduction, bool single_stage, std::mt19937_64& rng)
    : Layer(std::move(name)),
      spec_(spec),
      st_(STBlockParams::init(channels, st_reduction, rng, single_stage)),
      state_(channels),
      initialized_flag_(scalar_tensor(0.0)) {
  require(spec.bits() > 1 || !spec.is_signed(), ErrorCode::kInvalidArgument,
          "actiquan " + this->name() + ": signed 1-bit activations are not supported");
  st_grads_.dfc2 = DenseParams{Tensor(st_.fc2.weight.shape()), Tensor(st_.fc2.bias.shape())};
  if (!single_stage) {
    st_grads_.dfc1 = DenseParams{Tensor(st_.fc1.weight.shape()), Tensor(st_.fc1.bias.shape())};
    st_grads_.dgamma = channel_vector(st_.hidden);
    st_grads_.dbeta = channel_vector(st_.hidden);
  }
}

Tensor ActiQuan::forward(const Tensor& x, const ForwardContext& ctx) {
  cached_train_ = ctx.mode == Mode::kTrain;
  if (cached_train_) {
    STForward st = st_forward(x, st_, true);
    applied_momentum_ = ema_update(state_, st.y_th_ins, ctx.threshold_momentum);
    st_cache_ = std::move(st.cache);
    input_ = x;
  }
  x_int_ = quantize_forward(x, state_, spec_);
  return rescale(x_int_, state_);
}

Tensor ActiQuan::backward(const Tensor& grad_out) {
  require(cached_train_, ErrorCode::kInvalidArgument,
          "actiquan " + name() + ": backward without a training forward");
  RescaleGrads r = rescale_backward(x_int_, grad_out, state_);
  QuantizeGrads q = quantize_backward(input_, r.dx_int, state_, spec_);
  // The EMA history is a constant; only the instant threshold carries gradient.
  Tensor dy_ins = scale(add(q.dy_th, r.dy_th), applied_momentum_);
  STGrads st = st_backward(dy_ins, st_cache_, st_);
  accumulate(st_grads_.dfc2.weight, st.dfc2.weight);
  accumulate(st_grads_.dfc2.bias, st.dfc2.bias);
  if (!st_.single_stage) {
    accumulate(st_grads_.dfc1.weight, st.dfc1.weight);
    accumulate(st_grads_.dfc1.bias, st.dfc1.bias);
    accumulate(st_grads_.dgamma, st.dgamma);
    accumulate(st_grads_.dbeta, st.dbeta);
  }
  return add(q.dx, st.dx);
}

void ActiQuan::params(std::vector<ParamRef>& out) {
  const std::string p = name() + ".st.";
  if (!st_.single_stage) {
    out.push_back({p + "fc1.weight", &st_.fc1.weight, &st_grads_.dfc1.weight, true});
    out.push_back({p + "fc1.bias", &st_.fc1.bias, &st_grads_.dfc1.bias, true});
    out.push_back({p + "bn.gamma", &st_.bn.gamma, &st_grads_.dgamma, false});
    out.push_back({p + "bn.beta", &st_.bn.beta, &st_grads_.dbeta, false});
  }
  out.push_back({p + "fc2.weight", &st_.fc2.weight, &st_grads_.dfc2.weight, true});
  out.push_back({p + "fc2.bias", &st_.fc2.bias, &st_grads_.dfc2.bias, true});
}

void ActiQuan::buffers(std::vector<BufferRef>& out) {
  initialized_flag_[0] = state_.initialized ? 1.0 : 0.0;
  out.push_back({name() + ".threshold", &state_.y_th});
  out.push_back({name() + ".threshold_initialized", &initialized_flag_});
  if (!st_.single_stage) {
    out.push_back({name() + ".st.bn.running_mean", &st_.bn.running_mean});
    out.push_back({name() + ".st.bn.running_var", &st_.bn.running_var});
  }
}

void ActiQuan::on_state_loaded() { state_.initialized = initialized_flag_[0] != 0.0; }

}  // namespace stq
