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

#include "stq/model.hpp"

#include <algorithm>

namespace stq {

Model::Model(const Model& other)
    : specs_(other.specs_), input_shape_(other.input_shape_),
      first_nonfinite_(other.first_nonfinite_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

namespace {

bool is_compute(LayerKind k) { return k == LayerKind::kConv || k == LayerKind::kFC; }

}  // namespace

std::pair<std::string, std::string> boundary_compute_layers(const std::vector<LayerSpec>& specs) {
  std::string first;
  std::string last;
  for (const LayerSpec& s : specs) {
    if (!is_compute(s.kind)) continue;
    if (first.empty()) first = s.name;
    last = s.name;
  }
  return {first, last};
}

void validate_specs(const std::vector<LayerSpec>& specs) {
  require(!specs.empty(), ErrorCode::kInvalidArgument, "model: empty layer list");
  std::vector<std::string> names;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    require(!s.name.empty(), ErrorCode::kInvalidArgument, "model: unnamed layer");
    require(std::find(names.begin(), names.end(), s.name) == names.end(),
            ErrorCode::kInvalidArgument, "model: duplicate layer name " + s.name);
    names.push_back(s.name);
    const bool fed_by_quantizer = i > 0 && specs[i - 1].kind == LayerKind::kActiQuan;
    if (s.kind == LayerKind::kActiQuan) {
      require(i + 1 < specs.size() && is_compute(specs[i + 1].kind), ErrorCode::kInvalidArgument,
              "model: actiquan " + s.name + " must sit immediately before a conv or fc");
      QuantSpec(s.bits, s.is_signed);
    }
    if (is_compute(s.kind)) {
      require(s.quantize_activations == fed_by_quantizer, ErrorCode::kInvalidArgument,
              "model: " + s.name + " quantize_activations flag disagrees with its inputs");
      require(s.out_channels >= 1, ErrorCode::kInvalidArgument,
              "model: " + s.name + " has no output channels");
    }
    if (s.kind == LayerKind::kFC) {
      require(!s.quantize_weights, ErrorCode::kInvalidArgument,
              "model: fc weight quantization is not supported");
    }
    if (s.kind == LayerKind::kConv && s.quantize_weights) QuantSpec(s.bits, true);
  }
  const auto [first, last] = boundary_compute_layers(specs);
  for (const LayerSpec& s : specs) {
    if ((s.name == first || s.name == last) && (s.quantize_weights || s.quantize_activations)) {
      fail(ErrorCode::kInvalidArgument,
           "model: first and last compute layers must stay full precision (" + s.name + ")");
    }
  }
}

Model Model::build(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t seed) {
  validate_specs(specs);
  Model m;
  m.specs_ = std::move(specs);
  m.input_shape_ = input_shape;
  std::mt19937_64 rng(seed);
  Shape shape = input_shape;
  shape.n = std::max<std::size_t>(shape.n, 1);
  for (const LayerSpec& s : m.specs_) {
    std::unique_ptr<Layer> layer;
    switch (s.kind) {
      case LayerKind::kConv: {
        std::optional<QuantSpec> wspec;
        if (s.quantize_weights) wspec = QuantSpec::signed_bits(s.bits);
        layer = std::make_unique<Conv2d>(s.name, shape.c, s.out_channels, s.kernel,
                                         ConvGeometry{s.stride, s.padding}, wspec, rng);
        break;
      }
      case LayerKind::kBatchNorm:
        layer = std::make_unique<BatchNorm2d>(s.name, shape.c);
        break;
      case LayerKind::kReLU:
        layer = std::make_unique<ReLU>(s.name);
        break;
      case LayerKind::kAvgPool:
        layer = std::make_unique<GlobalAvgPool>(s.name);
        break;
      case LayerKind::kFC:
        require(shape.h == 1 && shape.w == 1, ErrorCode::kShapeMismatch,
                "model: fc " + s.name + " needs a pooled input, got " + shape.str());
        layer = std::make_unique<Linear>(s.name, shape.c, s.out_channels, rng);
        break;
      case LayerKind::kActiQuan:
        layer = std::make_unique<ActiQuan>(s.name, shape.c, QuantSpec(s.bits, s.is_signed),
                                           s.st_reduction, s.single_stage, rng);
        break;
    }
    shape = layer->output_shape(shape);
    m.layers_.push_back(std::move(layer));
  }
  return m;
}

Tensor Model::forward(const Tensor& x, const ForwardContext& ctx) {
  require(x.shape().h == input_shape_.h && x.shape().w == input_shape_.w &&
              x.shape().c == input_shape_.c,
          ErrorCode::kShapeMismatch,
          "model: input " + x.shape().str() + " vs expected " + input_shape_.str());
  first_nonfinite_.clear();
  Tensor h = x;
  for (auto& l : layers_) {
    h = l->forward(h, ctx);
    if (first_nonfinite_.empty() && !all_finite(h)) first_nonfinite_ = l->name();
  }
  return h;
}

Tensor Model::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  for (auto& l : layers_) l->params(out);
  return out;
}

std::vector<BufferRef> Model::buffers() {
  std::vector<BufferRef> out;
  for (auto& l : layers_) l->buffers(out);
  return out;
}

void Model::zero_grad() {
  for (ParamRef& p : params()) p.grad->fill(0.0);
}

std::map<std::string, Tensor> Model::state_dict() const {
  // params()/buffers() hand out mutable views; nothing is written here.
  auto& self = const_cast<Model&>(*this);
  std::map<std::string, Tensor> out;
  for (const ParamRef& p : self.params()) out.emplace(p.name, *p.value);
  for (const BufferRef& b : self.buffers()) out.emplace(b.name, *b.value);
  return out;
}

void Model::on_state_loaded() {
  for (auto& l : layers_) l->on_state_loaded();
}

void Model::set_weight_quantization(bool enabled) {
  for (auto& l : layers_) {
    if (auto* conv = dynamic_cast<Conv2d*>(l.get())) conv->set_weight_quantization(enabled);
  }
}

void Model::project_steps() {
  for (auto& l : layers_) {
    if (auto* conv = dynamic_cast<Conv2d*>(l.get())) conv->project_step();
  }
}

std::size_t Model::num_classes() const {
  for (auto it = specs_.rbegin(); it != specs_.rend(); ++it) {
    if (it->kind == LayerKind::kFC) return it->out_channels;
  }
  return 0;
}

std::vector<std::pair<std::string, double>> Model::mean_thresholds() const {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& l : layers_) {
    if (const auto* aq = dynamic_cast<const ActiQuan*>(l.get())) {
      out.emplace_back(aq->name(), aq->state().initialized ? aq->state().mean() : 0.0);
    }
  }
  return out;
}

std::vector<LayerSpec> reference_cnn_specs(const ReferenceArch& arch) {
  require(arch.channels.size() == arch.strides.size() && arch.channels.size() >= 2,
          ErrorCode::kInvalidArgument, "reference cnn: need >= 2 conv blocks");
  const bool quant_act = arch.act_bits > 0;
  const bool quant_w = arch.weight_bits > 0;
  require(!quant_w || quant_act, ErrorCode::kInvalidArgument,
          "reference cnn: weight quantization requires activation quantization");
  const bool binary = arch.act_bits == 1;
  std::vector<LayerSpec> specs;
  const std::size_t blocks = arch.channels.size();
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::string idx = std::to_string(b + 1);
    const bool quantized_block = quant_act && b > 0;
    if (quantized_block) {
      LayerSpec aq;
      aq.kind = LayerKind::kActiQuan;
      aq.name = "aq" + idx;
      aq.bits = arch.act_bits;
      aq.is_signed = false;
      aq.st_reduction = arch.st_reduction;
      aq.single_stage = arch.single_stage;
      specs.push_back(aq);
    }
    LayerSpec conv;
    conv.kind = LayerKind::kConv;
    conv.name = "conv" + idx;
    conv.out_channels = arch.channels[b];
    conv.kernel = 3;
    conv.stride = arch.strides[b];
    conv.padding = 1;
    conv.quantize_activations = quantized_block;
    conv.quantize_weights = quantized_block && quant_w;
    conv.bits = conv.quantize_weights ? arch.weight_bits : 0;
    specs.push_back(conv);
    specs.push_back(LayerSpec{.kind = LayerKind::kBatchNorm, .name = "bn" + idx});
    const bool feeds_binarizer = binary && b + 1 < blocks;
    if (!feeds_binarizer || arch.relu_before_binary) {
      specs.push_back(LayerSpec{.kind = LayerKind::kReLU, .name = "relu" + idx});
    }
  }
  specs.push_back(LayerSpec{.kind = LayerKind::kAvgPool, .name = "pool"});
  LayerSpec fc;
  fc.kind = LayerKind::kFC;
  fc.name = "fc";
  fc.out_channels = arch.classes;
  specs.push_back(fc);
  return specs;
}

}  // namespace stq
