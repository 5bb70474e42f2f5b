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

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "stq/layers.hpp"

namespace stq {

// Sequential network built from LayerSpecs. Copies are deep.
class Model {
 public:
  Model() = default;
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  // Validates the spec list (ActiQuan placement, full-precision first and
  // last compute layers) and initializes parameters from `seed`.
  static Model build(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t seed);

  Tensor forward(const Tensor& x, const ForwardContext& ctx);
  Tensor backward(const Tensor& grad_out);

  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();
  void zero_grad();

  // All params and buffers by name (deep copy).
  std::map<std::string, Tensor> state_dict() const;
  void on_state_loaded();

  void set_weight_quantization(bool enabled);
  void project_steps();

  const std::vector<LayerSpec>& specs() const { return specs_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const;
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  // Per-ActiQuan mean threshold, in layer order.
  std::vector<std::pair<std::string, double>> mean_thresholds() const;

  // Name of the first layer whose output in the last forward was non-finite,
  // or empty.
  const std::string& first_nonfinite_layer() const { return first_nonfinite_; }

 private:
  std::vector<LayerSpec> specs_;
  Shape input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::string first_nonfinite_;
};

void validate_specs(const std::vector<LayerSpec>& specs);

// Names of the first and last parameterized (conv/fc) layers.
std::pair<std::string, std::string> boundary_compute_layers(const std::vector<LayerSpec>& specs);

// Desk-scale reference CNN: four conv-BN-ReLU blocks, global average pool
// and a classifier. ActiQuan sits before conv2..conv4 when activations are
// quantized; conv1 and the classifier stay full precision.
struct ReferenceArch {
  std::size_t input_h = 28;
  std::size_t input_w = 28;
  std::size_t input_c = 1;
  std::size_t classes = 10;
  std::vector<std::size_t> channels{8, 16, 16, 32};
  std::vector<std::size_t> strides{1, 2, 1, 2};
  int act_bits = 0;     // 0 = full precision activations
  int weight_bits = 0;  // 0 = full precision weights
  std::size_t st_reduction = 1;
  bool single_stage = false;
  // The binarizer maps every non-negative input to 1, so by default the
  // 1-bit configuration feeds BN outputs straight into it.
  bool relu_before_binary = false;

  Shape input_shape(std::size_t batch = 1) const { return {batch, input_h, input_w, input_c}; }
};

std::vector<LayerSpec> reference_cnn_specs(const ReferenceArch& arch);

}  // namespace stq
