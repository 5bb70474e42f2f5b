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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stq/archive.hpp"
#include "stq/metrics.hpp"
#include "stq/model.hpp"

namespace stq {

inline constexpr Archive::Magic kCheckpointMagic{'S', 'T', 'Q', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything needed to rebuild a model and resume or continue training.
struct Checkpoint {
  std::vector<LayerSpec> specs;
  Shape input_shape;
  std::map<std::string, Tensor> tensors;    // params and buffers
  std::map<std::string, Tensor> optimizer;  // SGD velocity per param
  int epoch = 0;
  int stage = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  std::vector<EpochMetrics> history;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint capture(const Model& model);

struct LoadReport {
  // Quantizer tensors absent from the checkpoint that kept (ActiQuan) or
  // received (LSQ step, from the loaded weights) a fresh initialization.
  std::vector<std::string> initialized;
  // Checkpoint tensors the model does not own.
  std::vector<std::string> ignored;
};

// Copies every tensor `model` owns from `ckpt`. Missing quantizer state is
// tolerated and reported; any other missing tensor is an error.
LoadReport load_into(Model& model, const Checkpoint& ckpt);

// Rebuilds the checkpoint's own architecture; every tensor must be present.
Model restore_model(const Checkpoint& ckpt);

std::string specs_to_json(const std::vector<LayerSpec>& specs);
std::vector<LayerSpec> specs_from_json(const std::string& text);

Archive to_archive(const Checkpoint& ckpt);
Checkpoint from_archive(const Archive& archive);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stq
