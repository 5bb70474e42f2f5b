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
#include <filesystem>
#include <string>

#include "stq/train.hpp"

namespace stq {

// File-backed run description. Sections and keys (every key optional):
//
//   [run]    preset, out_dir, init, float_epochs, deterministic
//   [data]   train_images, train_labels, test_images, test_labels
//   [model]  st_reduction, single_stage, relu_before_binary
//   [train]  TrainConfig fields applied to both stages
//   [stage1] [stage2]  TrainConfig fields for one stage
//
// TrainConfig fields: epochs, batch_size, lr, lr_min, weight_decay, momentum,
// nesterov, label_smoothing, m_min, act_bits, weight_bits, seed. Defaults
// come from the preset when one is named, otherwise from TrainConfig.
// Unknown sections or keys are rejected.
struct RunConfig {
  std::string preset;
  std::string out_dir = "run";
  std::string init;       // checkpoint to initialize stage 1 from, or empty
  int float_epochs = 0;   // > 0: train a float model first and start stage 1 from it
  bool deterministic = true;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::size_t st_reduction = 1;
  bool single_stage = false;
  bool relu_before_binary = false;
  TrainConfig stage1;
  TrainConfig stage2;

  RunConfig();
  ReferenceArch arch() const;
};

RunConfig parse_run_config(const std::string& ini_text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace stq
