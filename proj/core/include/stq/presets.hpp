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

#include <string>
#include <string_view>
#include <vector>

#include "stq/train.hpp"

namespace stq {

// Named hyperparameter set for a two-step run. Stage 1 quantizes activations
// only; stage 2 quantizes activations and weights. A preset with
// act_bits == 0 describes a full precision run and uses stage1 only.
struct Preset {
  std::string name;
  std::string description;
  TrainConfig stage1;
  TrainConfig stage2;
};

const std::vector<Preset>& presets();

// Throws kConfig listing the known names when `name` is unknown.
const Preset& find_preset(std::string_view name);

}  // namespace stq
