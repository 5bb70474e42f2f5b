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

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace stq {

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double momentum = 0.0;  // threshold EMA coefficient for the epoch
  double loss = 0.0;
  double top1 = 0.0;      // percent, over the training batches
  std::vector<std::pair<std::string, double>> mean_thresholds;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

// Columns: epoch,lr,momentum,loss,top1 followed by one thr_<layer> column per
// ActiQuan layer (mean threshold). Values use 17 significant digits.
std::string metrics_csv(const std::vector<EpochMetrics>& history);
// One JSON object per epoch with the same fields; thresholds under
// "mean_threshold" keyed by layer name.
std::string metrics_jsonl(const std::vector<EpochMetrics>& history);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace stq
