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

#include "stq/metrics.hpp"

#include <fmt/format.h>

#include <fstream>
#include <json.hpp>

#include "stq/error.hpp"

namespace stq {

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,lr,momentum,loss,top1";
  if (!history.empty()) {
    for (const auto& [layer, _] : history.front().mean_thresholds) out += ",thr_" + layer;
  }
  out += '\n';
  for (const EpochMetrics& m : history) {
    out += fmt::format("{},{},{},{},{}", m.epoch, num(m.lr), num(m.momentum), num(m.loss),
                       num(m.top1));
    for (const auto& [_, value] : m.mean_thresholds) out += "," + num(value);
    out += '\n';
  }
  return out;
}

std::string metrics_jsonl(const std::vector<EpochMetrics>& history) {
  std::string out;
  for (const EpochMetrics& m : history) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["lr"] = m.lr;
    j["momentum"] = m.momentum;
    j["loss"] = m.loss;
    j["top1"] = m.top1;
    nlohmann::ordered_json thr = nlohmann::ordered_json::object();
    for (const auto& [layer, value] : m.mean_thresholds) thr[layer] = value;
    j["mean_threshold"] = thr;
    out += j.dump() + '\n';
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  require(static_cast<bool>(f), ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace stq
