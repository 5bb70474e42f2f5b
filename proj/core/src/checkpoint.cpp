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

#include "stq/checkpoint.hpp"

#include <json.hpp>

#include <sstream>

namespace stq {

Checkpoint capture(const Model& model) {
  Checkpoint c;
  c.specs = model.specs();
  c.input_shape = model.input_shape();
  c.tensors = model.state_dict();
  return c;
}

namespace {

bool is_quantizer_state(const Layer& layer, const std::string& name) {
  if (layer.kind() == LayerKind::kActiQuan) return true;
  const std::string suffix = ".lsq_step";
  return name.size() > suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  require_same_shape(src.shape(), dst.shape(), ("checkpoint tensor " + name).c_str());
  dst = src;
}

}  // namespace

LoadReport load_into(Model& model, const Checkpoint& ckpt) {
  LoadReport report;
  std::map<std::string, bool> used;
  for (const auto& [name, _] : ckpt.tensors) used[name] = false;

  std::vector<Conv2d*> fresh_steps;
  for (std::size_t i = 0; i < model.size(); ++i) {
    Layer& layer = model.layer(i);
    std::vector<ParamRef> params;
    std::vector<BufferRef> buffers;
    layer.params(params);
    layer.buffers(buffers);
    std::vector<std::pair<std::string, Tensor*>> owned;
    for (auto& p : params) owned.emplace_back(p.name, p.value);
    for (auto& b : buffers) owned.emplace_back(b.name, b.value);
    for (auto& [name, dst] : owned) {
      auto it = ckpt.tensors.find(name);
      if (it == ckpt.tensors.end()) {
        if (!is_quantizer_state(layer, name)) {
          fail(ErrorCode::kMissingTensor, "checkpoint: missing tensor " + name);
        }
        report.initialized.push_back(name);
        if (auto* conv = dynamic_cast<Conv2d*>(&layer); conv && name == conv->name() + ".lsq_step") {
          fresh_steps.push_back(conv);
        }
        continue;
      }
      copy_into(*dst, it->second, name);
      used[name] = true;
    }
  }
  model.on_state_loaded();
  for (Conv2d* conv : fresh_steps) conv->init_step_from_weights();
  for (const auto& [name, was_used] : used) {
    if (!was_used) report.ignored.push_back(name);
  }
  return report;
}

Model restore_model(const Checkpoint& ckpt) {
  Model m = Model::build(ckpt.specs, ckpt.input_shape, ckpt.seed);
  LoadReport r = load_into(m, ckpt);
  require(r.initialized.empty(), ErrorCode::kMissingTensor,
          "checkpoint: missing tensor " + (r.initialized.empty() ? "" : r.initialized.front()));
  return m;
}

std::string specs_to_json(const std::vector<LayerSpec>& specs) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const LayerSpec& s : specs) {
    nlohmann::ordered_json j;
    j["kind"] = std::string(to_string(s.kind));
    j["name"] = s.name;
    j["out_channels"] = s.out_channels;
    j["kernel"] = s.kernel;
    j["stride"] = s.stride;
    j["padding"] = s.padding;
    j["quantize_weights"] = s.quantize_weights;
    j["quantize_activations"] = s.quantize_activations;
    j["bits"] = s.bits;
    j["is_signed"] = s.is_signed;
    j["st_reduction"] = s.st_reduction;
    j["single_stage"] = s.single_stage;
    arr.push_back(j);
  }
  return arr.dump();
}

std::vector<LayerSpec> specs_from_json(const std::string& text) {
  std::vector<LayerSpec> specs;
  try {
    for (const auto& j : nlohmann::json::parse(text)) {
      LayerSpec s;
      s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
      s.name = j.at("name").get<std::string>();
      s.out_channels = j.at("out_channels").get<std::size_t>();
      s.kernel = j.at("kernel").get<std::size_t>();
      s.stride = j.at("stride").get<std::size_t>();
      s.padding = j.at("padding").get<std::size_t>();
      s.quantize_weights = j.at("quantize_weights").get<bool>();
      s.quantize_activations = j.at("quantize_activations").get<bool>();
      s.bits = j.at("bits").get<int>();
      s.is_signed = j.at("is_signed").get<bool>();
      s.st_reduction = j.at("st_reduction").get<std::size_t>();
      s.single_stage = j.at("single_stage").get<bool>();
      specs.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("layer specs: ") + e.what());
  }
  return specs;
}

namespace {

std::string join_names(const std::vector<std::pair<std::string, double>>& items) {
  std::string out;
  for (const auto& [name, _] : items) {
    if (!out.empty()) out += ',';
    out += name;
  }
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

constexpr std::size_t kHistoryFixedColumns = 5;

}  // namespace

Archive to_archive(const Checkpoint& ckpt) {
  Archive a;
  a.magic = kCheckpointMagic;
  a.version = kCheckpointVersion;
  a.digest = ckpt.config_digest;
  a.meta["model.specs"] = specs_to_json(ckpt.specs);
  a.meta["model.input"] = std::to_string(ckpt.input_shape.h) + "," +
                          std::to_string(ckpt.input_shape.w) + "," +
                          std::to_string(ckpt.input_shape.c);
  a.meta["train.epoch"] = std::to_string(ckpt.epoch);
  a.meta["train.stage"] = std::to_string(ckpt.stage);
  a.meta["train.seed"] = std::to_string(ckpt.seed);
  for (const auto& [name, t] : ckpt.tensors) a.tensors.emplace("model." + name, t);
  for (const auto& [name, t] : ckpt.optimizer) a.tensors.emplace("opt." + name, t);
  if (!ckpt.history.empty()) {
    const auto& thr = ckpt.history.front().mean_thresholds;
    a.meta["metrics.thresholds"] = join_names(thr);
    const std::size_t cols = kHistoryFixedColumns + thr.size();
    Tensor h(Shape{ckpt.history.size(), 1, 1, cols});
    for (std::size_t e = 0; e < ckpt.history.size(); ++e) {
      const EpochMetrics& m = ckpt.history[e];
      require(m.mean_thresholds.size() == thr.size(), ErrorCode::kInvalidArgument,
              "checkpoint: inconsistent metrics history");
      double* row = h.raw() + e * cols;
      row[0] = m.epoch;
      row[1] = m.lr;
      row[2] = m.momentum;
      row[3] = m.loss;
      row[4] = m.top1;
      for (std::size_t k = 0; k < thr.size(); ++k) row[kHistoryFixedColumns + k] =
          m.mean_thresholds[k].second;
    }
    a.tensors.emplace("metrics.history", std::move(h));
  }
  return a;
}

Checkpoint from_archive(const Archive& a) {
  Checkpoint c;
  c.config_digest = a.digest;
  c.specs = specs_from_json(a.meta_at("model.specs"));
  {
    std::vector<std::string> dims = split_names(a.meta_at("model.input"));
    require(dims.size() == 3, ErrorCode::kFormat, "checkpoint: bad model.input");
    c.input_shape = Shape{1, std::stoul(dims[0]), std::stoul(dims[1]), std::stoul(dims[2])};
  }
  c.epoch = std::stoi(a.meta_at("train.epoch"));
  c.stage = std::stoi(a.meta_at("train.stage"));
  c.seed = std::stoull(a.meta_at("train.seed"));
  for (const auto& [name, entry] : a.tensors) {
    if (name.rfind("model.", 0) == 0) {
      c.tensors.emplace(name.substr(6), a.f64(name));
    } else if (name.rfind("opt.", 0) == 0) {
      c.optimizer.emplace(name.substr(4), a.f64(name));
    }
  }
  if (a.has("metrics.history")) {
    const Tensor& h = a.f64("metrics.history");
    const std::vector<std::string> thr = split_names(a.meta_at("metrics.thresholds"));
    const std::size_t cols = kHistoryFixedColumns + thr.size();
    require(h.shape().c == cols, ErrorCode::kFormat, "checkpoint: metrics history width");
    for (std::size_t e = 0; e < h.shape().n; ++e) {
      const double* row = h.raw() + e * cols;
      EpochMetrics m;
      m.epoch = static_cast<int>(row[0]);
      m.lr = row[1];
      m.momentum = row[2];
      m.loss = row[3];
      m.top1 = row[4];
      for (std::size_t k = 0; k < thr.size(); ++k) {
        m.mean_thresholds.emplace_back(thr[k], row[kHistoryFixedColumns + k]);
      }
      c.history.push_back(std::move(m));
    }
  }
  validate_specs(c.specs);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_archive(path, to_archive(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return from_archive(read_archive(path, kCheckpointMagic, kCheckpointVersion));
}

}  // namespace stq
