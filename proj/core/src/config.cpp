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

#include "stq/config.hpp"

#include <fmt/format.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <set>
#include <sstream>

#include "stq/error.hpp"
#include "stq/presets.hpp"

namespace stq {
namespace {

namespace pt = boost::property_tree;

const std::set<std::string> kTrainKeys{"epochs",   "batch_size",      "lr",     "lr_min",
                                       "weight_decay", "momentum",    "nesterov", "label_smoothing",
                                       "m_min",    "act_bits",        "weight_bits", "seed"};
const std::set<std::string> kRunKeys{"preset", "out_dir", "init", "float_epochs", "deterministic"};
const std::set<std::string> kDataKeys{"train_images", "train_labels", "test_images",
                                      "test_labels"};
const std::set<std::string> kModelKeys{"st_reduction", "single_stage", "relu_before_binary"};

template <typename T>
T value(const pt::ptree& section, const std::string& sec, const std::string& key) {
  try {
    return section.get<T>(key);
  } catch (const pt::ptree_error&) {
    fail(ErrorCode::kConfig, fmt::format("config [{}] {}: cannot parse '{}'", sec, key,
                                         section.get<std::string>(key)));
  }
}

void apply_train(TrainConfig& c, const pt::ptree& section, const std::string& sec) {
  for (const auto& [key, node] : section) {
    if (key == "epochs") c.epochs = value<int>(section, sec, key);
    else if (key == "batch_size") c.batch_size = value<std::size_t>(section, sec, key);
    else if (key == "lr") c.lr = value<double>(section, sec, key);
    else if (key == "lr_min") c.lr_min = value<double>(section, sec, key);
    else if (key == "weight_decay") c.weight_decay = value<double>(section, sec, key);
    else if (key == "momentum") c.momentum = value<double>(section, sec, key);
    else if (key == "nesterov") c.nesterov = value<bool>(section, sec, key);
    else if (key == "label_smoothing") c.label_smoothing = value<double>(section, sec, key);
    else if (key == "m_min") c.m_min = value<double>(section, sec, key);
    else if (key == "act_bits") c.act_bits = value<int>(section, sec, key);
    else if (key == "weight_bits") c.weight_bits = value<int>(section, sec, key);
    else if (key == "seed") c.seed = value<std::uint64_t>(section, sec, key);
  }
}

void check_keys(const pt::ptree& section, const std::string& sec,
                const std::set<std::string>& allowed) {
  for (const auto& [key, node] : section) {
    if (allowed.count(key) == 0) {
      fail(ErrorCode::kConfig, fmt::format("config: unknown key '{}' in [{}]", key, sec));
    }
  }
}

}  // namespace

RunConfig::RunConfig() { stage2.stage = 2; }

ReferenceArch RunConfig::arch() const {
  ReferenceArch a;
  a.st_reduction = st_reduction;
  a.single_stage = single_stage;
  a.relu_before_binary = relu_before_binary;
  return a;
}

RunConfig parse_run_config(const std::string& ini_text) {
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
  const std::set<std::string> sections{"run", "data", "model", "train", "stage1", "stage2"};
  for (const auto& [name, section] : tree) {
    if (sections.count(name) == 0) {
      fail(ErrorCode::kConfig, fmt::format("config: unknown section [{}]", name));
    }
    if (section.empty() && !section.data().empty()) {
      fail(ErrorCode::kConfig, fmt::format("config: key '{}' outside a section", name));
    }
  }
  const pt::ptree empty;
  auto section = [&](const char* name) -> const pt::ptree& {
    auto it = tree.find(name);
    return it == tree.not_found() ? empty : it->second;
  };
  check_keys(section("run"), "run", kRunKeys);
  check_keys(section("data"), "data", kDataKeys);
  check_keys(section("model"), "model", kModelKeys);
  for (const char* s : {"train", "stage1", "stage2"}) check_keys(section(s), s, kTrainKeys);

  RunConfig rc;
  const pt::ptree& run = section("run");
  rc.preset = run.get<std::string>("preset", "");
  if (!rc.preset.empty()) {
    const Preset& p = find_preset(rc.preset);
    rc.stage1 = p.stage1;
    rc.stage2 = p.stage2;
  }
  rc.out_dir = run.get<std::string>("out_dir", rc.out_dir);
  rc.init = run.get<std::string>("init", rc.init);
  if (run.count("float_epochs") != 0) rc.float_epochs = value<int>(run, "run", "float_epochs");
  if (run.count("deterministic") != 0) {
    rc.deterministic = value<bool>(run, "run", "deterministic");
  }
  const pt::ptree& data = section("data");
  rc.train_images = data.get<std::string>("train_images", "");
  rc.train_labels = data.get<std::string>("train_labels", "");
  rc.test_images = data.get<std::string>("test_images", "");
  rc.test_labels = data.get<std::string>("test_labels", "");
  const pt::ptree& model = section("model");
  if (model.count("st_reduction") != 0) {
    rc.st_reduction = value<std::size_t>(model, "model", "st_reduction");
  }
  if (model.count("single_stage") != 0) {
    rc.single_stage = value<bool>(model, "model", "single_stage");
  }
  if (model.count("relu_before_binary") != 0) {
    rc.relu_before_binary = value<bool>(model, "model", "relu_before_binary");
  }
  apply_train(rc.stage1, section("train"), "train");
  apply_train(rc.stage2, section("train"), "train");
  apply_train(rc.stage1, section("stage1"), "stage1");
  apply_train(rc.stage2, section("stage2"), "stage2");
  rc.stage1.stage = 1;
  rc.stage2.stage = 2;
  require(rc.float_epochs >= 0, ErrorCode::kConfig, "config: float_epochs must be >= 0");
  require(rc.st_reduction >= 1, ErrorCode::kConfig, "config: st_reduction must be >= 1");
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

}  // namespace stq
