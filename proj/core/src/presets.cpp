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

#include "stq/presets.hpp"

#include <fmt/format.h>

#include "stq/error.hpp"

namespace stq {
namespace {

// Large-scale schedule: 90 epochs, batch 256, cosine to 1e-4, M_min 0.1.
TrainConfig large_scale(int bits, int stage, double lr, double wd, double smoothing) {
  TrainConfig c;
  c.epochs = 90;
  c.batch_size = 256;
  c.lr = lr;
  c.lr_min = 1e-4;
  c.weight_decay = wd;
  c.momentum = 0.9;
  c.nesterov = true;
  c.label_smoothing = smoothing;
  c.m_min = 0.1;
  c.act_bits = bits;
  c.weight_bits = bits;
  c.stage = stage;
  return c;
}

// Desk-scale schedule for the reference CNN on 28x28 digits.
TrainConfig desk(int bits, int stage, double lr) {
  TrainConfig c;
  c.epochs = 8;
  c.batch_size = 32;
  c.lr = lr;
  c.lr_min = 1e-4;
  c.weight_decay = 1e-5;
  c.momentum = 0.9;
  c.nesterov = true;
  c.label_smoothing = 0.1;
  c.m_min = 0.1;
  c.act_bits = bits;
  c.weight_bits = bits;
  c.stage = stage;
  return c;
}

Preset make(std::string name, std::string description, TrainConfig s1, TrainConfig s2) {
  s1.preset = name;
  s2.preset = name;
  return Preset{std::move(name), std::move(description), std::move(s1), std::move(s2)};
}

std::vector<Preset> build_presets() {
  std::vector<Preset> out;
  // Per-bit learning rate and weight decay for the single-network comparison.
  const struct {
    int bits;
    double lr;
    double wd;
  } per_bit[] = {{1, 0.125, 1e-6}, {2, 0.05, 3e-5}, {3, 0.035, 3e-5}, {4, 0.025, 3e-5}};
  for (const auto& row : per_bit) {
    out.push_back(make(fmt::format("appendixA-{}bit", row.bits),
                       fmt::format("ResNet-18 comparison schedule, {}-bit (per-bit table)", row.bits),
                       large_scale(row.bits, 1, row.lr, row.wd, 0.0),
                       large_scale(row.bits, 2, row.lr, row.wd, 0.0)));
  }
  // The summary sentence: one decay for binarization, one for multi-bit.
  out.push_back(make("appendixA-binarization", "ResNet-18 comparison schedule, summary decay 1e-6",
                     large_scale(1, 1, 0.125, 1e-6, 0.0), large_scale(1, 2, 0.125, 1e-6, 0.0)));
  out.push_back(make("appendixA-multibit",
                     "ResNet-18 comparison schedule, 2-bit learning rate, summary decay 3e-5",
                     large_scale(2, 1, 0.05, 3e-5, 0.0), large_scale(2, 2, 0.05, 3e-5, 0.0)));

  out.push_back(make("reactnet-appendixB-1bit",
                     "ReActNet two-step learning rate and decay (SGD substitute, no distillation)",
                     large_scale(1, 1, 0.75e-3, 1e-6, 0.0), large_scale(1, 2, 0.5e-3, 0.0, 0.0)));

  // Two-step ResNet-18 table with label smoothing 0.1.
  const struct {
    int bits;
    double lr1;
    double lr2;
    double wd;
  } two_step[] = {{2, 0.1, 0.05, 4e-6}, {3, 0.035, 0.035, 7e-6}, {4, 0.025, 0.025, 1e-5}};
  for (const auto& row : two_step) {
    const TrainConfig s1 = large_scale(row.bits, 1, row.lr1, row.wd, 0.1);
    const TrainConfig s2 = large_scale(row.bits, 2, row.lr2, row.wd, 0.1);
    const std::string description =
        fmt::format("ResNet-18 two-step schedule, A{0}W32 then A{0}W{0}", row.bits);
    out.push_back(make(fmt::format("resnet-appendixB-{}bit", row.bits), description, s1, s2));
    out.push_back(make(fmt::format("appendixB-{}bit", row.bits), description + " (alias)", s1, s2));
  }

  // desk-float pretrains the network the quantized stages start from; its
  // second config continues float training on the quantized stages' schedule.
  TrainConfig pretrain = desk(0, 1, 0.1);
  pretrain.epochs = 10;
  TrainConfig cont = desk(0, 1, 0.02);
  out.push_back(make("desk-float", "Reference CNN, full precision pretraining and continuation",
                     pretrain, cont));
  for (int bits = 1; bits <= 4; ++bits) {
    out.push_back(make(fmt::format("desk-{}bit", bits),
                       fmt::format("Reference CNN, two-step {}-bit schedule", bits),
                       desk(bits, 1, 0.02), desk(bits, 2, 0.01)));
  }
  return out;
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> table = build_presets();
  return table;
}

const Preset& find_preset(std::string_view name) {
  std::string known;
  for (const Preset& p : presets()) {
    if (p.name == name) return p;
    known += known.empty() ? p.name : ", " + p.name;
  }
  fail(ErrorCode::kConfig, fmt::format("unknown preset '{}'; known presets: {}", name, known));
}

}  // namespace stq
