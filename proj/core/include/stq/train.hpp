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
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stq/checkpoint.hpp"
#include "stq/dataset.hpp"
#include "stq/metrics.hpp"
#include "stq/model.hpp"

namespace stq {

enum class InitMode { kScratch, kCheckpoint };

struct TrainConfig {
  int epochs = 15;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double lr_min = 1e-4;
  double weight_decay = 0.0;
  double momentum = 0.9;
  bool nesterov = true;
  double label_smoothing = 0.0;
  double m_min = 0.1;
  int act_bits = 4;     // 0 = full precision
  int weight_bits = 4;  // used by stage 2 only
  int stage = 1;        // 1 = activations only, 2 = activations and weights
  std::uint64_t seed = 1;
  std::string preset;

  void validate() const;
  // Canonical key=value text; its FNV-1a hash is the checkpoint config digest.
  std::string canonical() const;
  std::uint64_t digest() const;
};

// lr_min + (lr - lr_min) * (1 + cos(pi * e_cur / epochs)) / 2.
double cosine_lr(const TrainConfig& cfg, int e_cur);

// Cross-entropy against (1 - factor) * onehot + factor / K.
double smoothed_cross_entropy(std::span<const double> logits, int label, double factor);

struct BatchLoss {
  double loss = 0.0;      // mean over the batch
  Tensor grad;            // d loss / d logits
  std::size_t correct = 0;
};

BatchLoss smoothed_cross_entropy_batch(const Tensor& logits, std::span<const int> labels,
                                       double factor);

struct SgdOptions {
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 0.0;
};

// g' = g + wd * theta (when decay), v <- mu * v + g',
// theta <- theta - lr * (g' + mu * v) with Nesterov, theta - lr * v without.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
              const SgdOptions& options, bool decay);

class Sgd {
 public:
  explicit Sgd(SgdOptions options = {}) : options_(options) {}

  void step(const std::vector<ParamRef>& params, double lr);
  // Names of the parameters that received weight decay in the last step.
  const std::vector<std::string>& decayed() const { return decayed_; }

  std::map<std::string, Tensor>& velocity() { return velocity_; }
  const std::map<std::string, Tensor>& velocity() const { return velocity_; }
  const SgdOptions& options() const { return options_; }

 private:
  SgdOptions options_;
  std::map<std::string, Tensor> velocity_;
  std::vector<std::string> decayed_;
};

EpochMetrics train_epoch(Model& model, const Dataset& data, const TrainConfig& cfg, int e_cur,
                         Sgd& optimizer, std::mt19937_64& rng);

struct EvalMetrics {
  double loss = 0.0;
  double top1 = 0.0;  // percent
  double top5 = 0.0;  // percent
  std::size_t count = 0;
};

EvalMetrics evaluate(Model& model, const Dataset& data, std::size_t batch_size = 100);

std::vector<LayerSpec> stage_specs(const ReferenceArch& arch, const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochMetrics&, const Model&)>;

struct StageResult {
  Checkpoint checkpoint;
  LoadReport load_report;
};

// Builds the stage's model, optionally initializes it from `init`, trains
// cfg.epochs epochs and captures the result. Stage 1 trains with full
// precision weights; stage 2 enables LSQ weight quantization.
StageResult train_stage(const ReferenceArch& arch, const TrainConfig& cfg, const Dataset& data,
                        const Checkpoint* init, const EpochCallback& on_epoch = {});

struct StagedResult {
  Checkpoint stage1;
  Checkpoint stage2;
  LoadReport stage1_load;
  LoadReport stage2_load;
};

// Stage 1 from `init` (a full precision checkpoint) or scratch, then stage 2
// initialized from the stage-1 checkpoint.
StagedResult staged_train(const ReferenceArch& arch, const TrainConfig& cfg1,
                          const TrainConfig& cfg2, const Dataset& data,
                          const Checkpoint* init = nullptr, const EpochCallback& on_epoch = {});

// Full precision baseline: no ActiQuan, no weight quantization.
StageResult train_float(const ReferenceArch& arch, const TrainConfig& cfg, const Dataset& data,
                        const Checkpoint* init = nullptr, const EpochCallback& on_epoch = {});

}  // namespace stq
