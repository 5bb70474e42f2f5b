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

#include "stq/train.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "stq/archive.hpp"
#include "stq/quantizer.hpp"

namespace stq {

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::kConfig, "train: epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::kConfig, "train: batch_size must be >= 1");
  require(lr_min <= lr, ErrorCode::kConfig, "train: lr_min must not exceed lr");
  require(lr >= 0.0 && lr_min >= 0.0, ErrorCode::kConfig, "train: negative learning rate");
  require(weight_decay >= 0.0, ErrorCode::kConfig, "train: negative weight decay");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kConfig, "train: momentum outside [0,1)");
  require(label_smoothing >= 0.0 && label_smoothing < 1.0, ErrorCode::kConfig,
          "train: label smoothing outside [0,1)");
  require(m_min > 0.0 && m_min <= 1.0, ErrorCode::kConfig, "train: m_min outside (0,1]");
  require(stage == 1 || stage == 2, ErrorCode::kConfig, "train: stage must be 1 or 2");
  require(act_bits >= 0 && act_bits <= 16, ErrorCode::kConfig, "train: act_bits outside [0,16]");
  require(weight_bits >= 0 && weight_bits <= 16, ErrorCode::kConfig,
          "train: weight_bits outside [0,16]");
  require(stage == 1 || (act_bits > 0 && weight_bits > 0), ErrorCode::kConfig,
          "train: stage 2 quantizes activations and weights; both bit widths must be set");
}

std::string TrainConfig::canonical() const {
  return fmt::format(
      "epochs={}\nbatch_size={}\nlr={:.17g}\nlr_min={:.17g}\nweight_decay={:.17g}\n"
      "momentum={:.17g}\nnesterov={}\nlabel_smoothing={:.17g}\nm_min={:.17g}\nact_bits={}\n"
      "weight_bits={}\nstage={}\nseed={}\npreset={}\n",
      epochs, batch_size, lr, lr_min, weight_decay, momentum, nesterov, label_smoothing, m_min,
      act_bits, weight_bits, stage, seed, preset);
}

std::uint64_t TrainConfig::digest() const { return fnv1a64(canonical()); }

double cosine_lr(const TrainConfig& cfg, int e_cur) {
  require(e_cur >= 0 && e_cur <= cfg.epochs, ErrorCode::kInvalidArgument,
          "cosine_lr: epoch outside [0, epochs]");
  const double ratio = static_cast<double>(e_cur) / static_cast<double>(cfg.epochs);
  return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * ratio));
}

double smoothed_cross_entropy(std::span<const double> logits, int label, double factor) {
  const std::size_t k = logits.size();
  require(k >= 2, ErrorCode::kInvalidArgument, "cross entropy: need at least 2 classes");
  require(factor >= 0.0 && factor < 1.0, ErrorCode::kInvalidArgument,
          "cross entropy: smoothing factor outside [0,1)");
  require(label >= 0 && static_cast<std::size_t>(label) < k, ErrorCode::kInvalidArgument,
          "cross entropy: label out of range");
  double mx = logits[0];
  for (double v : logits) {
    require(std::isfinite(v), ErrorCode::kNonFinite, "cross entropy: non-finite logit");
    mx = std::max(mx, v);
  }
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  double loss = 0.0;
  const double off = factor / static_cast<double>(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double target = off + (static_cast<int>(i) == label ? 1.0 - factor : 0.0);
    loss -= target * (logits[i] - log_z);
  }
  return loss;
}

BatchLoss smoothed_cross_entropy_batch(const Tensor& logits, std::span<const int> labels,
                                       double factor) {
  const Shape& s = logits.shape();
  require(s.h == 1 && s.w == 1 && s.n == labels.size(), ErrorCode::kShapeMismatch,
          "cross entropy: logits " + s.str() + " vs " + std::to_string(labels.size()) +
              " labels");
  require(s.n >= 1, ErrorCode::kInvalidArgument, "cross entropy: empty batch");
  const std::size_t k = s.c;
  BatchLoss out{0.0, Tensor(s), 0};
  const double inv_n = 1.0 / static_cast<double>(s.n);
  const double off = factor / static_cast<double>(k);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::span<const double> row(logits.raw() + n * k, k);
    out.loss += smoothed_cross_entropy(row, labels[n], factor) * inv_n;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    std::size_t argmax = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const double p = std::exp(row[i] - mx) / z;
      const double target = off + (static_cast<int>(i) == labels[n] ? 1.0 - factor : 0.0);
      out.grad[n * k + i] = (p - target) * inv_n;
      if (row[i] > row[argmax]) argmax = i;
    }
    if (static_cast<int>(argmax) == labels[n]) ++out.correct;
  }
  return out;
}

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
              const SgdOptions& options, bool decay) {
  require_same_shape(param.shape(), grad.shape(), "sgd_step grad");
  if (velocity.shape() != param.shape()) velocity = Tensor(param.shape());
  const double wd = decay ? options.weight_decay : 0.0;
  const double mu = options.momentum;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + wd * param[i];
    velocity[i] = mu * velocity[i] + g;
    param[i] -= lr * (options.nesterov ? g + mu * velocity[i] : velocity[i]);
  }
}

void Sgd::step(const std::vector<ParamRef>& params, double lr) {
  decayed_.clear();
  for (const ParamRef& p : params) {
    const bool decay = p.decay && options_.weight_decay > 0.0;
    if (decay) decayed_.push_back(p.name);
    sgd_step(*p.value, *p.grad, velocity_[p.name], lr, options_, p.decay);
  }
}

EpochMetrics train_epoch(Model& model, const Dataset& data, const TrainConfig& cfg, int e_cur,
                         Sgd& optimizer, std::mt19937_64& rng) {
  cfg.validate();
  require(data.size() > 0, ErrorCode::kInvalidArgument, "train: dataset has no records");
  EpochMetrics m;
  m.epoch = e_cur;
  m.lr = cosine_lr(cfg, e_cur);
  m.momentum = momentum(MomentumSchedule{cfg.m_min, cfg.epochs}, e_cur);
  const ForwardContext ctx{Mode::kTrain, m.momentum};

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t count = std::min(cfg.batch_size, order.size() - begin);
    std::span<const std::size_t> idx(order.data() + begin, count);
    const std::vector<int> labels = data.gather_labels(idx);
    model.zero_grad();
    const Tensor logits = model.forward(data.gather_images(idx), ctx);
    if (!model.first_nonfinite_layer().empty()) {
      fail(ErrorCode::kNonFinite,
           fmt::format("train: non-finite output at layer '{}' (epoch {}, batch at {})",
                       model.first_nonfinite_layer(), e_cur, begin));
    }
    BatchLoss loss = smoothed_cross_entropy_batch(logits, labels, cfg.label_smoothing);
    require(std::isfinite(loss.loss), ErrorCode::kNonFinite, "train: non-finite loss");
    model.backward(loss.grad);
    optimizer.step(model.params(), m.lr);
    model.project_steps();
    loss_sum += loss.loss * static_cast<double>(count);
    correct += loss.correct;
  }
  m.loss = loss_sum / static_cast<double>(data.size());
  m.top1 = 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
  m.mean_thresholds = model.mean_thresholds();
  return m;
}

EvalMetrics evaluate(Model& model, const Dataset& data, std::size_t batch_size) {
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "evaluate: batch_size must be >= 1");
  EvalMetrics out;
  out.count = data.size();
  if (data.size() == 0) return out;
  const ForwardContext ctx{Mode::kEval, 1.0};
  std::size_t top1 = 0;
  std::size_t top5 = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - begin);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), begin);
    const std::vector<int> labels = data.gather_labels(idx);
    const Tensor logits = model.forward(data.gather_images(idx), ctx);
    BatchLoss loss = smoothed_cross_entropy_batch(logits, labels, 0.0);
    loss_sum += loss.loss * static_cast<double>(count);
    top1 += loss.correct;
    const std::size_t k = logits.shape().c;
    for (std::size_t n = 0; n < count; ++n) {
      const double* row = logits.raw() + n * k;
      const double own = row[labels[n]];
      std::size_t higher = 0;
      for (std::size_t i = 0; i < k; ++i) {
        if (row[i] > own) ++higher;
      }
      if (higher < 5) ++top5;
    }
  }
  const double n = static_cast<double>(data.size());
  out.loss = loss_sum / n;
  out.top1 = 100.0 * static_cast<double>(top1) / n;
  out.top5 = 100.0 * static_cast<double>(top5) / n;
  return out;
}

std::vector<LayerSpec> stage_specs(const ReferenceArch& arch, const TrainConfig& cfg) {
  ReferenceArch a = arch;
  a.act_bits = cfg.act_bits;
  a.weight_bits = cfg.stage == 2 ? cfg.weight_bits : 0;
  return reference_cnn_specs(a);
}

namespace {

StageResult run_stage(std::vector<LayerSpec> specs, const ReferenceArch& arch,
                      const TrainConfig& cfg, const Dataset& data, const Checkpoint* init,
                      const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  require(data.size() > 0, ErrorCode::kInvalidArgument, "train: dataset has no records");
  Model model = Model::build(std::move(specs), arch.input_shape(), cfg.seed);
  StageResult result;
  if (init != nullptr) result.load_report = load_into(model, *init);
  model.set_weight_quantization(cfg.stage == 2);

  Sgd optimizer(SgdOptions{cfg.momentum, cfg.nesterov, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed ^ 0x5eedf00dULL);
  std::vector<EpochMetrics> history;
  for (int e = 0; e < cfg.epochs; ++e) {
    history.push_back(train_epoch(model, data, cfg, e, optimizer, rng));
    if (on_epoch) on_epoch(history.back(), model);
  }
  result.checkpoint = capture(model);
  result.checkpoint.optimizer = optimizer.velocity();
  result.checkpoint.epoch = cfg.epochs;
  result.checkpoint.stage = cfg.stage;
  result.checkpoint.seed = cfg.seed;
  result.checkpoint.config_digest = cfg.digest();
  result.checkpoint.history = std::move(history);
  return result;
}

}  // namespace

StageResult train_stage(const ReferenceArch& arch, const TrainConfig& cfg, const Dataset& data,
                        const Checkpoint* init, const EpochCallback& on_epoch) {
  require(cfg.act_bits > 0, ErrorCode::kConfig,
          "train: quantized stages need act_bits >= 1 (use train_float for a baseline)");
  return run_stage(stage_specs(arch, cfg), arch, cfg, data, init, on_epoch);
}

StagedResult staged_train(const ReferenceArch& arch, const TrainConfig& cfg1,
                          const TrainConfig& cfg2, const Dataset& data, const Checkpoint* init,
                          const EpochCallback& on_epoch) {
  require(cfg1.stage == 1, ErrorCode::kConfig, "staged_train: first config must be stage 1");
  require(cfg2.stage == 2, ErrorCode::kConfig, "staged_train: second config must be stage 2");
  require(cfg1.act_bits == cfg2.act_bits, ErrorCode::kConfig,
          "staged_train: activation bit widths differ between stages");
  StagedResult r;
  StageResult s1 = train_stage(arch, cfg1, data, init, on_epoch);
  r.stage1 = std::move(s1.checkpoint);
  r.stage1_load = std::move(s1.load_report);
  StageResult s2 = train_stage(arch, cfg2, data, &r.stage1, on_epoch);
  r.stage2 = std::move(s2.checkpoint);
  r.stage2_load = std::move(s2.load_report);
  return r;
}

StageResult train_float(const ReferenceArch& arch, const TrainConfig& cfg, const Dataset& data,
                        const Checkpoint* init, const EpochCallback& on_epoch) {
  ReferenceArch a = arch;
  a.act_bits = 0;
  a.weight_bits = 0;
  TrainConfig c = cfg;
  c.act_bits = 0;
  c.weight_bits = 0;
  c.stage = 1;
  return run_stage(reference_cnn_specs(a), a, c, data, init, on_epoch);
}

}  // namespace stq
