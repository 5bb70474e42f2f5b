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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "stq/digits.hpp"
#include "stq/metrics.hpp"
#include "stq/train.hpp"
#include "test_support.hpp"

namespace stq {
namespace {

using testing::random_tensor;

ReferenceArch tiny_arch(int bits) {
  ReferenceArch a;
  a.input_h = a.input_w = 12;
  a.channels = {4, 6, 6};
  a.strides = {1, 2, 1};
  a.act_bits = bits;
  a.weight_bits = bits;
  return a;
}

Dataset tiny_digits(std::size_t count, std::uint64_t seed) {
  DigitStyle style;
  style.size = 12;
  style.max_shift = 1.0;
  style.min_thickness = 0.8;
  style.max_thickness = 1.4;
  return make_digits(count, seed, style);
}

TrainConfig tiny_config(int bits, int stage) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.lr = 0.05;
  c.act_bits = bits;
  c.weight_bits = bits;
  c.stage = stage;
  c.seed = 3;
  return c;
}

TEST(CosineLr, Endpoints) {
  TrainConfig c;
  c.lr = 0.1;
  c.lr_min = 1e-4;
  c.epochs = 90;
  EXPECT_DOUBLE_EQ(cosine_lr(c, 0), 0.1);
  EXPECT_DOUBLE_EQ(cosine_lr(c, 90), 1e-4);
  EXPECT_NEAR(cosine_lr(c, 45), (0.1 + 1e-4) / 2.0, 1e-15);
}

TEST(SmoothedCrossEntropy, Definition) {
  const std::vector<double> uniform(10, 0.7);
  EXPECT_NEAR(smoothed_cross_entropy(uniform, 3, 0.0), std::log(10.0), 1e-12);
  EXPECT_NEAR(smoothed_cross_entropy(uniform, 3, 0.4), std::log(10.0), 1e-12);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z(5);
    for (double& v : z) v = u(rng);
    const int label = trial % 5;
    const double factor = trial % 2 == 0 ? 0.0 : 0.1;
    double lse = 0.0;
    for (double v : z) lse += std::exp(v);
    lse = std::log(lse);
    double loss = 0.0;
    for (int k = 0; k < 5; ++k) {
      const double target = (k == label ? 1.0 - factor : 0.0) + factor / 5.0;
      loss -= target * (z[k] - lse);
    }
    EXPECT_NEAR(smoothed_cross_entropy(z, label, factor), loss, 1e-10);
  }
}

TEST(Sgd, DegenerateSteps) {
  Tensor p({1, 1, 1, 2}, std::vector<double>{1.0, -2.0});
  Tensor v({1, 1, 1, 2});
  const Tensor g({1, 1, 1, 2}, std::vector<double>{0.5, 0.25});
  sgd_step(p, g, v, 0.1, {0.0, false, 0.0}, true);
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(p[1], -2.0 - 0.025);
  Tensor q({1, 1, 1, 1}, std::vector<double>{4.0});
  Tensor w({1, 1, 1, 1});
  sgd_step(q, Tensor({1, 1, 1, 1}), w, 0.1, {0.9, true, 0.0}, true);
  EXPECT_EQ(q[0], 4.0);
}

TEST(Sgd, ThreeStepNesterovTrajectory) {
  const double lr = 0.1;
  const double mu = 0.9;
  const double wd = 0.01;
  Tensor p({1, 1, 1, 1}, std::vector<double>{1.0});
  Tensor v({1, 1, 1, 1});
  const std::vector<double> grads{0.3, -0.2, 0.5};
  double theta = 1.0;
  double vel = 0.0;
  for (double g : grads) {
    sgd_step(p, Tensor({1, 1, 1, 1}, std::vector<double>{g}), v, lr, {mu, true, wd}, true);
    const double gd = g + wd * theta;
    vel = mu * vel + gd;
    theta -= lr * (gd + mu * vel);
  }
  EXPECT_NEAR(p[0], theta, 1e-12);
}

TEST(Sgd, DecayFollowsParamFlags) {
  Tensor a({1, 1, 1, 1}, std::vector<double>{1.0});
  Tensor ga({1, 1, 1, 1});
  Tensor b({1, 1, 1, 1}, std::vector<double>{1.0});
  Tensor gb({1, 1, 1, 1});
  Sgd opt({0.9, true, 0.1});
  opt.step({{"conv.weight", &a, &ga, true}, {"aq.threshold", &b, &gb, false}}, 0.1);
  EXPECT_EQ(opt.decayed(), std::vector<std::string>{"conv.weight"});
  EXPECT_LT(a[0], 1.0);
  EXPECT_EQ(b[0], 1.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.stage = 2;
  c.weight_bits = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  EXPECT_NE(c.digest(), [] {
    TrainConfig d;
    d.lr = 0.051;
    return d.digest();
  }());
}

TEST(TrainEpoch, ZeroLearningRateKeepsParameters) {
  const ReferenceArch arch = tiny_arch(2);
  TrainConfig cfg = tiny_config(2, 1);
  cfg.lr = 0.0;
  cfg.lr_min = 0.0;
  Model model = Model::build(stage_specs(arch, cfg), arch.input_shape(), 1);
  std::map<std::string, Tensor> before;
  for (const ParamRef& p : model.params()) before[p.name] = *p.value;
  Sgd opt({cfg.momentum, cfg.nesterov, cfg.weight_decay});
  std::mt19937_64 rng(1);
  const EpochMetrics m = train_epoch(model, tiny_digits(64, 1), cfg, 0, opt, rng);
  for (const ParamRef& p : model.params()) EXPECT_EQ(*p.value, before.at(p.name)) << p.name;
  EXPECT_TRUE(std::isfinite(m.loss));
  EXPECT_EQ(m.mean_thresholds.size(), 2u);
}

TEST(TrainStage, EmptyDatasetFailsAtTrainingTime) {
  const ReferenceArch arch = tiny_arch(2);
  Dataset empty;
  empty.images = Tensor({0, 12, 12, 1});
  EXPECT_THROW(train_stage(arch, tiny_config(2, 1), empty, nullptr), Error);
}

TEST(TrainStage, IdenticalSeedsGiveIdenticalMetrics) {
  const ReferenceArch arch = tiny_arch(2);
  const Dataset data = tiny_digits(64, 4);
  const StageResult a = train_stage(arch, tiny_config(2, 1), data, nullptr);
  const StageResult b = train_stage(arch, tiny_config(2, 1), data, nullptr);
  EXPECT_EQ(metrics_csv(a.checkpoint.history), metrics_csv(b.checkpoint.history));
  EXPECT_EQ(metrics_jsonl(a.checkpoint.history), metrics_jsonl(b.checkpoint.history));
  EXPECT_EQ(a.checkpoint, b.checkpoint);
}

TEST(TrainStage, StageTwoReportsFreshQuantizerState) {
  const ReferenceArch arch = tiny_arch(3);
  const Dataset data = tiny_digits(64, 5);
  const StagedResult r = staged_train(arch, tiny_config(3, 1), tiny_config(3, 2), data, nullptr);
  EXPECT_EQ(r.stage2_load.initialized,
            (std::vector<std::string>{"conv2.lsq_step", "conv3.lsq_step"}));
  EXPECT_TRUE(r.stage2_load.ignored.empty());
  EXPECT_EQ(r.stage1.stage, 1);
  EXPECT_EQ(r.stage2.stage, 2);
  ASSERT_EQ(r.stage2.history.size(), 2u);
  EXPECT_EQ(r.stage2.history.front().epoch, 0);
}

TEST(TrainStage, StageTwoWithoutWeightQuantizationContinuesStageOne) {
  const ReferenceArch arch = tiny_arch(2);
  const Dataset data = tiny_digits(64, 6);
  const StageResult s1 = train_stage(arch, tiny_config(2, 1), data, nullptr);
  Model m1 = restore_model(s1.checkpoint);
  Model m2 = Model::build(stage_specs(arch, tiny_config(2, 2)), arch.input_shape(), 99);
  load_into(m2, s1.checkpoint);
  m2.set_weight_quantization(false);
  EXPECT_EQ(evaluate(m1, data).top1, evaluate(m2, data).top1);
  EXPECT_EQ(evaluate(m1, data).loss, evaluate(m2, data).loss);
}

}  // namespace
}  // namespace stq
