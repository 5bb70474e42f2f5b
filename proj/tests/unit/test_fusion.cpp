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
#include <filesystem>
#include <random>

#include "stq/batchnorm.hpp"
#include "stq/fusion.hpp"
#include "stq/layers.hpp"
#include "stq/st_block.hpp"
#include "test_support.hpp"

namespace stq {
namespace {

using testing::random_chain;
using testing::random_tensor;

BatchNormParams random_bn(std::size_t c, std::mt19937_64& rng) {
  BatchNormParams p = BatchNormParams::identity(c);
  p.gamma = random_tensor({1, 1, 1, c}, rng, -2.0, 2.0);
  p.beta = random_tensor({1, 1, 1, c}, rng, -1.0, 1.0);
  p.running_mean = random_tensor({1, 1, 1, c}, rng, -1.0, 1.0);
  p.running_var = random_tensor({1, 1, 1, c}, rng, 0.1, 3.0);
  return p;
}

template <typename T>
std::vector<T*> layers_of(Model& m) {
  std::vector<T*> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (auto* l = dynamic_cast<T*>(&m.layer(i))) out.push_back(l);
  }
  return out;
}

TEST(FoldForward, IdentityAndHalving) {
  const BatchNormParams id = BatchNormParams::identity(3);
  EXPECT_EQ(fold_forward(id, channel_vector(3, 1.0)), id);
  const BatchNormParams half = fold_forward(id, channel_vector(3, 2.0));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(half.gamma[c], 0.5);
  EXPECT_THROW(fold_forward(id, channel_vector(std::vector<double>{1.0, 0.0, 1.0})), Error);
}

TEST(FoldForward, MatchesUnfoldedDivision) {
  std::mt19937_64 rng(12);
  const BatchNormParams bn = random_bn(5, rng);
  const Tensor t = random_tensor({1, 1, 1, 5}, rng, 0.05, 2.0);
  const Tensor x = random_tensor({3, 2, 2, 5}, rng, -3.0, 3.0);
  const Tensor unfolded = batchnorm_eval(x, bn);
  const Tensor folded = batchnorm_eval(x, fold_forward(bn, t));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(folded[i], unfolded[i] / t[i % 5], 1e-10);
  }
}

TEST(FoldBackwardScale, IdentityAndLinearity) {
  std::mt19937_64 rng(13);
  const BatchNormParams bn = random_bn(4, rng);
  EXPECT_EQ(fold_backward_scale(1.0, bn), bn);
  for (double alpha : {0.5, 0.137, 3.0}) {
    const Tensor conv_x = random_tensor({2, 3, 3, 4}, rng, -2.0, 2.0);
    const Tensor scaled = batchnorm_eval(scale(conv_x, alpha), bn);
    const Tensor folded = batchnorm_eval(conv_x, fold_backward_scale(alpha, bn));
    for (std::size_t i = 0; i < scaled.size(); ++i) EXPECT_NEAR(folded[i], scaled[i], 1e-10);
  }
  EXPECT_THROW(fold_backward_scale(0.0, bn), Error);
}

FusedLayer one_by_one(std::int32_t w, std::int32_t b, double s_th, int bits) {
  FusedLayer l;
  l.name = "hand";
  l.kernel = IntTensor({1, 1, 1, 1}, std::vector<std::int32_t>{w});
  l.geometry = {1, 0};
  l.b_int = IntTensor({1, 1, 1, 1}, std::vector<std::int32_t>{b});
  l.s_th = channel_vector(std::vector<double>{s_th});
  l.s_w = channel_vector(std::vector<double>{1.0});
  l.alpha = 1.0;
  l.input_spec = QuantSpec::unsigned_bits(bits);
  l.output_spec = QuantSpec::unsigned_bits(bits);
  l.clip_lo = 0;
  l.clip_hi = (1 << bits) - 1;
  return l;
}

TEST(RunFusedLayer, HandArithmetic) {
  const FusedLayer l = one_by_one(2, 1, 0.5, 3);
  const IntTensor x({1, 1, 1, 1}, std::vector<std::int32_t>{3});
  const FusedLayerResult r = run_fused_layer(l, x);
  EXPECT_EQ(r.codes[0], 4);
  EXPECT_EQ(r.values[0], 3.5);
}

TEST(RunFusedLayer, ZeroInputZeroBias) {
  const FusedLayer l = one_by_one(-3, 0, 0.7, 2);
  const IntTensor x({2, 3, 3, 1});
  const FusedLayerResult r = run_fused_layer(l, x);
  for (std::int32_t v : r.codes.data()) EXPECT_EQ(v, 0);
}

TEST(RunFusedLayer, ClipsAtBothEnds) {
  const FusedLayer l = one_by_one(5, 0, 1.0, 2);
  const IntTensor x({1, 1, 2, 1}, std::vector<std::int32_t>{3, 0});
  FusedLayer neg = l;
  neg.kernel[0] = -5;
  EXPECT_EQ(run_fused_layer(l, x).codes[0], 3);
  EXPECT_EQ(run_fused_layer(neg, x).codes[0], 0);
}

TEST(RunFusedLayer, RejectsOutOfRangeCodes) {
  const FusedLayer l = one_by_one(1, 0, 1.0, 2);
  EXPECT_THROW(run_fused_layer(l, IntTensor({1, 1, 1, 1}, std::vector<std::int32_t>{4})), Error);
}

TEST(IntConv2d, OverflowNamesLayerAndChannel) {
  const IntTensor x({1, 1, 1, 3}, 65535);
  IntTensor k({1, 1, 3, 2}, 1);
  k(0, 0, 0, 1) = 1 << 20;
  k(0, 0, 1, 1) = 1 << 20;
  try {
    int_conv2d(x, k, {1, 0}, AccumulatorWidth::k32, "conv7");
    FAIL() << "expected an overflow";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOverflow);
    EXPECT_NE(std::string(e.what()).find("conv7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("channel 1"), std::string::npos);
  }
  const LongTensor wide = int_conv2d(x, k, {1, 0}, AccumulatorWidth::k64, "conv7");
  EXPECT_EQ(wide[1], 65535LL * ((1LL << 21) + 1));
}

TEST(Compile, ThresholdScaleMatchesHandComputation) {
  for (std::uint64_t seed : {2u, 4u, 7u}) {
    testing::RandomChain chain = random_chain(seed);
    if (chain.bits == 1) continue;
    const FusedModel f = compile(chain.model);
    const auto aq = layers_of<ActiQuan>(chain.model);
    const auto bn = layers_of<BatchNorm2d>(chain.model);
    const auto conv = layers_of<Conv2d>(chain.model);
    ASSERT_EQ(f.layers.size(), aq.size());
    for (std::size_t k = 0; k + 1 < f.layers.size(); ++k) {
      const FusedLayer& l = f.layers[k];
      const double alpha = aq[k]->state().mean();
      EXPECT_DOUBLE_EQ(l.alpha, alpha);
      const ChannelAffine a = batchnorm_affine(bn[k + 1]->bn());
      for (std::size_t c = 0; c < l.s_th.size(); ++c) {
        const double s_w = conv[k + 1]->step() * std::abs(a.scale[c]);
        EXPECT_NEAR(l.s_w[c], s_w, 1e-14 * s_w);
        const double expected = alpha * s_w / aq[k + 1]->state().y_th[c];
        EXPECT_NEAR(l.s_th[c], expected, 1e-12 * expected) << "seed " << seed << " channel " << c;
      }
    }
  }
}

TEST(Compile, UniformThresholds) {
  testing::RandomChain chain = random_chain(6);
  for (ActiQuan* aq : layers_of<ActiQuan>(chain.model)) aq->state().y_th.fill(0.4);
  auto bns = layers_of<BatchNorm2d>(chain.model);
  for (BatchNorm2d* bn : bns) {
    bn->bn().gamma.fill(1.0);
    bn->bn().running_var.fill(1.0 - bn->bn().eps);
  }
  const auto conv = layers_of<Conv2d>(chain.model);
  const FusedModel f = compile(chain.model);
  for (std::size_t k = 0; k + 1 < f.layers.size(); ++k) {
    for (std::size_t c = 0; c < f.layers[k].s_th.size(); ++c) {
      EXPECT_NEAR(f.layers[k].s_th[c], 0.4 * conv[k + 1]->step() / 0.4, 1e-15);
    }
  }
}

TEST(Compile, ScalingEveryThresholdKeepsRequantizeScales) {
  testing::RandomChain chain = random_chain(10);
  const FusedModel before = compile(chain.model);
  for (ActiQuan* aq : layers_of<ActiQuan>(chain.model)) {
    for (double& v : aq->state().y_th.data()) v *= 2.5;
  }
  const FusedModel after = compile(chain.model);
  for (std::size_t k = 0; k + 1 < before.layers.size(); ++k) {
    if (before.layers[k].output != FusedOutput::kRequantize) continue;
    for (std::size_t c = 0; c < before.layers[k].s_th.size(); ++c) {
      EXPECT_NEAR(after.layers[k].s_th[c], before.layers[k].s_th[c],
                  1e-12 * before.layers[k].s_th[c]);
    }
  }
}

TEST(Compile, RejectsUninitializedThreshold) {
  testing::RandomChain chain = random_chain(3);
  layers_of<ActiQuan>(chain.model).back()->state().initialized = false;
  EXPECT_THROW(compile(chain.model), Error);
}

TEST(Compile, SaveLoadRoundTripIsIdentical) {
  testing::RandomChain chain = random_chain(8);
  const FusedModel f = compile(chain.model);
  EXPECT_EQ(compile(capture(chain.model)), f);
  const auto dir = std::filesystem::path(testing::temp_dir("fused"));
  save_fused(dir / "m.stqf", f);
  EXPECT_EQ(load_fused(dir / "m.stqf"), f);
  EXPECT_EQ(serialize(to_archive(load_fused(dir / "m.stqf"))), serialize(to_archive(f)));
  std::filesystem::remove_all(dir);
}

TEST(Equivalence, RandomChainsAreExact) {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    testing::RandomChain chain = random_chain(seed, 6);
    const FusedModel f = compile(chain.model);
    const EquivalenceReport r = equivalence_report(chain.model, f, chain.images, 3);
    EXPECT_EQ(r.hard_mismatches, 0u) << "seed " << seed;
    EXPECT_TRUE(r.passed()) << "seed " << seed;
    EXPECT_EQ(r.prediction_mismatches, 0u) << "seed " << seed;
  }
}

TEST(Equivalence, PerturbedScaleIsFlagged) {
  std::size_t flagged = 0;
  for (std::uint64_t seed = 200; seed < 206; ++seed) {
    testing::RandomChain chain = random_chain(seed, 8);
    FusedModel f = compile(chain.model);
    bool perturbed = false;
    for (FusedLayer& l : f.layers) {
      if (l.output != FusedOutput::kRequantize) continue;
      for (double& s : l.s_th.data()) s += 1e-3;
      perturbed = true;
    }
    if (!perturbed) continue;
    const EquivalenceReport r = equivalence_report(chain.model, f, chain.images);
    if (r.hard_mismatches > 0) {
      ++flagged;
      EXPECT_FALSE(r.passed());
    }
  }
  EXPECT_GT(flagged, 0u);
}

TEST(Equivalence, TieClassification) {
  EXPECT_TRUE(is_round_tie(2.5, false));
  EXPECT_TRUE(is_round_tie(-1.5 + 1e-12, false));
  EXPECT_FALSE(is_round_tie(2.4, false));
  EXPECT_TRUE(is_round_tie(0.0, true));
  EXPECT_FALSE(is_round_tie(0.5, true));
}

TEST(Fused, ReluIsAbsorbedByUnsignedClip) {
  for (std::uint64_t seed : {4u, 12u, 16u}) {
    testing::RandomChain chain = random_chain(seed);
    if (chain.bits == 1) continue;
    std::vector<LayerSpec> specs;
    const auto& all = chain.model.specs();
    for (std::size_t i = 0; i < all.size(); ++i) {
      const bool feeds_quantizer = i + 1 < all.size() && all[i + 1].kind == LayerKind::kActiQuan;
      if (all[i].kind == LayerKind::kReLU && feeds_quantizer) continue;
      specs.push_back(all[i]);
    }
    Model bare = Model::build(specs, chain.model.input_shape(), 1);
    load_into(bare, capture(chain.model));
    bare.set_weight_quantization(true);
    const FusedModel a = compile(chain.model);
    const FusedModel b = compile(bare);
    const IntTensor x = a.quantize_input(chain.images);
    const FusedTrace ta = run_fused(a.layers, x);
    const FusedTrace tb = run_fused(b.layers, x);
    EXPECT_EQ(ta.codes, tb.codes) << "seed " << seed;
  }
}

TEST(Fused, NoStBlockEvaluation) {
  testing::RandomChain chain = random_chain(21);
  const FusedModel f = compile(chain.model);
  reset_st_invocation_count();
  f.infer(chain.images);
  run_fused(f.layers, f.quantize_input(chain.images));
  chain.model.forward(chain.images, ForwardContext{Mode::kEval, 1.0});
  EXPECT_EQ(st_invocation_count(), 0u);
}

TEST(Fused, MultiplyCountMatchesPlainQuantizedNet) {
  for (std::uint64_t seed : {30u, 31u, 32u}) {
    testing::RandomChain chain = random_chain(seed);
    const FusedModel f = compile(chain.model);
    const MultiplyCount fused = count_multiplies(f);
    const MultiplyCount plain = count_multiplies(compile_scalar_scale(chain.model), f.quantized_input_shape());
    EXPECT_EQ(fused.macs, plain.macs);
    EXPECT_EQ(fused.requant, plain.requant);
    EXPECT_GT(fused.macs, 0u);
  }
}

}  // namespace
}  // namespace stq
