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

// Deterministic reference kernels: float convolution, the fused integer
// convolution, the activation quantizer and the ST block forward pass.

#include <benchmark/benchmark.h>

#include <random>

#include "stq/fusion.hpp"
#include "stq/ops.hpp"
#include "stq/quantizer.hpp"
#include "stq/st_block.hpp"

namespace {

stq::Tensor uniform(stq::Shape shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  stq::Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

stq::IntTensor codes(stq::Shape shape, std::uint64_t seed, int lo, int hi) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(lo, hi);
  stq::IntTensor t(shape);
  for (std::int32_t& v : t.data()) v = u(rng);
  return t;
}

// Arguments: spatial size, channels (in = out).
void BM_Conv2d(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const stq::Tensor x = uniform({8, hw, hw, c}, 1, -1.0, 1.0);
  const stq::Tensor k = uniform({3, 3, c, c}, 2, -0.5, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(stq::conv2d(x, k, {1, 1}));
  state.SetItemsProcessed(state.iterations() * 8 * hw * hw * c * c * 9);
}
BENCHMARK(BM_Conv2d)->Args({14, 16})->Args({28, 8})->Args({7, 32});

void BM_IntConv2d(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const stq::IntTensor x = codes({8, hw, hw, c}, 3, 0, 15);
  const stq::IntTensor k = codes({3, 3, c, c}, 4, -8, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(stq::int_conv2d(x, k, {1, 1}, stq::AccumulatorWidth::k32));
  }
  state.SetItemsProcessed(state.iterations() * 8 * hw * hw * c * c * 9);
}
BENCHMARK(BM_IntConv2d)->Args({14, 16})->Args({28, 8})->Args({7, 32});

// Argument: bit width.
void BM_QuantizeForward(benchmark::State& state) {
  const int bits = static_cast<int>(state.range(0));
  const stq::Tensor x = uniform({32, 14, 14, 16}, 5, -3.0, 3.0);
  stq::ThresholdState th(16);
  th.y_th = uniform({1, 1, 1, 16}, 6, 0.1, 1.0);
  th.initialized = true;
  const stq::QuantSpec spec = stq::QuantSpec::unsigned_bits(bits);
  for (auto _ : state) benchmark::DoNotOptimize(stq::quantize_forward(x, th, spec));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.size()));
}
BENCHMARK(BM_QuantizeForward)->Arg(1)->Arg(2)->Arg(4);

// Arguments: channels, reduction, single stage.
void BM_StForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  stq::STBlockParams p = stq::STBlockParams::init(c, static_cast<std::size_t>(state.range(1)), rng,
                                                  state.range(2) != 0);
  const stq::Tensor x = uniform({32, 14, 14, c}, 8, -1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(stq::st_forward(x, p, true));
}
BENCHMARK(BM_StForward)->Args({16, 1, 0})->Args({16, 4, 0})->Args({16, 1, 1})->Args({32, 1, 0});

}  // namespace

BENCHMARK_MAIN();
