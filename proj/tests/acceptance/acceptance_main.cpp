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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails. STQ_MNIST_DIR may point at a
// directory holding the standard IDX digit files; otherwise the procedural
// digit set stands in for it.

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "stq/archive.hpp"
#include "stq/checkpoint.hpp"
#include "stq/digits.hpp"
#include "stq/fusion.hpp"
#include "stq/gradcheck.hpp"
#include "stq/idx.hpp"
#include "stq/presets.hpp"
#include "stq/quantizer.hpp"
#include "stq/st_block.hpp"
#include "stq/train.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace stq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool passed = false;
  std::string summary;
};

void detail(const std::string& line) { fmt::print("  {}\n", line); std::fflush(stdout); }

// ------------------------------------------------------------ criterion 1

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  GradCheckOptions o;
  o.points = 100;
  const auto results = run_gradcheck_suite(o);
  const double elapsed = seconds_since(t0);
  bool ok = elapsed < 120.0;
  double worst = 0.0;
  for (const GradCheckResult& r : results) {
    ok = ok && r.passed && r.points >= 100;
    worst = std::max(worst, r.max_relative_error);
    if (!r.passed) detail(fmt::format("gradcheck {} failed: {:.3g}", r.name, r.max_relative_error));
  }
  return {ok, fmt::format("{} suites x 100 points, worst relative error {:.2e}, {:.1f}s",
                          results.size(), worst, elapsed)};
}

// ------------------------------------------------------------ criterion 2

double quantize_oracle(double x, double t, int bits, bool is_signed) {
  if (bits == 1) return x >= 0.0 ? 1.0 : 0.0;
  const double lo = is_signed ? -std::ldexp(1.0, bits - 1) : 0.0;
  const double hi = is_signed ? std::ldexp(1.0, bits - 1) - 1.0 : std::ldexp(1.0, bits) - 1.0;
  const double v = x / t;
  const double r = v < 0.0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5);
  return std::min(hi, std::max(lo, r));
}

Verdict quantizer_oracle() {
  std::mt19937_64 rng(2);
  std::size_t mismatches = 0;
  bool cardinality_ok = true;
  for (int bits : {1, 2, 3, 4, 8}) {
    for (bool is_signed : {false, true}) {
      const std::size_t channels = 10;
      const double span = std::ldexp(1.0, bits) + 2.0;
      const Tensor x = testing::random_tensor({1000, 1, 10, channels}, rng, -span, span);
      ThresholdState s(channels);
      s.y_th = testing::random_tensor({1, 1, 1, channels}, rng, 0.1, 2.0);
      s.initialized = true;
      const Tensor q = quantize_forward(x, s, QuantSpec(bits, is_signed));
      std::set<double> levels;
      for (std::size_t i = 0; i < x.size(); ++i) {
        levels.insert(q[i]);
        if (q[i] != quantize_oracle(x[i], s.y_th[i % channels], bits, is_signed)) ++mismatches;
      }
      cardinality_ok = cardinality_ok && levels.size() <= (std::size_t{1} << bits);
    }
  }
  return {mismatches == 0 && cardinality_ok,
          fmt::format("10 configurations x 1e5 elements, {} mismatches, cardinality {}",
                      mismatches, cardinality_ok ? "within 2^B" : "exceeded")};
}

// ------------------------------------------------------------ criterion 3

Verdict momentum_and_ema() {
  const double m0 = momentum({0.1, 90}, 0);
  const double m90 = momentum({0.1, 90}, 90);
  const long double c1 = std::cos(1.0L);
  const double oracle = static_cast<double>(0.1L * (1.0L - c1) + c1);
  double worst = 0.0;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double m : {0.1, 0.35, 0.586268, 0.9}) {
    ThresholdState s(4);
    s.y_th = channel_vector(std::vector<double>{u(rng), u(rng), u(rng), u(rng)});
    s.initialized = true;
    const Tensor target = channel_vector(std::vector<double>{u(rng), u(rng), u(rng), u(rng)});
    const Tensor e0 = sub(s.y_th, target);
    for (int k = 1; k <= 60; ++k) {
      ema_update(s, target, m);
      for (std::size_t c = 0; c < 4; ++c) {
        const double predicted = std::pow(1.0 - m, k) * e0[c];
        worst = std::max(worst, std::abs((s.y_th[c] - target[c]) - predicted));
      }
    }
  }
  // The quoted 0.586268 sits 4.1e-6 from the printed formula; the
  // extended-precision evaluation of that formula is the oracle.
  const bool ok = m0 == 1.0 && std::abs(m90 - oracle) <= 1e-6 && worst <= 1e-12;
  return {ok, fmt::format("M(0)={}, M(90)={:.9f} (formula oracle {:.9f}, quoted 0.586268 "
                          "differs by {:.1e}), worst EMA contraction error {:.1e}",
                          m0, m90, oracle, std::abs(oracle - 0.586268), worst)};
}

// ------------------------------------------------------- desk-scale runs

struct DeskData {
  Dataset train;
  Dataset test;
  std::string source;
};

DeskData desk_data(std::uint64_t seed) {
  const std::size_t n_train = 2000;
  const std::size_t n_test = 2000;
  if (const char* dir = std::getenv("STQ_MNIST_DIR")) {
    const fs::path d(dir);
    const Dataset train = load_idx(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte");
    const Dataset test = load_idx(d / "t10k-images-idx3-ubyte", d / "t10k-labels-idx1-ubyte");
    const std::size_t offset = static_cast<std::size_t>(seed - 1) * n_train;
    return {train.slice(offset % (train.size() - n_train), n_train), test.slice(0, n_test),
            "IDX digits from " + d.string()};
  }
  return {make_digits(n_train, 100 + seed), make_digits(n_test, 200 + seed), "procedural digits"};
}

struct SeedRun {
  std::uint64_t seed = 0;
  double float_top1 = 0.0;
  std::map<int, double> stage1_top1;
  std::map<int, double> stage2_top1;
  std::map<int, Checkpoint> stage1;
  std::map<int, Checkpoint> stage2;
  Dataset test;
};

double test_top1(const Checkpoint& c, const Dataset& test) {
  Model m = restore_model(c);
  return evaluate(m, test).top1;
}

SeedRun desk_run(std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;
  DeskData data = desk_data(seed);
  run.test = data.test;
  const ReferenceArch arch;
  const Preset& fp = find_preset("desk-float");
  TrainConfig pre = fp.stage1;
  pre.seed = seed;
  const StageResult f = train_float(arch, pre, data.train, nullptr);

  // The float baseline follows the quantized runs' schedule from the same
  // starting point, so both see the same number of updates.
  const Preset& q4 = find_preset("desk-4bit");
  TrainConfig c1 = fp.stage2;
  c1.seed = seed;
  c1.epochs = q4.stage1.epochs;
  c1.lr = q4.stage1.lr;
  TrainConfig c2 = c1;
  c2.epochs = q4.stage2.epochs;
  c2.lr = q4.stage2.lr;
  const StageResult fa = train_float(arch, c1, data.train, &f.checkpoint);
  const StageResult fb = train_float(arch, c2, data.train, &fa.checkpoint);
  run.float_top1 = test_top1(fb.checkpoint, run.test);

  for (int bits : {4, 3, 2, 1}) {
    const Preset& p = find_preset(fmt::format("desk-{}bit", bits));
    TrainConfig s1 = p.stage1;
    TrainConfig s2 = p.stage2;
    s1.seed = s2.seed = seed;
    StagedResult r = staged_train(arch, s1, s2, data.train, &f.checkpoint);
    run.stage1_top1[bits] = test_top1(r.stage1, run.test);
    run.stage2_top1[bits] = test_top1(r.stage2, run.test);
    run.stage1[bits] = std::move(r.stage1);
    run.stage2[bits] = std::move(r.stage2);
  }
  detail(fmt::format("seed {} ({}): float {:.2f} | 4-bit {:.2f} | 3-bit {:.2f} | 2-bit {:.2f} | "
                     "1-bit {:.2f}   (stage 1: {:.2f} {:.2f} {:.2f} {:.2f})",
                     seed, data.source, run.float_top1, run.stage2_top1[4], run.stage2_top1[3],
                     run.stage2_top1[2], run.stage2_top1[1], run.stage1_top1[4],
                     run.stage1_top1[3], run.stage1_top1[2], run.stage1_top1[1]));
  return run;
}

// ------------------------------------------------------------ criterion 6

Verdict trend(const std::vector<SeedRun>& runs, double elapsed) {
  std::map<std::string, double> mean;
  const std::vector<std::pair<std::string, int>> order{
      {"float", 0}, {"4-bit", 4}, {"3-bit", 3}, {"2-bit", 2}, {"1-bit", 1}};
  for (const SeedRun& r : runs) {
    for (const auto& [name, bits] : order) {
      mean[name] += (bits == 0 ? r.float_top1 : r.stage2_top1.at(bits)) / runs.size();
    }
  }
  bool ok = elapsed < 45.0 * 60.0;
  std::string means;
  for (std::size_t i = 0; i < order.size(); ++i) {
    means += fmt::format("{}{} {:.2f}", i == 0 ? "" : " >= ", order[i].first, mean[order[i].first]);
    if (i + 1 < order.size()) {
      ok = ok && mean[order[i].first] + 0.5 >= mean[order[i + 1].first];
    }
  }
  const double gap = mean["float"] - mean["4-bit"];
  ok = ok && gap <= 2.0;
  return {ok, fmt::format("3-seed means {}; float - 4-bit = {:.2f}; {:.1f} min", means, gap,
                          elapsed / 60.0)};
}

// ------------------------------------------------------------ criterion 7

Verdict continuity(const std::vector<SeedRun>& runs) {
  const ReferenceArch arch;
  std::size_t checked = 0;
  std::size_t equal = 0;
  for (const SeedRun& r : runs) {
    for (int bits : {4, 3, 2, 1}) {
      const Checkpoint& s1 = r.stage1.at(bits);
      Model a = restore_model(s1);
      TrainConfig cfg2 = find_preset(fmt::format("desk-{}bit", bits)).stage2;
      Model b = Model::build(stage_specs(arch, cfg2), arch.input_shape(), r.seed + 17);
      load_into(b, s1);
      b.set_weight_quantization(false);
      const EvalMetrics ea = evaluate(a, r.test);
      const EvalMetrics eb = evaluate(b, r.test);
      ++checked;
      if (ea.top1 == eb.top1 && ea.top5 == eb.top5 && ea.loss == eb.loss) ++equal;
    }
  }
  return {checked == equal && checked > 0,
          fmt::format("{}/{} stage-1 -> stage-2 handoffs evaluate identically", equal, checked)};
}

// ------------------------------------------------------- criteria 4 and 5

struct FusionOutcome {
  Verdict equivalence;
  Verdict overhead;
};

FusionOutcome fusion(const std::vector<SeedRun>& runs) {
  const auto t0 = Clock::now();
  std::size_t hard = 0;
  std::size_t ties = 0;
  std::size_t activations = 0;
  std::size_t chains_failed = 0;
  bool counter_zero = true;
  bool counts_equal = true;

  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    testing::RandomChain chain = testing::random_chain(seed * 7919, 10);
    const FusedModel f = compile(chain.model);
    reset_st_invocation_count();
    const EquivalenceReport r = equivalence_report(chain.model, f, chain.images);
    f.infer(chain.images);
    counter_zero = counter_zero && st_invocation_count() == 0;
    counts_equal = counts_equal && count_multiplies(f).total() ==
                                       count_multiplies(compile_scalar_scale(chain.model),
                                                        f.quantized_input_shape())
                                           .total();
    hard += r.hard_mismatches;
    ties += r.ties;
    activations += r.activations;
    chains_failed += r.passed() ? 0 : 1;
  }
  detail(fmt::format("100 random chains: {} activations, {} hard mismatches, {} ties", activations,
                     hard, ties));

  std::size_t trained_hard = 0;
  std::size_t trained_ties = 0;
  std::size_t trained_acts = 0;
  std::size_t trained_failed = 0;
  const SeedRun& run = runs.front();
  for (int bits : {4, 3, 2, 1}) {
    Model model = restore_model(run.stage2.at(bits));
    const FusedModel f = compile(model);
    reset_st_invocation_count();
    const EquivalenceReport r = equivalence_report(model, f, run.test.images);
    evaluate(model, run.test);
    f.infer(run.test.images);
    counter_zero = counter_zero && st_invocation_count() == 0;
    const MultiplyCount fused = count_multiplies(f);
    const MultiplyCount plain = count_multiplies(compile_scalar_scale(model), f.quantized_input_shape());
    counts_equal = counts_equal && fused.macs == plain.macs && fused.requant == plain.requant;
    detail(fmt::format("trained {}-bit: {} activations, {} hard, {} ties, {} prediction "
                       "mismatches; multiplies fused {} vs plain {}",
                       bits, r.activations, r.hard_mismatches, r.ties, r.prediction_mismatches,
                       fused.total(), plain.total()));
    trained_hard += r.hard_mismatches;
    trained_ties += r.ties;
    trained_acts += r.activations;
    trained_failed += r.passed() ? 0 : 1;
  }
  const double elapsed = seconds_since(t0);
  const double tie_fraction =
      static_cast<double>(ties + trained_ties) / static_cast<double>(activations + trained_acts);
  FusionOutcome out;
  out.equivalence.passed = hard == 0 && trained_hard == 0 && chains_failed == 0 &&
                           trained_failed == 0 && tie_fraction < 1e-6 && elapsed < 300.0;
  out.equivalence.summary =
      fmt::format("{} integer activations, {} hard mismatches, tie fraction {:.1e}, {:.1f}s",
                  activations + trained_acts, hard + trained_hard, tie_fraction, elapsed);
  out.overhead.passed = counter_zero && counts_equal;
  out.overhead.summary = fmt::format("ST invocations on eval/fused paths: {}; multiply counts {}",
                                     counter_zero ? "0" : "nonzero",
                                     counts_equal ? "equal" : "differ");
  return out;
}

// ------------------------------------------------------------ criterion 8

bool rejects(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error&) {
    return true;
  }
  return false;
}

Verdict persistence(const std::vector<SeedRun>& runs) {
  const fs::path dir = testing::temp_dir("acceptance");
  bool stable = true;
  bool negatives = true;
  std::size_t files = 0;
  for (const auto& [bits, ckpt] : runs.front().stage2) {
    const fs::path c1 = dir / fmt::format("s2-{}.ckpt", bits);
    const fs::path c2 = dir / fmt::format("s2-{}-again.ckpt", bits);
    save_checkpoint(c1, ckpt);
    const Checkpoint back = load_checkpoint(c1);
    save_checkpoint(c2, back);
    stable = stable && back == ckpt && read_file_bytes(c1) == read_file_bytes(c2);

    const FusedModel f = compile(ckpt);
    const fs::path f1 = dir / fmt::format("m-{}.stqf", bits);
    const fs::path f2 = dir / fmt::format("m-{}-again.stqf", bits);
    save_fused(f1, f);
    const FusedModel fb = load_fused(f1);
    save_fused(f2, fb);
    stable = stable && fb == f && read_file_bytes(f1) == read_file_bytes(f2) &&
             compile(load_checkpoint(c1)) == f;
    files += 4;

    for (const fs::path& p : {c1, f1}) {
      const auto bytes = read_file_bytes(p);
      auto flipped = bytes;
      flipped[flipped.size() / 3] ^= 0x10;
      auto crc = bytes;
      crc.back() ^= 0x01;
      auto truncated = bytes;
      truncated.resize(bytes.size() - 13);
      for (const auto& bad : {flipped, crc, truncated}) {
        write_file_bytes(dir / "bad", bad);
        negatives = negatives && rejects([&] { load_checkpoint(dir / "bad"); }) &&
                    rejects([&] { load_fused(dir / "bad"); });
      }
    }
    negatives = negatives && rejects([&] { load_fused(c1); }) &&
                rejects([&] { load_checkpoint(f1); });
  }
  fs::remove_all(dir);
  return {stable && negatives,
          fmt::format("{} files round-tripped {}; corrupted, truncated and mislabeled files {}",
                      files, stable ? "bitwise" : "UNSTABLE",
                      negatives ? "rejected" : "ACCEPTED")};
}

}  // namespace

int main() {
  std::vector<Verdict> verdicts(9);
  try {
    fmt::print("criterion 1: gradient suite\n");
    verdicts[1] = gradient_suite();
    fmt::print("criterion 2: quantizer oracle\n");
    verdicts[2] = quantizer_oracle();
    fmt::print("criterion 3: momentum and EMA closed form\n");
    verdicts[3] = momentum_and_ema();

    fmt::print("criterion 6: desk-scale staged training (3 seeds)\n");
    std::fflush(stdout);
    const auto t0 = Clock::now();
    std::vector<SeedRun> runs;
    for (std::uint64_t seed : {1, 2, 3}) runs.push_back(desk_run(seed));
    verdicts[6] = trend(runs, seconds_since(t0));

    fmt::print("criteria 4 and 5: fusion equivalence and inference overhead\n");
    const FusionOutcome f = fusion(runs);
    verdicts[4] = f.equivalence;
    verdicts[5] = f.overhead;
    verdicts[7] = continuity(runs);
    verdicts[8] = persistence(runs);
  } catch (const std::exception& e) {
    fmt::print("acceptance aborted: {}\n", e.what());
  }

  const char* names[] = {"",
                         "gradient suite",
                         "quantizer oracle",
                         "momentum/EMA closed form",
                         "fusion equivalence",
                         "inference overhead",
                         "desk-scale trend",
                         "two-step continuity",
                         "persistence"};
  bool all = true;
  fmt::print("\n");
  for (int i = 1; i <= 8; ++i) {
    const Verdict& v = verdicts[static_cast<std::size_t>(i)];
    all = all && v.passed;
    fmt::print("[{}] criterion {} {}: {}\n", v.passed ? "PASS" : "FAIL", i, names[i],
               v.summary.empty() ? "not evaluated" : v.summary);
  }
  return all ? 0 : 1;
}
