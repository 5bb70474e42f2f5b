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

// Command-line front end: train, eval, fuse, verify, gradcheck,
// export-metrics, make-digits and presets.

#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "stq/checkpoint.hpp"
#include "stq/config.hpp"
#include "stq/digits.hpp"
#include "stq/error.hpp"
#include "stq/fusion.hpp"
#include "stq/gradcheck.hpp"
#include "stq/idx.hpp"
#include "stq/metrics.hpp"
#include "stq/presets.hpp"
#include "stq/quantizer.hpp"
#include "stq/st_block.hpp"
#include "stq/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kTrainImages = "train-images-idx3-ubyte";
constexpr const char* kTrainLabels = "train-labels-idx1-ubyte";
constexpr const char* kTestImages = "t10k-images-idx3-ubyte";
constexpr const char* kTestLabels = "t10k-labels-idx1-ubyte";

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

int report_error(const std::string& code, const std::string& message) {
  const json j{{"error", code}, {"message", message}};
  std::cerr << j.dump() << "\n";
  return 2;
}

// A dataset directory holds IDX files under the conventional names; a
// missing test split falls back to the training split.
stq::Dataset load_split(const fs::path& dir, bool test) {
  const bool has_test = fs::exists(dir / kTestImages) && fs::exists(dir / kTestLabels);
  if (test && has_test) return stq::load_idx(dir / kTestImages, dir / kTestLabels);
  return stq::load_idx(dir / kTrainImages, dir / kTrainLabels);
}

void write_metrics(const fs::path& out, const std::string& stem,
                   const std::vector<stq::EpochMetrics>& history) {
  stq::write_text_file(out / (stem + ".csv"), stq::metrics_csv(history));
  stq::write_text_file(out / (stem + ".jsonl"), stq::metrics_jsonl(history));
}

json layer_report_json(const stq::LayerEquivalence& e) {
  return json{{"layer", e.name},       {"elements", e.elements}, {"mismatches", e.mismatches},
              {"ties", e.ties},        {"hard", e.hard},         {"propagated", e.propagated},
              {"max_deviation", e.max_deviation}};
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string config;
  std::string preset;
  std::string dataset;
  std::string init;
  std::string out = "run";
  std::optional<int> epochs;
  std::optional<int> bits;
  std::optional<int> seed;
  std::optional<int> float_epochs;
  int stage = 0;
  std::size_t synthetic = 0;
  bool deterministic = false;
};

int run_train(const TrainArgs& a) {
  stq::RunConfig rc = a.config.empty() ? stq::RunConfig{} : stq::load_run_config(a.config);
  if (!a.preset.empty()) {
    const stq::Preset& p = stq::find_preset(a.preset);
    rc.preset = p.name;
    rc.stage1 = p.stage1;
    rc.stage2 = p.stage2;
  }
  if (a.epochs) rc.stage1.epochs = rc.stage2.epochs = *a.epochs;
  if (a.bits) {
    rc.stage1.act_bits = rc.stage2.act_bits = *a.bits;
    rc.stage1.weight_bits = rc.stage2.weight_bits = *a.bits;
  }
  if (a.seed) rc.stage1.seed = rc.stage2.seed = static_cast<std::uint64_t>(*a.seed);
  if (a.float_epochs) rc.float_epochs = *a.float_epochs;
  if (!a.init.empty()) rc.init = a.init;
  if (a.out != "run" || rc.out_dir.empty()) rc.out_dir = a.out;
  if (a.deterministic) rc.deterministic = true;

  stq::Dataset train;
  if (a.synthetic > 0) {
    train = stq::make_digits(a.synthetic, rc.stage1.seed);
  } else if (!a.dataset.empty()) {
    train = load_split(a.dataset, false);
  } else {
    stq::require(!rc.train_images.empty(), stq::ErrorCode::kConfig,
                 "train: no dataset (use --dataset, --synthetic or [data] in the config)");
    train = stq::load_idx(rc.train_images, rc.train_labels);
  }

  const fs::path out = rc.out_dir;
  fs::create_directories(out);
  const stq::ReferenceArch arch = rc.arch();
  json summary{{"preset", rc.preset}, {"out", out.string()}, {"records", train.size()}};

  std::optional<stq::Checkpoint> init;
  if (!rc.init.empty()) init = stq::load_checkpoint(rc.init);
  if (rc.float_epochs > 0) {
    stq::TrainConfig fc = rc.stage1;
    fc.epochs = rc.float_epochs;
    stq::StageResult f = stq::train_float(arch, fc, train, init ? &*init : nullptr);
    stq::save_checkpoint(out / "float.ckpt", f.checkpoint);
    write_metrics(out, "metrics-float", f.checkpoint.history);
    init = std::move(f.checkpoint);
    summary["float_checkpoint"] = (out / "float.ckpt").string();
  }

  const bool full_precision = rc.stage1.act_bits == 0;
  if (full_precision) {
    stq::StageResult r = stq::train_float(arch, rc.stage1, train, init ? &*init : nullptr);
    stq::save_checkpoint(out / "model.ckpt", r.checkpoint);
    write_metrics(out, "metrics", r.checkpoint.history);
    summary["checkpoint"] = (out / "model.ckpt").string();
    summary["final_top1"] = r.checkpoint.history.back().top1;
    print_json(summary);
    return 0;
  }

  auto record_load = [&](const char* key, const stq::LoadReport& r) {
    summary[key] = json{{"initialized", r.initialized}, {"ignored", r.ignored}};
  };
  if (a.stage == 1 || a.stage == 2) {
    stq::TrainConfig cfg = a.stage == 1 ? rc.stage1 : rc.stage2;
    stq::StageResult r = stq::train_stage(arch, cfg, train, init ? &*init : nullptr);
    const std::string name = fmt::format("stage{}", a.stage);
    stq::save_checkpoint(out / (name + ".ckpt"), r.checkpoint);
    write_metrics(out, "metrics-" + name, r.checkpoint.history);
    record_load("load_report", r.load_report);
    summary["checkpoint"] = (out / (name + ".ckpt")).string();
    summary["final_top1"] = r.checkpoint.history.back().top1;
  } else {
    stq::StagedResult r = stq::staged_train(arch, rc.stage1, rc.stage2, train,
                                            init ? &*init : nullptr);
    stq::save_checkpoint(out / "stage1.ckpt", r.stage1);
    stq::save_checkpoint(out / "stage2.ckpt", r.stage2);
    write_metrics(out, "metrics-stage1", r.stage1.history);
    write_metrics(out, "metrics-stage2", r.stage2.history);
    record_load("stage1_load", r.stage1_load);
    record_load("stage2_load", r.stage2_load);
    summary["checkpoint"] = (out / "stage2.ckpt").string();
    summary["final_top1"] = r.stage2.history.back().top1;
  }
  print_json(summary);
  return 0;
}

// ------------------------------------------------------------------- eval

stq::Dataset dataset_for(const std::string& dir, std::size_t synthetic, std::uint64_t seed,
                         bool test) {
  if (synthetic > 0) return stq::make_digits(synthetic, seed);
  stq::require(!dir.empty(), stq::ErrorCode::kInvalidArgument,
               "a dataset is required (--dataset or --synthetic)");
  return load_split(dir, test);
}

int run_eval(const std::string& checkpoint, const std::string& fused_path,
             const std::string& dataset, std::size_t synthetic, std::uint64_t seed,
             const std::string& split) {
  const stq::Dataset data = dataset_for(dataset, synthetic, seed, split == "test");
  json j{{"split", split}, {"count", data.size()}};
  if (!fused_path.empty()) {
    const stq::FusedModel f = stq::load_fused(fused_path);
    const stq::Tensor logits = f.infer(data.images);
    const std::size_t k = logits.shape().c;
    std::size_t correct = 0;
    for (std::size_t n = 0; n < data.size(); ++n) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (logits[n * k + c] > logits[n * k + best]) best = c;
      }
      if (static_cast<int>(best) == data.labels[n]) ++correct;
    }
    j["executor"] = "fused";
    j["top1"] = data.size() == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / data.size();
  } else {
    const stq::Checkpoint ckpt = stq::load_checkpoint(checkpoint);
    stq::Model model = stq::restore_model(ckpt);
    const stq::EvalMetrics m = stq::evaluate(model, data);
    j["executor"] = "float";
    j["top1"] = m.top1;
    j["top5"] = m.top5;
    j["loss"] = m.loss;
  }
  j["st_invocations"] = stq::st_invocation_count();
  print_json(j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stq: Squeeze-and-Threshold activation quantization toolkit"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Two-step (or single-stage) training");
  train->add_option("--config", ta.config, "INI run configuration");
  train->add_option("--preset", ta.preset, "Named hyperparameter preset");
  train->add_option("--dataset", ta.dataset, "Directory with IDX files");
  train->add_option("--synthetic", ta.synthetic, "Train on N generated digits instead");
  train->add_option("--init", ta.init, "Checkpoint that initializes stage 1");
  train->add_option("--float-epochs", ta.float_epochs, "Full precision pretraining epochs");
  train->add_option("--epochs", ta.epochs, "Epochs per stage");
  train->add_option("--bits", ta.bits, "Activation and weight bit width (0 = float)");
  train->add_option("--stage", ta.stage, "1 or 2 for a single stage, 0 for both")
      ->check(CLI::IsMember({0, 1, 2}));
  train->add_option("--seed", ta.seed, "Random seed");
  train->add_flag("--deterministic", ta.deterministic, "Single-threaded, reproducible run");
  train->add_option("--out", ta.out, "Output directory");

  std::string checkpoint;
  std::string fused_path;
  std::string dataset;
  std::string split = "test";
  std::string out;
  std::size_t synthetic = 0;
  int seed = 1;
  CLI::App* eval = app.add_subcommand("eval", "Top-1/top-5 accuracy on a split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  eval->add_option("--fused", fused_path, "Fused model to evaluate instead");
  eval->add_option("--dataset", dataset, "Directory with IDX files");
  eval->add_option("--synthetic", synthetic, "Evaluate on N generated digits");
  eval->add_option("--seed", seed, "Seed for generated digits");
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  CLI::App* fuse = app.add_subcommand("fuse", "Compile a stage-2 checkpoint to integer form");
  fuse->add_option("--checkpoint", checkpoint, "Stage-2 checkpoint")->required();
  fuse->add_option("--out", out, "Fused model file")->required();

  std::size_t verify_batch = 100;
  CLI::App* verify = app.add_subcommand("verify", "Fused versus fake-quant equivalence report");
  verify->add_option("--checkpoint", checkpoint, "Stage-2 checkpoint")->required();
  verify->add_option("--fused", fused_path, "Fused model (compiled afresh when omitted)");
  verify->add_option("--dataset", dataset, "Directory with IDX files");
  verify->add_option("--synthetic", synthetic, "Verify on N generated digits");
  verify->add_option("--seed", seed, "Seed for generated digits");
  verify->add_option("--batch", verify_batch, "Batch size");

  stq::GradCheckOptions gc;
  bool inject_fault = false;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  gradcheck->add_option("--points", gc.points, "Random points per suite");
  gradcheck->add_option("--seed", gc.seed, "Sampling seed");
  gradcheck->add_flag("--inject-fault", inject_fault)->group("");

  std::string csv_path;
  std::string jsonl_path;
  CLI::App* export_metrics =
      app.add_subcommand("export-metrics", "Per-epoch metrics as CSV and JSON lines");
  export_metrics->add_option("--checkpoint", checkpoint, "Checkpoint with history")->required();
  export_metrics->add_option("--out", out, "Output directory (metrics.csv, metrics.jsonl)");
  export_metrics->add_option("--csv", csv_path, "CSV path");
  export_metrics->add_option("--jsonl", jsonl_path, "JSON-lines path");

  std::size_t train_count = 2000;
  std::size_t test_count = 1000;
  CLI::App* digits = app.add_subcommand("make-digits", "Write a generated digit set as IDX");
  digits->add_option("--train", train_count, "Training records");
  digits->add_option("--test", test_count, "Test records");
  digits->add_option("--seed", seed, "Generator seed");
  digits->add_option("--out", out, "Output directory")->required();

  CLI::App* list = app.add_subcommand("presets", "List hyperparameter presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("invalid_arguments", e.what());
  }

  try {
    if (*train) return run_train(ta);
    if (*eval) {
      stq::require(!checkpoint.empty() || !fused_path.empty(), stq::ErrorCode::kInvalidArgument,
                   "eval: --checkpoint or --fused is required");
      return run_eval(checkpoint, fused_path, dataset, synthetic, seed, split);
    }
    if (*fuse) {
      const stq::FusedModel f = stq::compile(stq::load_checkpoint(checkpoint));
      stq::save_fused(out, f);
      json layers = json::array();
      for (const stq::FusedLayer& l : f.layers) layers.push_back(l.name);
      const stq::MultiplyCount m = stq::count_multiplies(f);
      print_json(json{{"fused", out}, {"layers", layers}, {"integer_macs", m.macs},
                      {"requant_multiplies", m.requant}});
      return 0;
    }
    if (*verify) {
      stq::Model model = stq::restore_model(stq::load_checkpoint(checkpoint));
      model.set_weight_quantization(true);
      const stq::FusedModel f =
          fused_path.empty() ? stq::compile(model) : stq::load_fused(fused_path);
      const stq::Dataset data = dataset_for(dataset, synthetic, seed, true);
      const std::uint64_t st_before = stq::st_invocation_count();
      const stq::EquivalenceReport r = stq::equivalence_report(model, f, data.images, verify_batch);
      json per_layer = json::array();
      json end_to_end = json::array();
      for (const auto& e : r.per_layer) per_layer.push_back(layer_report_json(e));
      for (const auto& e : r.end_to_end) end_to_end.push_back(layer_report_json(e));
      print_json(json{{"samples", r.samples},
                      {"activations", r.activations},
                      {"hard_mismatches", r.hard_mismatches},
                      {"ties", r.ties},
                      {"tie_fraction", r.tie_fraction()},
                      {"max_int_deviation", r.max_int_deviation},
                      {"max_logit_deviation", r.max_logit_deviation},
                      {"prediction_mismatches", r.prediction_mismatches},
                      {"st_invocations", stq::st_invocation_count() - st_before},
                      {"per_layer", per_layer},
                      {"end_to_end", end_to_end},
                      {"passed", r.passed()}});
      return r.passed() ? 0 : 1;
    }
    if (*gradcheck) {
      stq::debug::set_quantizer_backward_fault(inject_fault);
      const auto results = stq::run_gradcheck_suite(gc);
      bool ok = true;
      json suites = json::array();
      for (const auto& r : results) {
        ok = ok && r.passed;
        suites.push_back(json{{"suite", r.name},
                              {"points", r.points},
                              {"max_relative_error", r.max_relative_error},
                              {"passed", r.passed}});
      }
      print_json(json{{"suites", suites}, {"passed", ok}});
      return ok ? 0 : 1;
    }
    if (*export_metrics) {
      const stq::Checkpoint ckpt = stq::load_checkpoint(checkpoint);
      stq::require(!out.empty() || !csv_path.empty() || !jsonl_path.empty(),
                   stq::ErrorCode::kInvalidArgument,
                   "export-metrics: give --out or --csv/--jsonl");
      if (!out.empty()) {
        fs::create_directories(out);
        if (csv_path.empty()) csv_path = (fs::path(out) / "metrics.csv").string();
        if (jsonl_path.empty()) jsonl_path = (fs::path(out) / "metrics.jsonl").string();
      }
      if (!csv_path.empty()) stq::write_text_file(csv_path, stq::metrics_csv(ckpt.history));
      if (!jsonl_path.empty()) stq::write_text_file(jsonl_path, stq::metrics_jsonl(ckpt.history));
      print_json(json{{"epochs", ckpt.history.size()}, {"csv", csv_path}, {"jsonl", jsonl_path}});
      return 0;
    }
    if (*digits) {
      fs::create_directories(out);
      const auto s = static_cast<std::uint64_t>(seed);
      const stq::Dataset tr = stq::make_digits(train_count, s);
      const stq::Dataset te = stq::make_digits(test_count, s + 7919);
      const fs::path dir = out;
      stq::write_idx(dir / kTrainImages, dir / kTrainLabels, tr);
      stq::write_idx(dir / kTestImages, dir / kTestLabels, te);
      print_json(json{{"out", out}, {"train", train_count}, {"test", test_count}});
      return 0;
    }
    if (*list) {
      json arr = json::array();
      for (const stq::Preset& p : stq::presets()) {
        arr.push_back(json{{"name", p.name},
                           {"description", p.description},
                           {"lr", {p.stage1.lr, p.stage2.lr}},
                           {"weight_decay", {p.stage1.weight_decay, p.stage2.weight_decay}},
                           {"bits", p.stage1.act_bits}});
      }
      print_json(arr);
      return 0;
    }
  } catch (const stq::Error& e) {
    return report_error(std::string(stq::to_string(e.code())), e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
  return 0;
}
