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

#include <filesystem>
#include <fstream>
#include <random>

#include "stq/archive.hpp"
#include "stq/checkpoint.hpp"
#include "stq/config.hpp"
#include "stq/digits.hpp"
#include "stq/idx.hpp"
#include "stq/metrics.hpp"
#include "stq/presets.hpp"
#include "stq/train.hpp"
#include "test_support.hpp"

#ifndef STQ_TEST_DATA_DIR
#error "STQ_TEST_DATA_DIR must point at tests/data"
#endif

namespace stq {
namespace {

namespace fs = std::filesystem;

const fs::path kFixtureDir = fs::path(STQ_TEST_DATA_DIR) / "idx4";

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an stq::Error";
  return ErrorCode::kInvalidArgument;
}

TEST(Idx, FixtureBytesMatchWriterOracle) {
  EXPECT_EQ(read_file_bytes(kFixtureDir / "train-images-idx3-ubyte"),
            testing::fixture_image_bytes());
  EXPECT_EQ(read_file_bytes(kFixtureDir / "train-labels-idx1-ubyte"),
            testing::fixture_label_bytes());
}

TEST(Idx, LoadsFixture) {
  const Dataset d =
      load_idx(kFixtureDir / "train-images-idx3-ubyte", kFixtureDir / "train-labels-idx1-ubyte");
  EXPECT_EQ(d.images.shape(), (Shape{4, 28, 28, 1}));
  EXPECT_EQ(d.labels, (std::vector<int>{7, 2, 1, 0}));
  EXPECT_EQ(d.images(2, 5, 9, 0), testing::fixture_pixel(2, 5, 9) / 255.0);
  for (double v : d.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Idx, EncodersMatchOracle) {
  std::vector<std::uint8_t> pixels;
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c) pixels.push_back(testing::fixture_pixel(n, r, c));
  EXPECT_EQ(encode_idx_images(pixels, 4, 28, 28), testing::fixture_image_bytes());
  EXPECT_EQ(encode_idx_labels({7, 2, 1, 0}), testing::fixture_label_bytes());
}

TEST(Idx, StructuredErrors) {
  auto images = testing::fixture_image_bytes();
  auto labels = testing::fixture_label_bytes();
  auto bad_magic = images;
  bad_magic[3] = 0x01;
  EXPECT_EQ(code_of([&] { parse_idx(bad_magic, labels); }), ErrorCode::kFormat);
  auto truncated = images;
  truncated.pop_back();
  EXPECT_EQ(code_of([&] { parse_idx(truncated, labels); }), ErrorCode::kFormat);
  const auto three = encode_idx_labels({7, 2, 1});
  EXPECT_EQ(code_of([&] { parse_idx(images, three); }), ErrorCode::kFormat);
  const auto out_of_range = encode_idx_labels({7, 2, 1, 10});
  EXPECT_EQ(code_of([&] { parse_idx(images, out_of_range); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([&] { load_idx("/nonexistent/a", "/nonexistent/b"); }), ErrorCode::kIo);
}

TEST(Idx, EmptyFileParsesAndTrainingRejectsIt) {
  const Dataset d = parse_idx(encode_idx_images({}, 0, 28, 28), encode_idx_labels({}));
  EXPECT_EQ(d.size(), 0u);
  ReferenceArch arch;
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_stage(arch, cfg, d, nullptr), Error);
}

TEST(Idx, WriteReadRoundTrip) {
  const Dataset d = make_digits(12, 3);
  const fs::path dir = testing::temp_dir("idx");
  write_idx(dir / "i", dir / "l", d);
  const Dataset back = load_idx(dir / "i", dir / "l");
  EXPECT_EQ(back.labels, d.labels);
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    EXPECT_NEAR(back.images[i], d.images[i], 0.5 / 255.0 + 1e-12);
  }
  fs::remove_all(dir);
}

TEST(Digits, DeterministicAndBalanced) {
  const Dataset a = make_digits(40, 9);
  const Dataset b = make_digits(40, 9);
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(make_digits(40, 10).images, a.images);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.labels[i], static_cast<int>(i % 10));
}

Checkpoint small_checkpoint() {
  ReferenceArch arch;
  arch.input_h = arch.input_w = 8;
  arch.channels = {3, 4, 4};
  arch.strides = {1, 2, 1};
  arch.act_bits = arch.weight_bits = 3;
  Model m = Model::build(reference_cnn_specs(arch), arch.input_shape(), 5);
  Checkpoint c = capture(m);
  c.epoch = 4;
  c.stage = 2;
  c.seed = 5;
  c.config_digest = 0x1234;
  c.history.push_back(EpochMetrics{0, 0.1, 1.0, 2.3, 11.0, {{"aq2", 0.25}, {"aq3", 0.5}}});
  c.optimizer["conv1.weight"] = Tensor(c.tensors.at("conv1.weight").shape(), 0.125);
  return c;
}

TEST(Checkpoint, RoundTripIsBitwiseStable) {
  const Checkpoint c = small_checkpoint();
  const fs::path dir = testing::temp_dir("ckpt");
  save_checkpoint(dir / "a.ckpt", c);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back, c);
  save_checkpoint(dir / "b.ckpt", back);
  EXPECT_EQ(read_file_bytes(dir / "a.ckpt"), read_file_bytes(dir / "b.ckpt"));
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsRejected) {
  const std::vector<std::uint8_t> bytes = serialize(to_archive(small_checkpoint()));
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] ^= 0x40;
    EXPECT_THROW(deserialize(bad, kCheckpointMagic, kCheckpointVersion), Error) << pos;
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  EXPECT_THROW(deserialize(truncated, kCheckpointMagic, kCheckpointVersion), Error);
  EXPECT_EQ(code_of([&] { deserialize(bytes, kCheckpointMagic, kCheckpointVersion + 1); }),
            ErrorCode::kVersion);
  Archive::Magic other = kCheckpointMagic;
  other[0] = 'X';
  EXPECT_EQ(code_of([&] { deserialize(bytes, other, kCheckpointVersion); }), ErrorCode::kFormat);
}

TEST(Checkpoint, ChecksumByteFlipReportsChecksum) {
  auto bytes = serialize(to_archive(small_checkpoint()));
  bytes.back() ^= 0x01;
  EXPECT_EQ(code_of([&] { deserialize(bytes, kCheckpointMagic, kCheckpointVersion); }),
            ErrorCode::kChecksum);
}

TEST(Checkpoint, MissingTensorIsAnError) {
  Checkpoint c = small_checkpoint();
  c.tensors.erase("bn1.gamma");
  EXPECT_EQ(code_of([&] { restore_model(c); }), ErrorCode::kMissingTensor);
}

TEST(Config, ParsesSectionsOverPreset) {
  const RunConfig rc = parse_run_config(
      "[run]\npreset = desk-2bit\nfloat_epochs = 3\n"
      "[model]\nst_reduction = 2\n"
      "[train]\nepochs = 4\n"
      "[stage2]\nlr = 0.005\n");
  EXPECT_EQ(rc.preset, "desk-2bit");
  EXPECT_EQ(rc.float_epochs, 3);
  EXPECT_EQ(rc.arch().st_reduction, 2u);
  EXPECT_EQ(rc.stage1.epochs, 4);
  EXPECT_EQ(rc.stage2.epochs, 4);
  EXPECT_EQ(rc.stage2.lr, 0.005);
  EXPECT_EQ(rc.stage1.lr, find_preset("desk-2bit").stage1.lr);
  EXPECT_EQ(rc.stage1.act_bits, 2);
  EXPECT_EQ(rc.stage2.stage, 2);
}

TEST(Config, RejectsUnknownKeysAndSections) {
  EXPECT_EQ(code_of([] { parse_run_config("[train]\nlearning_rate = 0.1\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { parse_run_config("[optimizer]\nlr = 0.1\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { parse_run_config("[train]\nepochs = many\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { parse_run_config("[run]\npreset = nope\n"); }), ErrorCode::kConfig);
}

TEST(Presets, HyperparametersOfNamedRecipes) {
  const Preset& b4 = find_preset("appendixB-4bit");
  EXPECT_EQ(b4.stage1.lr, 0.025);
  EXPECT_EQ(b4.stage1.weight_decay, 1e-5);
  EXPECT_EQ(b4.stage1.label_smoothing, 0.1);
  EXPECT_EQ(b4.stage2.stage, 2);
  const Preset& a2 = find_preset("appendixA-2bit");
  EXPECT_EQ(a2.stage1.epochs, 90);
  EXPECT_EQ(a2.stage1.batch_size, 256u);
  EXPECT_EQ(a2.stage1.lr_min, 1e-4);
  EXPECT_EQ(a2.stage1.m_min, 0.1);
  for (const Preset& p : presets()) {
    EXPECT_NO_THROW(p.stage1.validate()) << p.name;
    EXPECT_NO_THROW(p.stage2.validate()) << p.name;
  }
}

TEST(Metrics, FixedColumns) {
  const std::vector<EpochMetrics> h{{0, 0.1, 1.0, 2.5, 10.0, {{"aq2", 0.5}}},
                                    {1, 0.05, 0.9, 1.5, 50.0, {{"aq2", 0.25}}}};
  const std::string csv = metrics_csv(h);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,lr,momentum,loss,top1,thr_aq2");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  const std::string jsonl = metrics_jsonl(h);
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 2);
  EXPECT_NE(jsonl.find("\"mean_threshold\""), std::string::npos);
}

}  // namespace
}  // namespace stq
