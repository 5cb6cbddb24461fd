/* Copyright 2026 The RFCN Authors. All Rights Reserved.

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

#include <cstdlib>
#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>

#include "rfcn/checkpoint.hpp"
#include "rfcn/cli.hpp"
#include "rfcn/data.hpp"
#include "rfcn/io.hpp"
#include "rfcn/model.hpp"

namespace fs = std::filesystem;

namespace rfcn {
namespace {

const std::string kImages = RFCN_DATA_DIR "/mnist-5k/images-idx3-ubyte";
const std::string kLabels = RFCN_DATA_DIR "/mnist-5k/labels-idx1-ubyte";

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rfcn");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("rfcn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  CliRun gen(const std::string& out, std::size_t n, std::size_t T, std::size_t test = 0, std::uint64_t seed = 5) {
    return cli({"gen-data", "--mnist-images", kImages, "--mnist-labels", kLabels, "--out", path(out), "--sequences",
                std::to_string(n), "--test-sequences", std::to_string(test), "--length", std::to_string(T), "--seed",
                std::to_string(seed)});
  }

  fs::path dir_;
};

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path().string());
  return files;
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({"preset", "no-such-preset"}).code, kExitUsage);
  EXPECT_EQ(cli({"train", "--arch", "no-such-preset", "--data", path("m.json"), "--out", path("x")}).code, kExitUsage);
  EXPECT_FALSE(fs::exists(path("x")));
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST_F(CliTest, PresetRoundTripsThroughJson) {
  const CliRun r = cli({"preset", "rfc-lenet", "--out", path("a.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(load_config_file(path("a.json")), preset("rfc-lenet"));
  const CliRun shapes = cli({"preset", "rfc-lenet", "--shapes"});
  EXPECT_EQ(shapes.code, kExitOk);
  EXPECT_NE(shapes.out.find("784"), std::string::npos);
}

TEST_F(CliTest, GenDataZeroSequencesGivesEmptyManifest) {
  ASSERT_EQ(gen("d", 0, 3).code, kExitOk);
  const Manifest m = load_manifest(path("d/manifest.json"));
  EXPECT_TRUE(m.sequences.empty());
}

TEST_F(CliTest, GenDataCountsAndDeterminism) {
  ASSERT_EQ(gen("a", 10, 20).code, kExitOk);
  ASSERT_EQ(gen("b", 10, 20).code, kExitOk);
  const Manifest m = load_manifest(path("a/manifest.json"));
  ASSERT_EQ(m.sequences.size(), 10u);
  for (const auto& e : m.sequences) EXPECT_EQ(e.length, 20u);
  EXPECT_EQ(fs::path(path("a/train_000003/frames")).filename(), "frames");
  EXPECT_EQ(tree(path("a")), tree(path("b")));
  // Rerunning into the same directory rewrites it identically.
  const auto before = tree(path("a"));
  ASSERT_EQ(gen("a", 10, 20).code, kExitOk);
  EXPECT_EQ(tree(path("a")), before);
  EXPECT_FALSE(fs::exists(path("a.partial")));
}

TEST_F(CliTest, GenDataRefusesForeignDirectoryAndBadIdx) {
  fs::create_directories(path("mine"));
  write_file_atomic(path("mine/keep.txt"), "x");
  EXPECT_EQ(gen("mine", 1, 3).code, kExitUsage);
  EXPECT_TRUE(fs::exists(path("mine/keep.txt")));
  write_file_atomic(path("bad.idx"), "nope");
  const CliRun r = cli({"gen-data", "--mnist-images", path("bad.idx"), "--mnist-labels", kLabels, "--out", path("o"),
                     "--sequences", "1", "--length", "3"});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_FALSE(fs::exists(path("o")));
}

TEST_F(CliTest, TrainZeroEpochsSavesInitialisation) {
  ASSERT_EQ(gen("d", 4, 4).code, kExitOk);
  const CliRun r = cli({"train", "--arch", "rfc-12s-mnist", "--data", path("d/manifest.json"), "--out", path("m.ckpt"),
                     "--max-epochs", "0", "--seed", "3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  Rng rng(derive_seed(3, 1));
  const Model<float> init = build_model<float>(preset("rfc-12s-mnist"), rng);
  EXPECT_EQ(read_file(path("m.ckpt")), serialize_checkpoint(init));
  EXPECT_EQ(read_file(path("m.ckpt.csv")), "epoch,loss,precision,recall,f_measure,iou\n");
}

TEST_F(CliTest, TrainIsReproducibleAndEmitsRows) {
  ASSERT_EQ(gen("d", 6, 4).code, kExitOk);
  auto train = [&](const std::string& name) {
    return cli({"train", "--arch", "rfc-12s-mnist", "--data", path("d/manifest.json"), "--out", path(name),
                "--max-epochs", "2", "--seed", "8", "--threads", "1"});
  };
  ASSERT_EQ(train("a.ckpt").code, kExitOk);
  ASSERT_EQ(train("b.ckpt").code, kExitOk);
  EXPECT_EQ(read_file(path("a.ckpt")), read_file(path("b.ckpt")));
  const std::string log = read_file(path("a.ckpt.csv"));
  EXPECT_EQ(log, read_file(path("b.ckpt.csv")));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
}

TEST_F(CliTest, TrainConfigFileAndFlagPrecedence) {
  ASSERT_EQ(gen("d", 4, 4).code, kExitOk);
  write_file_atomic(path("t.json"), R"({"max_epochs": 3, "patience": 0})");
  const CliRun r = cli({"train", "--arch", "rfc-12s-mnist", "--data", path("d/manifest.json"), "--config", path("t.json"),
                     "--max-epochs", "1", "--out", path("m.ckpt")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string log = read_file(path("m.ckpt.csv"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);  // header + 1 epoch
  write_file_atomic(path("bad.json"), R"({"max_epoch": 3})");
  EXPECT_EQ(cli({"train", "--arch", "rfc-12s-mnist", "--data", path("d/manifest.json"), "--config", path("bad.json"),
                 "--out", path("n.ckpt")})
                .code,
            kExitUsage);
}

TEST_F(CliTest, TrainDivergenceExitsThree) {
  ASSERT_EQ(gen("d", 4, 4).code, kExitOk);
  const CliRun r = cli({"train", "--arch", "rfc-12s-mnist", "--data", path("d/manifest.json"), "--out", path("m.ckpt"),
                     "--optimizer", "sgd", "--lr", "1e30", "--max-epochs", "3"});
  EXPECT_EQ(r.code, kExitDivergence) << r.err;
  EXPECT_FALSE(fs::exists(path("m.ckpt")));
  EXPECT_TRUE(fs::exists(path("m.ckpt.diverged")));
}

TEST_F(CliTest, EvalOracleScoresOneAndEmptyManifestFails) {
  ASSERT_EQ(gen("d", 3, 4, 2).code, kExitOk);
  const CliRun r = cli({"eval", "--oracle", "--data", path("d/manifest.json"), "--report", path("r.json"), "--per-frame",
                     "--split", "all"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string report = read_file(path("r.json"));
  EXPECT_NE(report.find("\"headline\": \"per_frame_mean\""), std::string::npos);
  EXPECT_NE(r.out.find("precision 1.0000 recall 1.0000 F 1.0000 IoU 1.0000"), std::string::npos);

  ASSERT_EQ(gen("e", 0, 3).code, kExitOk);
  EXPECT_EQ(cli({"eval", "--oracle", "--data", path("e/manifest.json"), "--report", path("e.json")}).code, kExitUsage);
  EXPECT_FALSE(fs::exists(path("e.json")));
}

TEST_F(CliTest, EvalRejectsClassMismatch) {
  ASSERT_EQ(gen("d", 2, 4, 1).code, kExitOk);
  ArchitectureConfig cfg = preset("fc-12s-mnist");
  cfg.num_classes = 3;
  cfg.post_recurrent.back().depth = 3;
  Rng rng(1);
  save_checkpoint(build_model<float>(cfg, rng), path("m.ckpt"));
  EXPECT_EQ(cli({"eval", "--ckpt", path("m.ckpt"), "--data", path("d/manifest.json"), "--report", path("r.json")}).code,
            kExitUsage);
}

class CliPredictTest : public CliTest {
 protected:
  void write_model(bool zero_cell) {
    Rng rng(4);
    Model<float> m = build_model<float>(preset("rfc-12s-mnist"), rng);
    if (zero_cell)
      for (auto& [name, t] : named_tensors(m.params))
        if (name.rfind("rec.", 0) == 0) t->fill(0.0f);
    save_checkpoint(m, path("m.ckpt"));
  }
};

TEST_F(CliPredictTest, WindowArithmetic) {
  ASSERT_EQ(gen("d", 1, 5).code, kExitOk);
  write_model(false);
  const CliRun r = cli({"predict", "--ckpt", path("m.ckpt"), "--frames", path("d/train_000000/frames"), "--out", path("o")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(path("o"))) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, (std::vector<std::string>{"000002.pgm", "000003.pgm", "000004.pgm"}));

  fs::create_directories(path("two"));
  for (const char* f : {"000000.pgm", "000001.pgm"})
    fs::copy_file(path("d/train_000000/frames/") + f, path("two/") + f);
  EXPECT_EQ(cli({"predict", "--ckpt", path("m.ckpt"), "--frames", path("two"), "--out", path("p")}).code, kExitUsage);
  EXPECT_FALSE(fs::exists(path("p")));
}

TEST_F(CliPredictTest, StreamMatchesWindowWhenRecurrentParamsAreZero) {
  ASSERT_EQ(gen("d", 1, 7).code, kExitOk);
  write_model(true);
  const std::string frames = path("d/train_000000/frames");
  ASSERT_EQ(cli({"predict", "--ckpt", path("m.ckpt"), "--frames", frames, "--out", path("w")}).code, kExitOk);
  ASSERT_EQ(cli({"predict", "--ckpt", path("m.ckpt"), "--frames", frames, "--out", path("s"), "--stream"}).code, kExitOk);
  EXPECT_EQ(tree(path("w")), tree(path("s")));
  EXPECT_EQ(tree(path("w")).size(), 5u);
}

TEST_F(CliTest, GradcheckExitCodesAndDeterminism) {
  const CliRun a = cli({"gradcheck", "--arch", "fc-12s-mnist", "--seed", "2"});
  EXPECT_EQ(a.code, kExitOk) << a.out;
  EXPECT_EQ(a.out, cli({"gradcheck", "--arch", "fc-12s-mnist", "--seed", "2"}).out);
  EXPECT_EQ(cli({"gradcheck", "--arch", "fc-12s-mnist", "--corrupt-backward"}).code, kExitVerification);
  EXPECT_EQ(cli({"gradcheck", "--arch", "fc-12s-mnist", "--scale", "huge"}).code, kExitUsage);
}

TEST_F(CliTest, ThreadsFallBackToEnvironment) {
  ASSERT_EQ(gen("d", 2, 4, 1).code, kExitOk);
  ::setenv("RFCN_THREADS", "zero", 1);
  EXPECT_EQ(cli({"eval", "--oracle", "--data", path("d/manifest.json"), "--report", path("r.json")}).code, kExitUsage);
  ::setenv("RFCN_THREADS", "2", 1);
  EXPECT_EQ(cli({"eval", "--oracle", "--data", path("d/manifest.json"), "--report", path("r.json")}).code, kExitOk);
  ::unsetenv("RFCN_THREADS");
}

}  // namespace
}  // namespace rfcn
