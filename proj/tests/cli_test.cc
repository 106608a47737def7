// Copyright 2026 The LHGM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lhgm/cli.h"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "lhgm/image_io.h"
#include "lhgm/model.h"
#include "test_util.h"

namespace lhgm {
namespace {

namespace fs = std::filesystem;
using testing::ConstantImage;
using testing::GradientImage;
using testing::NoiseImage;

std::string Slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void Spit(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

std::vector<std::string> Lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// Runs the installed binary; returns its exit status.
int Lhgm(const std::string& args, const std::string& log = "/dev/null") {
  const std::string cmd = std::string(LHGM_CLI_PATH) + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// In-process entry point, for checking stream output.
int RunInProcess(std::vector<std::string> args, std::string* out, std::string* err) {
  args.insert(args.begin(), "lhgm");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = RunCli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

constexpr char kMicroConfig[] =
    "main_channels = 4\n"
    "hyper_channels = 4\n"
    "latent_channels = 4\n"
    "hyper_latent_channels = 2\n"
    "mixtures = 2\n"
    "steps = 3\n"
    "warmup_steps = 1\n"
    "batch = 2\n"
    "patch = 16\n"
    "lr_initial = 0.001\n"
    "lr_final = 0.0001\n"
    "lr_switch_step = 2\n"
    "log_every = 1\n"
    "checkpoint_every = 0\n";

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::string(testing::TempDir("cli"));
    const std::string corpus = *dir_ + "/corpus";
    fs::create_directories(corpus);
    WriteImage(corpus + "/a.png", GradientImage(32, 32));
    WriteImage(corpus + "/b.ppm", ConstantImage(24, 20, 30, 60, 90));
    WriteImage(corpus + "/c.png", NoiseImage(19, 33, 5));
    Spit(*dir_ + "/micro.cfg", kMicroConfig);
    ModelConfig config = TinyModelConfig();
    SaveWeights(Model(config, 3), *dir_ + "/ctx.weights");
    config.context_model = false;
    SaveWeights(Model(config, 3), *dir_ + "/plain.weights");
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static std::string Path(const std::string& name) { return *dir_ + "/" + name; }

  static std::string* dir_;
};

std::string* CliTest::dir_ = nullptr;

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(Lhgm(""), kExitUsage);
  EXPECT_EQ(Lhgm("frobnicate"), kExitUsage);
  EXPECT_EQ(Lhgm("compress --in x.png"), kExitUsage);
  EXPECT_EQ(Lhgm("eval --weights w --dir d --jobs 0"), kExitUsage);
  EXPECT_EQ(Lhgm("histogram --image x.png --latents q"), kExitUsage);
  EXPECT_EQ(Lhgm("--help"), kExitOk);
}

TEST_F(CliTest, UsageErrorPrintsHelp) {
  std::string out, err;
  EXPECT_EQ(RunInProcess({"nope"}, &out, &err), kExitUsage);
  EXPECT_NE(err.find("compress"), std::string::npos);
  EXPECT_NE(err.find("ablate-warmup"), std::string::npos);
}

TEST_F(CliTest, CompressDecompressRoundTrip) {
  const RgbImage image = GradientImage(21, 13);
  WriteImage(Path("g.ppm"), image);
  for (const char* weights : {"ctx.weights", "plain.weights"}) {
    SCOPED_TRACE(weights);
    const std::string flag = std::string(weights) == "plain.weights" ? " --no-context" : "";
    ASSERT_EQ(Lhgm("compress --weights " + Path(weights) + " --in " + Path("g.ppm") +
                  " --out " + Path("g.lhgm") + flag),
              kExitOk);
    ASSERT_EQ(Lhgm("compress --weights " + Path(weights) + " --in " + Path("g.ppm") +
                  " --out " + Path("g2.lhgm") + flag),
              kExitOk);
    EXPECT_EQ(Slurp(Path("g.lhgm")), Slurp(Path("g2.lhgm")));
    ASSERT_EQ(Lhgm("decompress --weights " + Path(weights) + " --in " + Path("g.lhgm") +
                  " --out " + Path("g_out.png")),
              kExitOk);
    const RgbImage back = ReadImage(Path("g_out.png"));
    EXPECT_EQ(back.width, image.width);
    EXPECT_EQ(back.height, image.height);
    EXPECT_EQ(back.pixels, image.pixels);
  }
}

TEST_F(CliTest, ContextNeedsContextWeights) {
  EXPECT_EQ(Lhgm("compress --weights " + Path("plain.weights") + " --in " +
                Path("corpus/a.png") + " --out " + Path("a.lhgm")),
            kExitUsage);
}

TEST_F(CliTest, DataErrorsExitTwo) {
  EXPECT_EQ(Lhgm("compress --weights " + Path("missing.weights") + " --in " +
                Path("corpus/a.png") + " --out " + Path("a.lhgm")),
            kExitData);
  ASSERT_EQ(Lhgm("compress --weights " + Path("ctx.weights") + " --in " + Path("corpus/a.png") +
                " --out " + Path("a.lhgm")),
            kExitOk);
  std::string bytes = Slurp(Path("a.lhgm"));
  bytes[bytes.size() - 3] ^= 0x10;
  Spit(Path("bad.lhgm"), bytes);
  EXPECT_EQ(Lhgm("decompress --weights " + Path("ctx.weights") + " --in " + Path("bad.lhgm") +
                " --out " + Path("bad.png")),
            kExitData);
  EXPECT_EQ(Lhgm("decompress --weights " + Path("plain.weights") + " --in " + Path("a.lhgm") +
                " --out " + Path("bad.png")),
            kExitData);
  fs::create_directories(Path("empty"));
  EXPECT_EQ(Lhgm("eval --weights " + Path("ctx.weights") + " --dir " + Path("empty")), kExitData);
}

TEST_F(CliTest, EvalReportIsDeterministicAndConsistent) {
  const std::string base = "eval --weights " + Path("ctx.weights") + " --dir " + Path("corpus");
  ASSERT_EQ(Lhgm(base + " --report " + Path("r1.csv")), kExitOk);
  ASSERT_EQ(Lhgm(base + " --report " + Path("r2.csv") + " --jobs 3"), kExitOk);
  const std::string report = Slurp(Path("r1.csv"));
  EXPECT_EQ(report, Slurp(Path("r2.csv")));
  const std::vector<std::string> lines = Lines(report);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0].rfind("image,width,height,subpixels,file_bits", 0), 0u);
  EXPECT_NE(lines[1].find("a.png"), std::string::npos);
  EXPECT_NE(lines[2].find("b.ppm"), std::string::npos);
  EXPECT_EQ(lines[4].rfind("mean,", 0), 0u);

  // Each container on disk has exactly the reported size.
  ASSERT_EQ(Lhgm("compress --weights " + Path("ctx.weights") + " --in " + Path("corpus/b.ppm") +
                " --out " + Path("b.lhgm")),
            kExitOk);
  const std::string file_bits = std::to_string(fs::file_size(Path("b.lhgm")) * 8);
  EXPECT_NE(lines[2].find("," + file_bits + ","), std::string::npos) << lines[2];
}

TEST_F(CliTest, TrainIsDeterministicAndEchoesSeed) {
  const std::string base =
      "train --config " + Path("micro.cfg") + " --corpus " + Path("corpus") + " --seed 11";
  ASSERT_EQ(Lhgm(base + " --out " + Path("t1.weights")), kExitOk);
  ASSERT_EQ(Lhgm(base + " --out " + Path("t2.weights") + " --metrics " + Path("t2.csv")),
            kExitOk);
  EXPECT_EQ(Slurp(Path("t1.weights")), Slurp(Path("t2.weights")));
  const std::string metrics = Slurp(Path("t1.weights.metrics.csv"));
  EXPECT_EQ(metrics, Slurp(Path("t2.csv")));
  const std::vector<std::string> lines = Lines(metrics);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[1].rfind("11,", 0), 0u);

  ASSERT_EQ(Lhgm(base + " --out " + Path("t3.weights") + " --seed 12"), kExitUsage)
      << "--seed given twice";
  ASSERT_EQ(Lhgm("train --config " + Path("micro.cfg") + " --corpus " + Path("corpus") +
                " --seed 12 --out " + Path("t3.weights")),
            kExitOk);
  EXPECT_NE(Slurp(Path("t1.weights")), Slurp(Path("t3.weights")));

  // Trained weights drive the codec.
  EXPECT_EQ(Lhgm("eval --weights " + Path("t1.weights") + " --dir " + Path("corpus") +
                " --report " + Path("t1.csv")),
            kExitOk);
}

TEST_F(CliTest, TrainRejectsBadConfig) {
  Spit(Path("bad.cfg"), std::string(kMicroConfig) + "learning_rate = 3\n");
  EXPECT_EQ(Lhgm("train --config " + Path("bad.cfg") + " --corpus " + Path("corpus") +
                " --out " + Path("x.weights")),
            kExitUsage);
  EXPECT_EQ(Lhgm("train --config " + Path("micro.cfg") + " --corpus " + Path("empty_corpus") +
                " --out " + Path("x.weights")),
            kExitData);
}

TEST_F(CliTest, FitDistRanksFamilies) {
  std::string samples;
  Rng rng(4);
  for (int i = 0; i < 3000; ++i) {
    samples += std::to_string(static_cast<int>(std::lround(2.0 * rng.Normal()))) +
               (i % 10 == 9 ? "\n" : ",");
  }
  Spit(Path("s.txt"), "# gaussian draws\n" + samples);
  ASSERT_EQ(Lhgm("fit-dist --samples " + Path("s.txt") + " --seed 9 --out " + Path("f1.csv")),
            kExitOk);
  ASSERT_EQ(Lhgm("fit-dist --samples " + Path("s.txt") + " --seed 9 --out " + Path("f2.csv")),
            kExitOk);
  const std::string csv = Slurp(Path("f1.csv"));
  EXPECT_EQ(csv, Slurp(Path("f2.csv")));
  const std::vector<std::string> lines = Lines(csv);
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0], "# seed 9");
  EXPECT_EQ(lines[1].rfind("rank,family,K", 0), 0u);

  std::string out;
  ASSERT_EQ(RunInProcess({"fit-dist", "--samples", Path("s.txt"), "--family", "laplace", "--K",
                          "1"},
                         &out, nullptr),
            kExitOk);
  ASSERT_EQ(Lines(out).size(), 3u);
  EXPECT_EQ(Lines(out)[2].rfind("1,laplace,1,", 0), 0u) << out;

  EXPECT_EQ(Lhgm("fit-dist --samples " + Path("s.txt") + " --family laplace --K 3"), kExitUsage);
  EXPECT_EQ(Lhgm("fit-dist --samples " + Path("s.txt") + " --family gamma --K 1"), kExitUsage);
  EXPECT_EQ(Lhgm("fit-dist --family gaussian"), kExitUsage);
  Spit(Path("junk.txt"), "1 2 three\n");
  EXPECT_EQ(Lhgm("fit-dist --samples " + Path("junk.txt")), kExitData);
}

TEST_F(CliTest, HistogramOfPixelsAndLatents) {
  WriteImage(Path("seven.png"), ConstantImage(8, 8, 7, 7, 7));
  std::string out;
  ASSERT_EQ(RunInProcess({"histogram", "--image", Path("seven.png")}, &out, nullptr), kExitOk);
  const std::vector<std::string> lines = Lines(out);
  ASSERT_EQ(lines.size(), 257u);
  EXPECT_EQ(lines[0], "value,count,frequency");
  EXPECT_EQ(lines[8], "7,192,1");

  ASSERT_EQ(Lhgm("histogram --image " + Path("corpus/a.png") + " --latents y --weights " +
                Path("ctx.weights") + " --out " + Path("hy.csv")),
            kExitOk);
  EXPECT_EQ(Lines(Slurp(Path("hy.csv")))[0], "value,count,frequency");
  EXPECT_EQ(Lhgm("histogram --image " + Path("corpus/a.png") + " --latents z"), kExitUsage);
}

TEST_F(CliTest, AblationWritesRunsAndSummary) {
  const std::string base = "ablate-warmup --config " + Path("micro.cfg") + " --corpus " +
                           Path("corpus") + " --seeds 1,2 --steps 4";
  ASSERT_EQ(Lhgm(base + " --out " + Path("ab.csv")), kExitOk);
  ASSERT_EQ(Lhgm(base + " --out " + Path("ab2.csv") + " --summary " + Path("ab2_sum.csv")),
            kExitOk);
  EXPECT_EQ(Slurp(Path("ab.csv")), Slurp(Path("ab2.csv")));
  EXPECT_EQ(Slurp(Path("ab.csv.summary.csv")), Slurp(Path("ab2_sum.csv")));
  const std::vector<std::string> rows = Lines(Slurp(Path("ab.csv")));
  EXPECT_EQ(rows[0], "seed,step,lambda_warm,rate_x,rate_y,rate_z,rate");
  EXPECT_EQ(rows.size(), 1u + 2u * 2u * 3u);
  const std::vector<std::string> summary = Lines(Slurp(Path("ab2_sum.csv")));
  EXPECT_EQ(summary.back().rfind("median,", 0), 0u);
  EXPECT_EQ(Lhgm(base + " --seeds 1,x"), kExitUsage);
}

}  // namespace
}  // namespace lhgm
