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

#include "lhgm/train.h"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "gradient_cases.h"
#include "test_util.h"

namespace lhgm {
namespace {

using testing::ConstantImage;
using testing::NoiseImage;

ModelConfig MicroConfig() {
  ModelConfig c;
  c.main_channels = 4;
  c.hyper_channels = 4;
  c.latent_channels = 2;
  c.hyper_latent_channels = 2;
  return c;
}

TrainConfig QuickConfig() {
  TrainConfig c;
  c.model = MicroConfig();
  c.steps = 6;
  c.warmup_steps = 3;
  c.lr_switch_step = 4;
  c.batch = 2;
  c.patch = 16;
  c.log_every = 1;
  c.seed = 11;
  return c;
}

TEST(LambdaScheduleTest, WarmThenZero) {
  TrainConfig c;
  c.warmup_steps = 100;
  c.lambda_warm = 0.6;
  EXPECT_EQ(LambdaSchedule(0, c), 0.6);
  EXPECT_EQ(LambdaSchedule(99, c), 0.6);
  EXPECT_EQ(LambdaSchedule(100, c), 0.0);
  EXPECT_EQ(LambdaSchedule(5000, c), 0.0);
}

TEST(LearningRateTest, SwitchesOnce) {
  TrainConfig c;
  EXPECT_EQ(LearningRate(0, c), c.lr_initial);
  EXPECT_EQ(LearningRate(c.lr_switch_step - 1, c), c.lr_initial);
  EXPECT_EQ(LearningRate(c.lr_switch_step, c), c.lr_final);
}

TEST(TrainConfigTest, KeyValueRoundTripAndErrors) {
  TrainConfig c = QuickConfig();
  c.lambda_warm = 0.125;
  c.model.context_model = false;
  KeyValueReader reader(ParseKeyValues(FormatKeyValues(c.ToKeyValues())));
  const TrainConfig back = TrainConfig::FromReader(reader);
  reader.CheckAllConsumed();
  EXPECT_EQ(back.ToKeyValues(), c.ToKeyValues());

  KeyValueReader bad(ParseKeyValues("steps = 10\nbogus = 1\n"));
  TrainConfig::FromReader(bad);
  EXPECT_THROW(bad.CheckAllConsumed(), ConfigError);
  KeyValueReader odd_patch(ParseKeyValues("patch = 20\n"));
  EXPECT_THROW(TrainConfig::FromReader(odd_patch), ConfigError);
  KeyValueReader bad_lr(ParseKeyValues("lr_initial = 0\n"));
  EXPECT_THROW(TrainConfig::FromReader(bad_lr), ConfigError);
}

// Hand recursion: m = 0.1 g, v = 0.001 g^2, bias corrections 0.1 and 0.001.
TEST(TrainConfigTest, ShippedConfigsParse) {
  const std::string dir = testing::SourceDir() + "/configs/";
  EXPECT_EQ(TrainConfig::FromFile(dir + "desk.cfg").ToKeyValues(),
            DeskTrainConfig().ToKeyValues());
  const TrainConfig reference = TrainConfig::FromFile(dir + "reference.cfg");
  EXPECT_EQ(reference.patch, 128);
  EXPECT_EQ(reference.lr_initial, 1e-4);
  EXPECT_EQ(reference.lr_final, 1e-5);
  EXPECT_EQ(reference.steps - reference.lr_switch_step, 80000);
  EXPECT_EQ(reference.warmup_steps, 80000);
  EXPECT_EQ(reference.model.mixtures, 3);
}

TEST(AdamTest, FirstStepMatchesHandRecursion) {
  Tensor w(Shape{1}, 2.0, true);
  Tensor loss = ReduceSum(w);  // gradient 1
  Backward(loss);
  AdamState state;
  Tensor* params[] = {&w};
  ASSERT_TRUE(AdamStep(params, state, 0.1));
  EXPECT_DOUBLE_EQ(w[0], 2.0 - 0.1 * 1.0 / (1.0 + 1e-8));
  EXPECT_EQ(state.t, 1);
}

TEST(AdamTest, MatchesRecursionOverSeveralSteps) {
  const double grads[] = {0.5, -1.5, 2.0, 0.25, -0.75};
  Tensor w(Shape{1}, 0.0, true);
  AdamState state;
  Tensor* params[] = {&w};
  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 5; ++t) {
    w.ZeroGrad();
    Backward(MulScalar(ReduceSum(w), grads[t - 1]));
    ASSERT_TRUE(AdamStep(params, state, 0.01));
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(w[0], x, 1e-15);
  }
}

TEST(AdamTest, ZeroGradientLeavesParameterUnchanged) {
  Tensor w(Shape{3}, 1.5, true);
  Backward(MulScalar(ReduceSum(w), 0.0));
  AdamState state;
  Tensor* params[] = {&w};
  AdamStep(params, state, 0.1);
  for (double v : w.data()) EXPECT_EQ(v, 1.5);
}

TEST(AdamTest, NonFiniteGradientSkipsTheWholeStep) {
  Tensor a(Shape{2}, 1.0, true), b(Shape{1}, 1.0, true);
  Backward(Add(ReduceSum(a), MulScalar(ReduceSum(b), std::nan(""))));
  AdamState state;
  Tensor* params[] = {&a, &b};
  EXPECT_FALSE(AdamStep(params, state, 0.1));
  EXPECT_EQ(state.skipped, 1);
  EXPECT_EQ(state.t, 0);
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(b[0], 1.0);
}

TEST(PatchTest, WholeImageWhenPatchEqualsSize) {
  const RgbImage img = NoiseImage(8, 8, 3);
  Rng rng(1);
  const Tensor p = SamplePatches({img}, 8, 1, rng, nullptr);
  EXPECT_EQ(p.shape(), (Shape{1, 3, 8, 8}));
  const Tensor full = ImageToTensor(img);
  for (size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], full[i]);
}

TEST(PatchTest, CropsAreInRangeReproducibleAndSkipSmallImages) {
  const std::vector<RgbImage> corpus = {NoiseImage(40, 24, 1),
                                        NoiseImage(8, 8, 2),
                                        NoiseImage(17, 30, 3)};
  std::ostringstream warnings;
  const PatchSampler sampler(corpus, 16, &warnings);
  EXPECT_EQ(sampler.usable(), 2u);
  EXPECT_NE(warnings.str().find("8x8"), std::string::npos);
  Rng r1(5), r2(5);
  for (int i = 0; i < 20; ++i) {
    const Tensor a = sampler.Sample(3, r1);
    const Tensor b = sampler.Sample(3, r2);
    for (size_t j = 0; j < a.size(); ++j) {
      ASSERT_EQ(a[j], b[j]);
      ASSERT_GE(a[j], 0.0);
      ASSERT_LE(a[j], 255.0);
      ASSERT_EQ(a[j], std::floor(a[j]));
    }
  }
  EXPECT_THROW(PatchSampler({NoiseImage(8, 8, 2)}, 16, nullptr),
               std::invalid_argument);
}

TEST(PatchTest, CropIsACopyOfTheSource) {
  const RgbImage img = NoiseImage(20, 20, 9);
  Rng rng(3);
  const Tensor p = SamplePatches({img}, 4, 1, rng, nullptr);
  // Locate the crop origin by brute force and verify every sub-pixel.
  bool found = false;
  for (int y0 = 0; y0 <= 16 && !found; ++y0) {
    for (int x0 = 0; x0 <= 16 && !found; ++x0) {
      bool match = true;
      for (int c = 0; c < 3 && match; ++c)
        for (int r = 0; r < 4 && match; ++r)
          for (int col = 0; col < 4 && match; ++col)
            match = p[(c * 4 + r) * 4 + col] == img.at(x0 + col, y0 + r, c);
      found = match;
    }
  }
  EXPECT_TRUE(found);
}

class LossTest : public ::testing::Test {
 protected:
  LossTest() : model_(MicroConfig(), 21), x_(Shape{2, 3, 16, 16}) {
    Rng rng(22);
    for (double& v : x_.mutable_data()) v = rng.Below(256);
    Rng noise(23);
    out_ = model_.Forward(x_, Mode::kTrain, &noise);
  }
  Model model_;
  Tensor x_;
  ForwardOutputs out_;
};

TEST_F(LossTest, TotalIsTheComposition) {
  const LossBreakdown l = ComputeLoss(model_, out_, x_, 0.6);
  const double expected =
      ((l.rate_x + l.rate_y) + l.rate_z) + 0.6 * (l.l2_x + l.l2_y);
  EXPECT_EQ(l.total.item(), expected);
  const LossBreakdown cold = ComputeLoss(model_, out_, x_, 0.0);
  EXPECT_EQ(cold.total.item(), (cold.rate_x + cold.rate_y) + cold.rate_z);
  EXPECT_EQ(cold.l2_x, l.l2_x);
  EXPECT_EQ(cold.lambda, 0.0);
}

TEST_F(LossTest, ComponentsMatchIndependentRecomputation) {
  const LossBreakdown l = ComputeLoss(model_, out_, x_, 0.6);
  const double subpixels = 2 * 3 * 16 * 16;
  double bits_x = 0.0;
  std::vector<double> w(3), mu(3), s(3);
  for (int64_t e = 0; e < out_.x_params.num_elements(); ++e) {
    out_.x_params.Element(e, w, mu, s);
    bits_x += BitsFromProb(MixtureProb(w, mu, s, static_cast<int>(x_[e]),
                                       kPixelAlphabet));
  }
  EXPECT_NEAR(l.rate_x, bits_x / subpixels, 1e-9);
  double l2 = 0.0;
  const Tensor mean = out_.x_params.WeightedMean();
  for (size_t i = 0; i < x_.size(); ++i) {
    l2 += (mean[i] - x_[i]) * (mean[i] - x_[i]);
  }
  EXPECT_NEAR(l.l2_x, l2 / subpixels, 1e-9 * l.l2_x);
  EXPECT_TRUE(std::isfinite(l.rate_y));
  EXPECT_TRUE(std::isfinite(l.rate_z));
  EXPECT_GT(l.rate_z, 0.0);
}

// A 256-component mixture with one narrow component per pixel value is a
// flat pmf over the pixel alphabet: 8 bits per sub-pixel.
TEST_F(LossTest, UniformPixelModelCostsEightBits) {
  const int K = 256;
  const Shape shape{2, K, 3, 16, 16};
  MixtureParams flat;
  flat.K = K;
  flat.weights = Tensor(shape, 1.0 / K);
  flat.means = Tensor(shape);
  flat.scales = Tensor(shape, 1e-3);
  for (int64_t e = 0; e < 2 * 3 * 16 * 16; ++e) {
    for (int k = 0; k < K; ++k) flat.means.mutable_data()[flat.Offset(e, k)] = k;
  }
  ForwardOutputs out = out_;
  out.x_params = flat;
  const LossBreakdown l = ComputeLoss(model_, out, x_, 0.0);
  EXPECT_NEAR(l.rate_x, 8.0, 1e-9);
}

TEST_F(LossTest, PerfectMeansGiveZeroL2) {
  ForwardOutputs out = out_;
  out.x_params.means = Tensor(out.x_params.means.shape());
  auto md = out.x_params.means.mutable_data();
  const int K = out.x_params.K;
  for (int64_t e = 0; e < out.x_params.num_elements(); ++e) {
    for (int k = 0; k < K; ++k) md[out.x_params.Offset(e, k)] = x_[e];
  }
  out.y_params.means = Tensor(out.y_params.means.shape());
  auto yd = out.y_params.means.mutable_data();
  for (int64_t e = 0; e < out.y_params.num_elements(); ++e) {
    for (int k = 0; k < K; ++k) {
      yd[out.y_params.Offset(e, k)] = out.y_hat[e];
    }
  }
  const LossBreakdown l = ComputeLoss(model_, out, x_, 0.6);
  EXPECT_NEAR(l.l2_x, 0.0, 1e-20);
  EXPECT_NEAR(l.l2_y, 0.0, 1e-20);
}

// With lambda = 0 the gradient is exactly the rate gradient.
TEST_F(LossTest, ZeroLambdaGradientIsRateOnly) {
  std::vector<Tensor*> params;
  for (auto& [name, t] : model_.Parameters()) {
    t->set_requires_grad(true);
    params.push_back(t);
  }
  auto grads = [&](bool rate_only) {
    for (Tensor* p : params) p->ZeroGrad();
    Rng noise(23);
    const ForwardOutputs out = model_.Forward(x_, Mode::kTrain, &noise);
    if (rate_only) {
      const double inv = 1.0 / NumElements(x_.shape());
      const Tensor rate = Add(
          Add(MulScalar(MixtureRateBits(out.x_params, x_, kPixelAlphabet), inv),
              MulScalar(MixtureRateBits(out.y_params, out.y_hat, std::nullopt),
                        inv)),
          MulScalar(model_.prior().RateBits(out.z_hat, std::nullopt), inv));
      Backward(rate);
    } else {
      Backward(ComputeLoss(model_, out, x_, 0.0).total);
    }
    std::vector<std::vector<double>> g;
    for (Tensor* p : params) g.emplace_back(p->grad().begin(), p->grad().end());
    return g;
  };
  EXPECT_EQ(grads(false), grads(true));
  for (Tensor* p : params) {
    p->ZeroGrad();
    p->set_requires_grad(false);
  }
}

TEST(LossGradientTest, FullLossMatchesFiniteDifferences) {
  for (const auto& c : testing::LossGradientCases()) {
    for (uint64_t trial = 0; trial < 20; ++trial) {
      Rng rng(1000 + trial);
      auto [f, inputs] = c.make(rng);
      EXPECT_LT(testing::MaxDirectionalGradientError(f, inputs, trial), 1e-4)
          << c.name << " trial " << trial;
    }
  }
}

TEST(TrainLoopTest, MetricsLogIsParseableAndMonotone) {
  const std::vector<RgbImage> corpus = {NoiseImage(24, 24, 1),
                                        ConstantImage(16, 16, 9, 9, 9)};
  std::ostringstream metrics;
  TrainOptions options;
  options.metrics = &metrics;
  const TrainResult r = TrainLoop(QuickConfig(), corpus, options);
  std::istringstream in(metrics.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, MetricsHeader());
  int64_t previous = -1;
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<double> fields;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) fields.push_back(std::stod(cell));
    ASSERT_EQ(fields.size(), 10u) << line;
    EXPECT_EQ(fields[0], 11.0);  // seed
    EXPECT_GT(fields[1], previous);
    previous = static_cast<int64_t>(fields[1]);
    EXPECT_EQ(fields[7], previous < 3 ? 0.6 : 0.0);
    ++rows;
  }
  EXPECT_EQ(rows, 6);
  EXPECT_EQ(r.records.size(), 6u);
  EXPECT_EQ(r.skipped_steps, 0);
}

TEST(TrainLoopTest, BitwiseReproducible) {
  const std::vector<RgbImage> corpus = {NoiseImage(32, 32, 4)};
  const TrainResult a = TrainLoop(QuickConfig(), corpus);
  const TrainResult b = TrainLoop(QuickConfig(), corpus);
  EXPECT_EQ(SerializeWeights(a.model), SerializeWeights(b.model));
  TrainConfig other = QuickConfig();
  other.seed = 12;
  EXPECT_NE(SerializeWeights(TrainLoop(other, corpus).model),
            SerializeWeights(a.model));
}

TEST(TrainLoopTest, WritesCheckpoints) {
  const std::string path = testing::TempDir("train") + "/ckpt.lhgw";
  TrainConfig c = QuickConfig();
  c.checkpoint_every = 2;
  TrainOptions options;
  options.checkpoint_path = path;
  const TrainResult r = TrainLoop(c, {NoiseImage(16, 16, 5)}, options);
  EXPECT_EQ(SerializeWeights(LoadWeights(path)), SerializeWeights(r.model));
}

TEST(TrainLoopTest, LearningReducesRateOnConstantImages) {
  TrainConfig c = QuickConfig();
  c.steps = 150;
  c.warmup_steps = 20;
  c.lr_initial = 3e-3;
  c.lr_switch_step = 150;
  const std::vector<RgbImage> corpus = {ConstantImage(16, 16, 40, 90, 200)};
  const TrainResult r = TrainLoop(c, corpus);
  ASSERT_GE(r.records.size(), 2u);
  EXPECT_LT(r.records.back().rate_x, 0.5 * r.records.front().rate_x);
}

}  // namespace
}  // namespace lhgm
