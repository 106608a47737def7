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

#include "lhgm/factorized_prior.h"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <string>
#include <numeric>
#include <vector>

#include "lhgm/train.h"

namespace lhgm {
namespace {

void Perturb(FactorizedPrior& prior, Rng& rng, double amount) {
  for (auto& [name, t] : prior.NamedParameters()) {
    for (double& v : t->mutable_data()) v += rng.Uniform(-amount, amount);
  }
}

TEST(FactorizedPriorTest, ParameterNamesAndShapes) {
  FactorizedPrior prior(3, 10.0, 1);
  std::map<std::string, Shape> shapes;
  for (const auto& [name, t] : prior.NamedParameters()) shapes[name] = t->shape();
  ASSERT_EQ(shapes.size(), 11u);
  EXPECT_EQ(shapes.at("prior.matrix0"), (Shape{3, 3, 1}));
  EXPECT_EQ(shapes.at("prior.matrix1"), (Shape{3, 3, 3}));
  EXPECT_EQ(shapes.at("prior.matrix3"), (Shape{3, 1, 3}));
  EXPECT_EQ(shapes.at("prior.bias0"), (Shape{3, 3}));
  EXPECT_EQ(shapes.at("prior.bias3"), (Shape{3, 1}));
  EXPECT_EQ(shapes.at("prior.factor2"), (Shape{3, 3}));
}

TEST(FactorizedPriorTest, CumulativeIsMonotoneWithUnitLimits) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    FactorizedPrior prior(2, 10.0, rng.NextU64());
    Perturb(prior, rng, 1.0);
    for (int c = 0; c < 2; ++c) {
      double previous = 0.0;
      for (double v = -60.0; v <= 60.0; v += 0.25) {
        const double cdf = prior.Cumulative(c, v);
        ASSERT_GE(cdf, previous) << "v=" << v;
        ASSERT_GE(cdf, 0.0);
        ASSERT_LE(cdf, 1.0);
        previous = cdf;
      }
      EXPECT_LT(prior.Cumulative(c, -1e6), 1e-6);
      EXPECT_GT(prior.Cumulative(c, 1e6), 1.0 - 1e-6);
    }
  }
}

TEST(FactorizedPriorTest, PmfNormalizesOverAnyAlphabet) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    FactorizedPrior prior(1, rng.Uniform(0.5, 20.0), rng.NextU64());
    Perturb(prior, rng, 0.5);
    const int lo = -static_cast<int>(rng.Below(40));
    const Alphabet alphabet{lo, lo + static_cast<int>(rng.Below(60))};
    std::vector<double> pmf(alphabet.size());
    prior.Pmf(0, alphabet, pmf);
    const double total = std::accumulate(pmf.begin(), pmf.end(), 0.0);
    ASSERT_NEAR(total, 1.0, 1e-6) << "trial " << trial;
    for (int v = alphabet.lo; v <= alphabet.hi; ++v) {
      ASSERT_GT(pmf[v - alphabet.lo], 0.0);
      ASSERT_EQ(pmf[v - alphabet.lo], prior.Prob(0, v, alphabet));
    }
  }
}

TEST(FactorizedPriorTest, SingleSymbolAlphabetHasProbabilityOne) {
  FactorizedPrior prior(1, 10.0, 4);
  EXPECT_DOUBLE_EQ(prior.Prob(0, 3, Alphabet{3, 3}), 1.0);
}

TEST(FactorizedPriorTest, RateMatchesPmfAndChannelsAreIndependent) {
  Rng rng(5);
  FactorizedPrior prior(2, 10.0, 6);
  Perturb(prior, rng, 0.5);
  const Alphabet alphabet{-5, 5};
  Tensor values(Shape{2, 2, 3, 3});
  for (double& v : values.mutable_data()) v = rng.Below(11) - 5.0;
  double expected = 0.0;
  for (int64_t i = 0; i < static_cast<int64_t>(values.size()); ++i) {
    const int c = static_cast<int>((i / 9) % 2);
    expected += BitsFromProb(prior.Prob(c, static_cast<int>(values[i]), alphabet));
  }
  EXPECT_NEAR(prior.RateBits(values, alphabet).item(), expected, 1e-10);
  EXPECT_THROW(prior.RateBits(Tensor(Shape{1, 3, 1, 1}), alphabet),
               DimensionError);
}

TEST(FactorizedPriorTest, RejectsOutOfAlphabetTargets) {
  FactorizedPrior prior(1, 10.0, 7);
  EXPECT_THROW(prior.RateBits(Tensor(Shape{1, 1, 1, 1}, 9.0), Alphabet{-2, 2}),
               AlphabetError);
}

// Fits the prior to discretized N(0, 2^2) samples; its cross-entropy must
// approach the source entropy.
TEST(FactorizedPriorTest, LearnsDiscretizedGaussian) {
  Rng rng(8);
  const int n = 4096;
  Tensor samples(Shape{1, 1, 64, 64});
  for (double& v : samples.mutable_data()) v = RoundHalfAway(rng.Normal(0.0, 2.0));
  const Alphabet alphabet{-15, 15};
  double entropy = 0.0;
  for (int v = alphabet.lo; v <= alphabet.hi; ++v) {
    const double p = DiscretizedProb(Family::kGaussian, 0.0, 2.0, v, alphabet);
    entropy -= p * std::log2(p);
  }

  FactorizedPrior prior(1, 10.0, 9);
  std::vector<Tensor*> params;
  for (auto& [name, t] : prior.NamedParameters()) {
    t->set_requires_grad(true);
    params.push_back(t);
  }
  AdamState adam;
  for (int step = 0; step < 800; ++step) {
    for (Tensor* p : params) p->ZeroGrad();
    const Tensor bits = MulScalar(prior.RateBits(samples, alphabet), 1.0 / n);
    Backward(bits);
    AdamStep(params, adam, step < 600 ? 0.05 : 0.005);
  }
  for (Tensor* p : params) p->set_requires_grad(false);
  const double fitted = prior.RateBits(samples, alphabet).item() / n;
  // The empirical cross-entropy of the fitted model may dip slightly below
  // the source entropy; it must not exceed it by much.
  EXPECT_LT(fitted, entropy + 0.05);
  EXPECT_GT(fitted, entropy - 0.1);
  std::vector<double> pmf(alphabet.size());
  prior.Pmf(0, alphabet, pmf);
  for (int v = -4; v <= 4; ++v) {
    EXPECT_NEAR(pmf[v - alphabet.lo],
                DiscretizedProb(Family::kGaussian, 0.0, 2.0, v, alphabet), 0.02)
        << "v=" << v;
  }
}

}  // namespace
}  // namespace lhgm
