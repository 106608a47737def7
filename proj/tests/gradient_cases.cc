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

#include "gradient_cases.h"

#include <cmath>
#include <memory>

#include "lhgm/distributions.h"
#include "lhgm/factorized_prior.h"
#include "lhgm/model.h"
#include "lhgm/train.h"
#include "test_util.h"

namespace lhgm::testing {

namespace {

using Made = std::pair<GradFn, std::vector<Tensor>>;

Tensor Param(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return RandomTensor(shape, rng, lo, hi, /*requires_grad=*/true);
}

// Moves entries closer than `margin` to any kink away from it, so central
// differences never straddle a non-smooth point.
Tensor AwayFrom(Tensor t, std::initializer_list<double> kinks, double margin) {
  for (double& v : t.mutable_data()) {
    for (double k : kinks) {
      if (std::abs(v - k) < margin) v = v >= k ? k + margin : k - margin;
    }
  }
  return t;
}

GradientCase Unary(std::string name, Tensor (*op)(const Tensor&), double lo,
                   double hi) {
  return {std::move(name), [op, lo, hi](Rng& rng) -> Made {
            return {[op](const std::vector<Tensor>& in) { return op(in[0]); },
                    {Param({2, 3, 2}, rng, lo, hi)}};
          }};
}

GradientCase Binary(std::string name,
                    Tensor (*op)(const Tensor&, const Tensor&),
                    bool scalar_rhs, double rhs_lo, double rhs_hi) {
  return {std::move(name), [=](Rng& rng) -> Made {
            Shape rhs = scalar_rhs ? Shape{1} : Shape{2, 3};
            return {[op](const std::vector<Tensor>& in) {
                      return op(in[0], in[1]);
                    },
                    {Param({2, 3}, rng), Param(rhs, rng, rhs_lo, rhs_hi)}};
          }};
}

Tensor NoBias() { return Tensor(Shape{0}); }

}  // namespace

std::vector<GradientCase> TensorGradientCases() {
  std::vector<GradientCase> cases;
  cases.push_back(Binary("Add", &Add, false, -1, 1));
  cases.push_back(Binary("AddScalarTensor", &Add, true, -1, 1));
  cases.push_back(Binary("Sub", &Sub, false, -1, 1));
  cases.push_back(Binary("SubScalarTensor", &Sub, true, -1, 1));
  cases.push_back(Binary("Mul", &Mul, false, -1, 1));
  cases.push_back(Binary("MulScalarTensor", &Mul, true, -1, 1));
  cases.push_back(Binary("Div", &Div, false, 0.5, 2.0));
  cases.push_back(Binary("DivScalarTensor", &Div, true, 0.5, 2.0));
  cases.push_back({"AddScalar", [](Rng& rng) -> Made {
                     return {[](const std::vector<Tensor>& in) {
                               return AddScalar(in[0], 0.7);
                             },
                             {Param({3, 2}, rng)}};
                   }});
  cases.push_back({"MulScalar", [](Rng& rng) -> Made {
                     return {[](const std::vector<Tensor>& in) {
                               return MulScalar(in[0], -1.3);
                             },
                             {Param({3, 2}, rng)}};
                   }});
  cases.push_back(Unary("Neg", &Neg, -1, 1));
  cases.push_back(Unary("Exp", &Exp, -2, 2));
  cases.push_back({"Log", [](Rng& rng) -> Made {
                     return {[](const std::vector<Tensor>& in) {
                               return Log(in[0]);
                             },
                             {Param({2, 3, 2}, rng, 0.2, 3.0)}};
                   }});
  cases.push_back(Unary("Square", &Square, -2, 2));
  cases.push_back(Unary("Softplus", &Softplus, -4, 4));
  cases.push_back(Unary("Tanh", &Tanh, -2, 2));
  cases.push_back(Unary("Sigmoid", &Sigmoid, -4, 4));
  cases.push_back(Unary("StdNormalCdf", &StdNormalCdf, -3, 3));
  cases.push_back(Unary("ReduceSum", &ReduceSum, -1, 1));
  cases.push_back(Unary("ReduceMean", &ReduceMean, -1, 1));
  cases.push_back({"Clamp", [](Rng& rng) -> Made {
                     Tensor x = AwayFrom(Param({4, 3}, rng), {-0.5, 0.5}, 1e-3);
                     return {[](const std::vector<Tensor>& in) {
                               return Clamp(in[0], -0.5, 0.5);
                             },
                             {x}};
                   }});
  cases.push_back({"LeakyRelu", [](Rng& rng) -> Made {
                     Tensor x = AwayFrom(Param({4, 3}, rng), {0.0}, 1e-3);
                     return {[](const std::vector<Tensor>& in) {
                               return LeakyRelu(in[0], 0.01);
                             },
                             {x}};
                   }});
  for (size_t axis : {0u, 1u, 2u}) {
    cases.push_back({"Softmax" + std::to_string(axis),
                     [axis](Rng& rng) -> Made {
                       return {[axis](const std::vector<Tensor>& in) {
                                 return Softmax(in[0], axis);
                               },
                               {Param({2, 3, 4}, rng, -2, 2)}};
                     }});
    cases.push_back({"ReduceSumAxis" + std::to_string(axis),
                     [axis](Rng& rng) -> Made {
                       return {[axis](const std::vector<Tensor>& in) {
                                 return ReduceSumAxis(in[0], axis);
                               },
                               {Param({2, 3, 4}, rng)}};
                     }});
  }
  cases.push_back({"Reshape", [](Rng& rng) -> Made {
                     return {[](const std::vector<Tensor>& in) {
                               return Square(Reshape(in[0], {3, 4}));
                             },
                             {Param({2, 6}, rng)}};
                   }});
  cases.push_back({"SliceChannels", [](Rng& rng) -> Made {
                     return {[](const std::vector<Tensor>& in) {
                               return Square(SliceChannels(in[0], 1, 2));
                             },
                             {Param({2, 4, 2, 3}, rng)}};
                   }});
  cases.push_back({"ConcatChannels", [](Rng& rng) -> Made {
                     return {[](const std::vector<Tensor>& in) {
                               return Square(ConcatChannels(in[0], in[1]));
                             },
                             {Param({2, 2, 2, 3}, rng),
                              Param({2, 3, 2, 3}, rng)}};
                   }});
  struct ConvSetup {
    const char* name;
    int stride, padding, k;
  };
  for (ConvSetup s : {ConvSetup{"Conv2dSame", 1, 1, 3},
                      ConvSetup{"Conv2dStride2", 2, 1, 3},
                      ConvSetup{"Conv2dPointwise", 1, 0, 1},
                      ConvSetup{"Conv2dValid5", 1, 0, 5}}) {
    cases.push_back({s.name, [s](Rng& rng) -> Made {
                       return {[s](const std::vector<Tensor>& in) {
                                 return Conv2d(in[0], in[1], in[2], s.stride,
                                               s.padding);
                               },
                               {Param({2, 2, 6, 5}, rng),
                                Param({3, 2, s.k, s.k}, rng),
                                Param({3}, rng)}};
                     }});
  }
  for (ConvSetup s : {ConvSetup{"Conv2dTransposedStride2", 2, 1, 4},
                      ConvSetup{"Conv2dTransposedStride1", 1, 1, 3},
                      ConvSetup{"Conv2dTransposedStride2K2", 2, 0, 2}}) {
    cases.push_back({s.name, [s](Rng& rng) -> Made {
                       return {[s](const std::vector<Tensor>& in) {
                                 return Conv2dTransposed(in[0], in[1], in[2],
                                                         s.stride, s.padding);
                               },
                               {Param({2, 3, 3, 4}, rng),
                                Param({3, 2, s.k, s.k}, rng),
                                Param({2}, rng)}};
                     }});
  }
  cases.push_back({"Conv2dNoBias", [](Rng& rng) -> Made {
                     return {[](const std::vector<Tensor>& in) {
                               return Conv2d(in[0], in[1], NoBias(), 1, 1);
                             },
                             {Param({1, 2, 4, 4}, rng),
                              Param({2, 2, 3, 3}, rng)}};
                   }});
  cases.push_back({"MaskedConv2d", [](Rng& rng) -> Made {
                     return {[](const std::vector<Tensor>& in) {
                               return MaskedConv2d(in[0], in[1], in[2]);
                             },
                             {Param({1, 2, 5, 5}, rng),
                              Param({3, 2, 5, 5}, rng), Param({3}, rng)}};
                   }});
  return cases;
}

std::vector<GradientCase> DistributionGradientCases() {
  std::vector<GradientCase> cases;
  for (Family family : kAllFamilies) {
    for (int K : {1, 3}) {
      const std::string tag =
          std::string(FamilyName(family)) + "K" + std::to_string(K);
      // Continuous targets: the training-time noisy latent path.
      cases.push_back(
          {"MixtureRateBitsNoisy_" + tag, [family, K](Rng& rng) -> Made {
             const int C = 2;
             return {[family, K, C](const std::vector<Tensor>& in) {
                       MixtureParams p = SplitMixtureParams(in[0], K, C);
                       return MixtureRateBits(p, in[1], std::nullopt, family);
                     },
                     {Param({1, 3 * K * C, 2, 3}, rng, -1.5, 1.5),
                      Param({1, C, 2, 3}, rng, -2.5, 2.5)}};
           }});
      // Integer targets on a bounded alphabet, edge bins included.
      cases.push_back(
          {"MixtureRateBitsFolded_" + tag, [family, K](Rng& rng) -> Made {
             const int C = 3;
             Tensor targets(Shape{1, C, 2, 2});
             for (double& v : targets.mutable_data()) v = rng.Below(7);
             targets.mutable_data()[0] = 0;
             targets.mutable_data()[1] = 6;
             const HeadUnits units{3.0, 2.0};
             return {[family, K, C, units](const std::vector<Tensor>& in) {
                       MixtureParams p = SplitMixtureParams(in[0], K, C, units);
                       return MixtureRateBits(p, in[1], Alphabet{0, 6},
                                              family);
                     },
                     {Param({1, 3 * K * C, 2, 2}, rng, -1.5, 1.5), targets}};
           }});
    }
  }
  for (bool folded : {false, true}) {
    cases.push_back(
        {folded ? "PriorRateBitsFolded" : "PriorRateBitsNoisy",
         [folded](Rng& rng) -> Made {
           const int C = 2;
           auto prior = std::make_shared<FactorizedPrior>(
               C, 10.0, rng.NextU64());
           std::vector<Tensor> inputs;
           // Move the parameters off their symmetric initialization.
           for (auto& [name, t] : prior->NamedParameters()) {
             for (double& v : t->mutable_data()) v += rng.Uniform(-0.5, 0.5);
             t->set_requires_grad(true);
             inputs.push_back(*t);
           }
           Tensor values;
           if (folded) {
             values = Tensor(Shape{1, C, 2, 3});
             for (double& v : values.mutable_data()) v = rng.Below(9) - 4.0;
             values.mutable_data()[0] = -4;
             values.mutable_data()[1] = 4;
           } else {
             values = Param({1, C, 2, 3}, rng, -4, 4);
           }
           inputs.push_back(values);
           std::optional<Alphabet> alphabet;
           if (folded) alphabet = Alphabet{-4, 4};
           return {[prior, alphabet](const std::vector<Tensor>& in) {
                     return prior->RateBits(in.back(), alphabet);
                   },
                   inputs};
         }});
  }
  return cases;
}

std::vector<GradientCase> LossGradientCases() {
  std::vector<GradientCase> cases;
  for (double lambda : {0.0, 0.6}) {
    for (bool context : {false, true}) {
      cases.push_back(
          {std::string("Loss") + (context ? "Context" : "NoContext") +
               (lambda > 0.0 ? "Warm" : "Cold"),
           [lambda, context](Rng& rng) -> Made {
             ModelConfig config;
             config.main_channels = 2;
             config.hyper_channels = 2;
             config.latent_channels = 1;
             config.hyper_latent_channels = 1;
             config.mixtures = 2;
             config.context_model = context;
             auto model = std::make_shared<Model>(config, rng.NextU64());
             std::vector<Tensor> inputs;
             for (auto& [name, t] : model->Parameters()) {
               t->set_requires_grad(true);
               inputs.push_back(*t);
             }
             // Pixels far from the initial means hit the likelihood floor,
             // a kink; keep them within about 6 scales.
             Tensor x(Shape{1, 3, 16, 16});
             for (double& v : x.mutable_data()) v = 64.0 + rng.Below(128);
             const uint64_t noise_seed = rng.NextU64();
             return {[model, x, lambda, noise_seed](const std::vector<Tensor>&) {
                       Rng noise(noise_seed);
                       const ForwardOutputs out =
                           model->Forward(x, Mode::kTrain, &noise);
                       return ComputeLoss(*model, out, x, lambda).total;
                     },
                     inputs};
           }});
    }
  }
  return cases;
}

}  // namespace lhgm::testing
