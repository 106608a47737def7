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

#ifndef LHGM_FACTORIZED_PRIOR_H_
#define LHGM_FACTORIZED_PRIOR_H_

#include <array>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lhgm/distributions.h"
#include "lhgm/tensor.h"

namespace lhgm {

// Learnable per-channel univariate distribution for the hyper-latent. Its
// cumulative is c(v) = sigmoid(g(v)) where g is a 1 -> 3 -> 3 -> 3 -> 1
// chain of affine maps with softplus-positive matrices, each hidden stage
// followed by x + tanh(a) * tanh(x). Both pieces are monotone, so c is
// strictly increasing with limits 0 and 1.
class FactorizedPrior {
 public:
  static constexpr int kStages = 4;
  static constexpr std::array<int, kStages + 1> kWidths = {1, 3, 3, 3, 1};

  FactorizedPrior() = default;
  // `init_scale` sets the initial spread of the cumulative, as in the usual
  // entropy-bottleneck initialization.
  explicit FactorizedPrior(int channels, double init_scale = 10.0,
                           uint64_t seed = 0);

  int channels() const { return channels_; }

  // matrices[i]: [C, out, in]; biases[i]: [C, out]; factors[i]: [C, out]
  // for the three hidden stages.
  std::vector<std::pair<std::string, Tensor*>> NamedParameters();

  // g(v), the logit of the cumulative. No tape.
  double CumulativeLogit(int channel, double v) const;
  double Cumulative(int channel, double v) const;

  // c(v + 1/2) - c(v - 1/2), with the tails folded into the edge bins.
  double Prob(int channel, int v, const Alphabet& alphabet) const;
  void Pmf(int channel, const Alphabet& alphabet, std::span<double> pmf) const;

  // Sum of -log2 p over a [N, C, H, W] plane; same alphabet semantics as
  // MixtureRateBits. Differentiable with respect to every parameter and to
  // the values.
  Tensor RateBits(const Tensor& values, std::optional<Alphabet> alphabet,
                  RateDiagnostics* diagnostics = nullptr) const;

 private:
  struct Trace;
  double Forward(int channel, double v, Trace* trace) const;

  int channels_ = 0;
  std::array<Tensor, kStages> matrices_;
  std::array<Tensor, kStages> biases_;
  std::array<Tensor, kStages - 1> factors_;
};

}  // namespace lhgm

#endif  // LHGM_FACTORIZED_PRIOR_H_
