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

#include <cmath>
#include <numbers>

#include "lhgm/random.h"

namespace lhgm {

namespace {

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double SoftplusValue(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

constexpr int kMaxWidth = 3;

}  // namespace

// Activations of one evaluation, kept for the backward sweep.
struct FactorizedPrior::Trace {
  double input[kStages][kMaxWidth];
  double tanh_pre[kStages - 1][kMaxWidth];
};

FactorizedPrior::FactorizedPrior(int channels, double init_scale, uint64_t seed)
    : channels_(channels) {
  if (channels < 1) throw std::invalid_argument("prior needs >= 1 channel");
  Rng rng(seed);
  const double scale = std::pow(init_scale, 1.0 / kStages);
  for (int i = 0; i < kStages; ++i) {
    const int in = kWidths[i], out = kWidths[i + 1];
    const double init = std::log(std::expm1(1.0 / scale / out));
    matrices_[i] = Tensor(Shape{channels, out, in}, init, true);
    biases_[i] = Tensor(Shape{channels, out}, 0.0, true);
    for (double& b : biases_[i].mutable_data()) b = rng.Uniform(-0.5, 0.5);
    if (i < kStages - 1) factors_[i] = Tensor(Shape{channels, out}, 0.0, true);
  }
}

std::vector<std::pair<std::string, Tensor*>> FactorizedPrior::NamedParameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (int i = 0; i < kStages; ++i) {
    out.emplace_back("prior.matrix" + std::to_string(i), &matrices_[i]);
    out.emplace_back("prior.bias" + std::to_string(i), &biases_[i]);
    if (i < kStages - 1) {
      out.emplace_back("prior.factor" + std::to_string(i), &factors_[i]);
    }
  }
  return out;
}

double FactorizedPrior::Forward(int c, double v, Trace* trace) const {
  double x[kMaxWidth] = {v, 0.0, 0.0};
  double next[kMaxWidth];
  for (int i = 0; i < kStages; ++i) {
    const int in = kWidths[i], out = kWidths[i + 1];
    const double* h = matrices_[i].data().data() + c * out * in;
    const double* b = biases_[i].data().data() + c * out;
    if (trace) {
      for (int m = 0; m < in; ++m) trace->input[i][m] = x[m];
    }
    for (int j = 0; j < out; ++j) {
      double pre = b[j];
      for (int m = 0; m < in; ++m) pre += SoftplusValue(h[j * in + m]) * x[m];
      if (i < kStages - 1) {
        const double t = std::tanh(pre);
        const double a = std::tanh(factors_[i].data()[c * out + j]);
        if (trace) trace->tanh_pre[i][j] = t;
        next[j] = pre + a * t;
      } else {
        next[j] = pre;
      }
    }
    for (int j = 0; j < out; ++j) x[j] = next[j];
  }
  return x[0];
}

double FactorizedPrior::CumulativeLogit(int channel, double v) const {
  if (channel < 0 || channel >= channels_) {
    throw std::out_of_range("prior channel out of range");
  }
  return Forward(channel, v, nullptr);
}

double FactorizedPrior::Cumulative(int channel, double v) const {
  return Sigmoid(CumulativeLogit(channel, v));
}

namespace {

// Interval mass between two cumulative logits; infinities mark folded tails.
double MassFromLogits(double lower, double upper) {
  if (std::isinf(lower) && std::isinf(upper)) return 1.0;
  if (std::isinf(lower)) return Sigmoid(upper);
  if (std::isinf(upper)) return Sigmoid(-lower);
  // Evaluate on the side of the sigmoid where it is small.
  const double sign = (lower + upper) > 0 ? -1.0 : 1.0;
  return std::abs(Sigmoid(sign * upper) - Sigmoid(sign * lower));
}

}  // namespace

double FactorizedPrior::Prob(int channel, int v,
                             const Alphabet& alphabet) const {
  if (!alphabet.contains(v)) {
    throw AlphabetError("value " + std::to_string(v) + " outside prior alphabet");
  }
  const double inf = std::numeric_limits<double>::infinity();
  const double lower = v == alphabet.lo ? -inf : CumulativeLogit(channel, v - 0.5);
  const double upper = v == alphabet.hi ? inf : CumulativeLogit(channel, v + 0.5);
  return MassFromLogits(lower, upper);
}

void FactorizedPrior::Pmf(int channel, const Alphabet& alphabet,
                          std::span<double> pmf) const {
  const int n = alphabet.size();
  if (pmf.size() != static_cast<size_t>(n)) {
    throw std::invalid_argument("pmf span does not match alphabet size");
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> edge(static_cast<size_t>(n + 1));
  edge[0] = -inf;
  edge[n] = inf;
  for (int j = 1; j < n; ++j) {
    edge[j] = CumulativeLogit(channel, alphabet.lo + j - 0.5);
  }
  for (int j = 0; j < n; ++j) pmf[j] = MassFromLogits(edge[j], edge[j + 1]);
}

Tensor FactorizedPrior::RateBits(const Tensor& values,
                                 std::optional<Alphabet> alphabet,
                                 RateDiagnostics* diagnostics) const {
  if (values.rank() != 4 || values.dim(1) != channels_) {
    throw DimensionError("prior expects [N, " + std::to_string(channels_) +
                         ", H, W], got " + ShapeToString(values.shape()));
  }
  GradTape& tape = GradTape::Current();
  const bool want_grad = tape.ShouldRecord(
      {&matrices_[0], &matrices_[1], &matrices_[2], &matrices_[3],
       &biases_[0], &biases_[1], &biases_[2], &biases_[3], &factors_[0],
       &factors_[1], &factors_[2], &values});

  const int64_t plane = values.dim(2) * values.dim(3);
  const int64_t n = static_cast<int64_t>(values.size());
  const double inf = std::numeric_limits<double>::infinity();

  // Gradients of the summed bits under a unit upstream gradient.
  std::array<std::vector<double>, kStages> g_softplus_h, g_bias;
  std::array<std::vector<double>, kStages - 1> g_tanh_a;
  for (int i = 0; i < kStages; ++i) {
    g_softplus_h[i].assign(matrices_[i].size(), 0.0);
    g_bias[i].assign(biases_[i].size(), 0.0);
    if (i < kStages - 1) g_tanh_a[i].assign(factors_[i].size(), 0.0);
  }
  std::vector<double> g_values(want_grad ? values.size() : 0, 0.0);

  // Backpropagates d(logit) = g through the stored trace of channel c and
  // returns d(input).
  auto backward = [&](int c, const Trace& tr, double g) {
    double g_out[kMaxWidth] = {g, 0.0, 0.0};
    for (int i = kStages - 1; i >= 0; --i) {
      const int in = kWidths[i], out = kWidths[i + 1];
      const double* h = matrices_[i].data().data() + c * out * in;
      double g_pre[kMaxWidth];
      for (int j = 0; j < out; ++j) {
        if (i < kStages - 1) {
          const double a = std::tanh(factors_[i].data()[c * out + j]);
          const double t = tr.tanh_pre[i][j];
          g_pre[j] = g_out[j] * (1.0 + a * (1.0 - t * t));
          g_tanh_a[i][c * out + j] += g_out[j] * t;
        } else {
          g_pre[j] = g_out[j];
        }
        g_bias[i][c * out + j] += g_pre[j];
        for (int m = 0; m < in; ++m) {
          g_softplus_h[i][(c * out + j) * in + m] += g_pre[j] * tr.input[i][m];
        }
      }
      double g_in[kMaxWidth] = {0.0, 0.0, 0.0};
      for (int m = 0; m < in; ++m) {
        for (int j = 0; j < out; ++j) {
          g_in[m] += SoftplusValue(h[j * in + m]) * g_pre[j];
        }
      }
      for (int m = 0; m < kMaxWidth; ++m) g_out[m] = g_in[m];
    }
    return g_out[0];
  };

  double bits = 0.0;
  int64_t floored = 0;
  Trace lo_trace, hi_trace;
  for (int64_t e = 0; e < n; ++e) {
    const int c = static_cast<int>((e / plane) % channels_);
    const double v = values[e];
    bool fold_lo = false, fold_hi = false;
    if (alphabet) {
      if (v != std::floor(v) || !alphabet->contains(static_cast<int>(v))) {
        throw AlphabetError("prior value " + std::to_string(v) +
                            " is not an integer inside the alphabet");
      }
      fold_lo = v == alphabet->lo;
      fold_hi = v == alphabet->hi;
    }
    const double lower = fold_lo ? -inf : Forward(c, v - 0.5, &lo_trace);
    const double upper = fold_hi ? inf : Forward(c, v + 0.5, &hi_trace);
    const double p = MassFromLogits(lower, upper);
    if (p < kLikelihoodFloor) {
      ++floored;
      bits += 64.0;
      continue;
    }
    bits -= std::log2(p);
    if (!want_grad) continue;
    // p = sigmoid(upper) - sigmoid(lower); sigmoid'(x) = s(x) s(-x).
    const double dbits_dp = -1.0 / (p * std::numbers::ln2);
    double dv = 0.0;
    if (!fold_hi) {
      const double d = Sigmoid(upper) * Sigmoid(-upper);
      dv += backward(c, hi_trace, dbits_dp * d);
    }
    if (!fold_lo) {
      const double d = -Sigmoid(lower) * Sigmoid(-lower);
      dv += backward(c, lo_trace, dbits_dp * d);
    }
    g_values[e] = dv;
  }
  if (diagnostics) diagnostics->floored += floored;

  if (!want_grad) return Tensor::Scalar(bits);

  // Chain through the reparameterizations: softplus(h)' = sigmoid(h) and
  // tanh(a)' = 1 - tanh(a)^2.
  auto grads = std::make_shared<std::vector<std::vector<double>>>();
  for (int i = 0; i < kStages; ++i) {
    std::vector<double> gh(matrices_[i].size());
    for (size_t j = 0; j < gh.size(); ++j) {
      gh[j] = g_softplus_h[i][j] * Sigmoid(matrices_[i][j]);
    }
    grads->push_back(std::move(gh));
    grads->push_back(std::move(g_bias[i]));
    if (i < kStages - 1) {
      std::vector<double> ga(factors_[i].size());
      for (size_t j = 0; j < ga.size(); ++j) {
        const double t = std::tanh(factors_[i][j]);
        ga[j] = g_tanh_a[i][j] * (1.0 - t * t);
      }
      grads->push_back(std::move(ga));
    }
  }
  grads->push_back(std::move(g_values));
  std::vector<std::shared_ptr<TensorImpl>> targets;
  for (int i = 0; i < kStages; ++i) {
    targets.push_back(matrices_[i].impl());
    targets.push_back(biases_[i].impl());
    if (i < kStages - 1) targets.push_back(factors_[i].impl());
  }
  targets.push_back(values.impl());
  return MakeResult(
      Shape{}, {bits},
      {&matrices_[0], &matrices_[1], &matrices_[2], &matrices_[3], &biases_[0],
       &biases_[1], &biases_[2], &biases_[3], &factors_[0], &factors_[1],
       &factors_[2], &values},
      [grads, targets](const TensorImpl& o) {
        const double g = o.grad[0];
        for (size_t t = 0; t < targets.size(); ++t) {
          std::vector<double> scaled((*grads)[t]);
          for (double& v : scaled) v *= g;
          AccumulateGrad(*targets[t], scaled);
        }
      });
}

}  // namespace lhgm
