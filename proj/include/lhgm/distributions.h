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

#ifndef LHGM_DISTRIBUTIONS_H_
#define LHGM_DISTRIBUTIONS_H_

// Discretized likelihoods: a continuous density convolved with U(-1/2, 1/2)
// and evaluated at integers, i.e. F(v + 1/2) - F(v - 1/2). On a bounded
// alphabet the mass outside [lo, hi] is folded into the two edge bins.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lhgm/tensor.h"

namespace lhgm {

enum class Family { kGaussian, kLaplace, kLogistic, kCauchy };

inline constexpr Family kAllFamilies[] = {Family::kGaussian, Family::kLaplace,
                                          Family::kLogistic, Family::kCauchy};

std::string_view FamilyName(Family family);
// Accepts the lowercase names returned by FamilyName().
Family ParseFamily(std::string_view name);

inline constexpr double kScaleFloor = 1e-6;
inline constexpr double kLikelihoodFloor = 0x1p-64;

struct Alphabet {
  int lo = 0;
  int hi = 0;  // inclusive

  int size() const { return hi - lo + 1; }
  bool contains(int v) const { return v >= lo && v <= hi; }
  bool operator==(const Alphabet&) const = default;
};

inline constexpr Alphabet kPixelAlphabet{0, 255};

class AlphabetError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Standardized (zero location, unit scale) CDF, survival function and density.
double FamilyCdf(Family family, double z);
double FamilySf(Family family, double z);
double FamilyPdf(Family family, double z);

// P(a < X <= b) for X = mean + scale * Z; a may be -inf and b may be +inf.
// Uses the survival function on the upper side to avoid cancellation.
double IntervalProb(Family family, double mean, double scale, double a,
                    double b);

double DiscretizedProb(Family family, double mean, double scale, int v,
                       const Alphabet& alphabet);

// One element of a K-component mixture; the three spans have length K.
double MixtureProb(std::span<const double> weights,
                   std::span<const double> means,
                   std::span<const double> scales, int v,
                   const Alphabet& alphabet, Family family = Family::kGaussian);

// Writes the tail-folded pmf of one mixture element over the alphabet.
void MixturePmf(std::span<const double> weights, std::span<const double> means,
                std::span<const double> scales, const Alphabet& alphabet,
                std::span<double> pmf, Family family = Family::kGaussian);

// Per-element K-component mixture over an [N, C, H, W] target plane. Each
// tensor is [N, K, C, H, W].
struct MixtureParams {
  int K = 1;
  Tensor weights;
  Tensor means;
  Tensor scales;

  int64_t batch() const { return weights.dim(0); }
  int64_t channels() const { return weights.dim(2); }
  int64_t height() const { return weights.dim(3); }
  int64_t width() const { return weights.dim(4); }
  Shape target_shape() const {
    return {batch(), channels(), height(), width()};
  }
  int64_t num_elements() const { return batch() * channels() * height() * width(); }

  // Offset of component k for the flat [N, C, H, W] element index.
  int64_t Offset(int64_t element, int k) const {
    const int64_t plane = channels() * height() * width();
    const int64_t n = element / plane;
    return (n * K + k) * plane + element % plane;
  }

  // Copies one element's components into the three output spans.
  void Element(int64_t element, std::span<double> w, std::span<double> mu,
               std::span<double> sigma) const;

  // Sum_k w_k mu_k, shape [N, C, H, W]; this is the point estimate used by
  // the L2 warm-up term.
  Tensor WeightedMean() const;
};

// Affine map applied to the mean/scale channels of a parameter head so the
// network can work in normalized units: mean = offset + unit * raw_mean and
// scale = max(unit * softplus(scale_gain * raw_scale), kScaleFloor).
struct HeadUnits {
  double mean_offset = 0.0;
  double unit = 1.0;
  double scale_gain = 1.0;
};

// Splits a raw [N, 3*K*C, H, W] head output laid out as
// [weight logits | means | scale pre-activations], each block K*C channels
// indexed k*C + c. Weights get a softmax over K.
MixtureParams SplitMixtureParams(const Tensor& raw, int K, int64_t channels,
                                 HeadUnits units = {});

// Checks the weight/scale invariants; returns an empty string when valid.
std::string ValidateMixture(const MixtureParams& params, double tol = 1e-12);

struct RateDiagnostics {
  int64_t floored = 0;  // elements whose likelihood hit kLikelihoodFloor
};

// Sum over elements of -log2 p(target). With an alphabet the targets must be
// integers inside it and the edge bins carry the folded tails; without one
// the targets may be any real (training-time noisy latents) and the interval
// [t - 1/2, t + 1/2] is used. Differentiable with respect to weights, means,
// scales and the targets.
Tensor MixtureRateBits(const MixtureParams& params, const Tensor& targets,
                       std::optional<Alphabet> alphabet,
                       Family family = Family::kGaussian,
                       RateDiagnostics* diagnostics = nullptr);

// Row-major [elements x alphabet.size()] table of tail-folded pmfs.
struct PmfTable {
  Alphabet alphabet;
  int64_t rows = 0;
  std::vector<double> values;

  std::span<const double> row(int64_t i) const {
    return std::span<const double>(values).subspan(
        static_cast<size_t>(i * alphabet.size()),
        static_cast<size_t>(alphabet.size()));
  }
};

PmfTable BuildPmfTable(const MixtureParams& params, const Alphabet& alphabet,
                       Family family = Family::kGaussian);

// -log2 p with the likelihood floor applied.
double BitsFromProb(double p);

}  // namespace lhgm

#endif  // LHGM_DISTRIBUTIONS_H_
