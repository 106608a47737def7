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

#include "lhgm/distributions.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace lhgm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

double LogisticCdf(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Interval probability of one standardized component plus its partial
// derivatives with respect to the two (standardized) edges. An infinite edge
// contributes no derivative.
struct Interval {
  double p;
  double density_lo;  // f(z_lo), 0 for -inf
  double density_hi;  // f(z_hi), 0 for +inf
  double moment_lo;   // z_lo * f(z_lo), 0 for -inf
  double moment_hi;   // z_hi * f(z_hi), 0 for +inf
};

double StandardInterval(Family family, double za, double zb) {
  double p;
  if (za >= 0) {
    p = FamilySf(family, za) - FamilySf(family, zb);
  } else if (zb <= 0) {
    p = FamilyCdf(family, zb) - FamilyCdf(family, za);
  } else {
    p = 1.0 - (FamilyCdf(family, za) + FamilySf(family, zb));
  }
  return p > 0.0 ? p : 0.0;
}

Interval EvalInterval(Family family, double mean, double scale, double a,
                      double b) {
  const double za = std::isinf(a) ? a : (a - mean) / scale;
  const double zb = std::isinf(b) ? b : (b - mean) / scale;
  Interval out;
  out.p = StandardInterval(family, za, zb);
  out.density_lo = std::isinf(za) ? 0.0 : FamilyPdf(family, za);
  out.density_hi = std::isinf(zb) ? 0.0 : FamilyPdf(family, zb);
  out.moment_lo = std::isinf(za) ? 0.0 : za * out.density_lo;
  out.moment_hi = std::isinf(zb) ? 0.0 : zb * out.density_hi;
  return out;
}

void CheckSpans(size_t k, size_t m, size_t s) {
  if (k == 0 || k != m || k != s) {
    throw std::invalid_argument("mixture spans must share a non-zero length");
  }
}

}  // namespace

std::string_view FamilyName(Family family) {
  switch (family) {
    case Family::kGaussian:
      return "gaussian";
    case Family::kLaplace:
      return "laplace";
    case Family::kLogistic:
      return "logistic";
    case Family::kCauchy:
      return "cauchy";
  }
  return "unknown";
}

Family ParseFamily(std::string_view name) {
  for (Family f : kAllFamilies) {
    if (FamilyName(f) == name) return f;
  }
  throw std::invalid_argument("unknown distribution family: " +
                              std::string(name));
}

double FamilyCdf(Family family, double z) {
  switch (family) {
    case Family::kGaussian:
      return 0.5 * std::erfc(-z * kInvSqrt2);
    case Family::kLaplace:
      return z < 0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
    case Family::kLogistic:
      return LogisticCdf(z);
    case Family::kCauchy:
      return FamilySf(family, -z);
  }
  return 0.0;
}

double FamilySf(Family family, double z) {
  switch (family) {
    case Family::kGaussian:
      return 0.5 * std::erfc(z * kInvSqrt2);
    case Family::kLaplace:
      return z > 0 ? 0.5 * std::exp(-z) : 1.0 - 0.5 * std::exp(z);
    case Family::kLogistic:
      return LogisticCdf(-z);
    case Family::kCauchy:
      return z > 0 ? std::atan(1.0 / z) * std::numbers::inv_pi
                   : 0.5 - std::atan(z) * std::numbers::inv_pi;
  }
  return 0.0;
}

double FamilyPdf(Family family, double z) {
  switch (family) {
    case Family::kGaussian:
      return kInvSqrt2Pi * std::exp(-0.5 * z * z);
    case Family::kLaplace:
      return 0.5 * std::exp(-std::abs(z));
    case Family::kLogistic: {
      const double e = std::exp(-std::abs(z));
      return e / ((1.0 + e) * (1.0 + e));
    }
    case Family::kCauchy:
      return std::numbers::inv_pi / (1.0 + z * z);
  }
  return 0.0;
}

double IntervalProb(Family family, double mean, double scale, double a,
                    double b) {
  const double za = std::isinf(a) ? a : (a - mean) / scale;
  const double zb = std::isinf(b) ? b : (b - mean) / scale;
  return StandardInterval(family, za, zb);
}

double DiscretizedProb(Family family, double mean, double scale, int v,
                       const Alphabet& alphabet) {
  if (!alphabet.contains(v)) {
    throw AlphabetError("value " + std::to_string(v) + " outside [" +
                        std::to_string(alphabet.lo) + ", " +
                        std::to_string(alphabet.hi) + "]");
  }
  const double a = v == alphabet.lo ? -kInf : v - 0.5;
  const double b = v == alphabet.hi ? kInf : v + 0.5;
  return IntervalProb(family, mean, scale, a, b);
}

double MixtureProb(std::span<const double> weights,
                   std::span<const double> means,
                   std::span<const double> scales, int v,
                   const Alphabet& alphabet, Family family) {
  CheckSpans(weights.size(), means.size(), scales.size());
  double p = 0.0;
  for (size_t k = 0; k < weights.size(); ++k) {
    p += weights[k] * DiscretizedProb(family, means[k], scales[k], v, alphabet);
  }
  return p;
}

void MixturePmf(std::span<const double> weights, std::span<const double> means,
                std::span<const double> scales, const Alphabet& alphabet,
                std::span<double> pmf, Family family) {
  CheckSpans(weights.size(), means.size(), scales.size());
  const int n = alphabet.size();
  if (pmf.size() != static_cast<size_t>(n)) {
    throw std::invalid_argument("pmf span does not match alphabet size");
  }
  std::fill(pmf.begin(), pmf.end(), 0.0);
  // Standardized edges between bins; edge j separates bin j-1 and bin j.
  std::vector<double> z(static_cast<size_t>(n + 1));
  for (size_t k = 0; k < weights.size(); ++k) {
    z[0] = -kInf;
    z[n] = kInf;
    for (int j = 1; j < n; ++j) {
      z[j] = (alphabet.lo + j - 0.5 - means[k]) / scales[k];
    }
    // Same branch structure as StandardInterval so each bin is bitwise equal
    // to DiscretizedProb().
    for (int j = 0; j < n; ++j) {
      pmf[j] += weights[k] * StandardInterval(family, z[j], z[j + 1]);
    }
  }
}

void MixtureParams::Element(int64_t element, std::span<double> w,
                            std::span<double> mu,
                            std::span<double> sigma) const {
  for (int k = 0; k < K; ++k) {
    const int64_t off = Offset(element, k);
    w[k] = weights[off];
    mu[k] = means[off];
    sigma[k] = scales[off];
  }
}

Tensor MixtureParams::WeightedMean() const {
  return ReduceSumAxis(Mul(weights, means), 1);
}

MixtureParams SplitMixtureParams(const Tensor& raw, int K, int64_t channels,
                                 HeadUnits units) {
  if (raw.rank() != 4 || K < 1 || raw.dim(1) != 3 * K * channels) {
    throw DimensionError("mixture head " + ShapeToString(raw.shape()) +
                         " does not carry 3*K*C = " +
                         std::to_string(3 * K * channels) + " channels");
  }
  const int64_t kc = K * channels;
  const Shape five{raw.dim(0), K, channels, raw.dim(2), raw.dim(3)};
  MixtureParams p;
  p.K = K;
  p.weights = Softmax(Reshape(SliceChannels(raw, 0, kc), five), 1);
  Tensor mean_raw = Reshape(SliceChannels(raw, kc, kc), five);
  p.means = units.unit == 1.0 ? mean_raw : MulScalar(mean_raw, units.unit);
  if (units.mean_offset != 0.0) p.means = AddScalar(p.means, units.mean_offset);
  Tensor scale_raw = Reshape(SliceChannels(raw, 2 * kc, kc), five);
  if (units.scale_gain != 1.0) scale_raw = MulScalar(scale_raw, units.scale_gain);
  Tensor scale = Softplus(scale_raw);
  if (units.unit != 1.0) scale = MulScalar(scale, units.unit);
  p.scales = Clamp(scale, kScaleFloor, kInf);
  return p;
}

std::string ValidateMixture(const MixtureParams& params, double tol) {
  std::ostringstream err;
  const int64_t n = params.num_elements();
  for (int64_t e = 0; e < n; ++e) {
    double sum = 0.0;
    for (int k = 0; k < params.K; ++k) {
      const int64_t off = params.Offset(e, k);
      const double w = params.weights[off];
      if (!(w >= 0.0)) err << "negative weight at " << e << "; ";
      if (!(params.scales[off] >= kScaleFloor)) err << "scale below floor at " << e << "; ";
      if (!std::isfinite(params.means[off])) err << "non-finite mean at " << e << "; ";
      sum += w;
    }
    if (std::abs(sum - 1.0) > tol) err << "weights sum to " << sum << " at " << e << "; ";
    if (err.tellp() > 512) break;
  }
  return err.str();
}

double BitsFromProb(double p) {
  return -std::log2(std::max(p, kLikelihoodFloor));
}

Tensor MixtureRateBits(const MixtureParams& params, const Tensor& targets,
                       std::optional<Alphabet> alphabet, Family family,
                       RateDiagnostics* diagnostics) {
  if (targets.shape() != params.target_shape()) {
    throw DimensionError("targets " + ShapeToString(targets.shape()) +
                         " do not match mixture plane " +
                         ShapeToString(params.target_shape()));
  }
  const int K = params.K;
  const int64_t n = params.num_elements();
  const size_t nk = static_cast<size_t>(n) * K;
  // Per (element, component): p_k, dp_k/dmean, dp_k/dscale, in [N,K,C,H,W]
  // order; per element: total p (0 when floored) and dp/dtarget.
  auto cp = std::make_shared<std::vector<double>>(nk);
  auto dmu = std::make_shared<std::vector<double>>(nk);
  auto dsig = std::make_shared<std::vector<double>>(nk);
  auto ptot = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  auto dt = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  double bits = 0.0;
  int64_t floored = 0;
  for (int64_t e = 0; e < n; ++e) {
    const double t = targets[e];
    double a = t - 0.5, b = t + 0.5;
    if (alphabet) {
      if (t != std::floor(t) || !alphabet->contains(static_cast<int>(t))) {
        throw AlphabetError("target " + std::to_string(t) +
                            " is not an integer inside the alphabet");
      }
      if (t == alphabet->lo) a = -kInf;
      if (t == alphabet->hi) b = kInf;
    }
    double p = 0.0, dp_dt = 0.0;
    for (int k = 0; k < K; ++k) {
      const int64_t off = params.Offset(e, k);
      const double w = params.weights[off];
      const double s = params.scales[off];
      const Interval iv = EvalInterval(family, params.means[off], s, a, b);
      (*cp)[off] = iv.p;
      (*dmu)[off] = (iv.density_lo - iv.density_hi) / s;
      (*dsig)[off] = (iv.moment_lo - iv.moment_hi) / s;
      p += w * iv.p;
      dp_dt += w * (iv.density_hi - iv.density_lo) / s;
    }
    if (p < kLikelihoodFloor) {
      ++floored;
      (*ptot)[e] = 0.0;
      bits += 64.0;
    } else {
      (*ptot)[e] = p;
      (*dt)[e] = dp_dt;
      bits -= std::log2(p);
    }
  }
  if (diagnostics) diagnostics->floored += floored;

  auto wi = params.weights.impl();
  auto mi = params.means.impl();
  auto si = params.scales.impl();
  auto ti = targets.impl();
  const MixtureParams shape_ref = params;
  return MakeResult(
      Shape{}, {bits}, {&params.weights, &params.means, &params.scales, &targets},
      [=](const TensorImpl& o) {
        const double g = o.grad[0];
        std::vector<double> gw(nk, 0.0), gm(nk, 0.0), gs(nk, 0.0);
        std::vector<double> gt(static_cast<size_t>(n), 0.0);
        for (int64_t e = 0; e < n; ++e) {
          const double p = (*ptot)[e];
          if (p == 0.0) continue;
          const double c = -g / (p * std::numbers::ln2);
          for (int k = 0; k < K; ++k) {
            const int64_t off = shape_ref.Offset(e, k);
            const double w = wi->data[off];
            gw[off] = c * (*cp)[off];
            gm[off] = c * w * (*dmu)[off];
            gs[off] = c * w * (*dsig)[off];
          }
          gt[e] = c * (*dt)[e];
        }
        AccumulateGrad(*wi, gw);
        AccumulateGrad(*mi, gm);
        AccumulateGrad(*si, gs);
        AccumulateGrad(*ti, gt);
      });
}

PmfTable BuildPmfTable(const MixtureParams& params, const Alphabet& alphabet,
                       Family family) {
  PmfTable table;
  table.alphabet = alphabet;
  table.rows = params.num_elements();
  const size_t width = static_cast<size_t>(alphabet.size());
  table.values.resize(static_cast<size_t>(table.rows) * width);
  std::vector<double> w(params.K), mu(params.K), sigma(params.K);
  for (int64_t e = 0; e < table.rows; ++e) {
    params.Element(e, w, mu, sigma);
    MixturePmf(w, mu, sigma, alphabet,
               std::span<double>(table.values).subspan(e * width, width),
               family);
  }
  return table;
}

}  // namespace lhgm
