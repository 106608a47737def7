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

#ifndef LHGM_BENCH_H_
#define LHGM_BENCH_H_

// Analysis tools: marginal histograms, distribution-family fits on integer
// samples, and the warm-up ablation harness.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lhgm/distributions.h"
#include "lhgm/image_io.h"
#include "lhgm/model.h"
#include "lhgm/train.h"

namespace lhgm {

// Exact integer-binned counts over [lo, lo + counts.size()).
struct Histogram {
  int lo = 0;
  std::vector<uint64_t> counts;
  uint64_t total = 0;

  int hi() const { return lo + static_cast<int>(counts.size()) - 1; }
  double frequency(size_t bin) const {
    return static_cast<double>(counts[bin]) / static_cast<double>(total);
  }
};

// Bins span [min, max] of the samples. Throws std::invalid_argument when
// `samples` is empty.
Histogram MarginalHistogram(std::span<const int> samples);
// Bins span [alphabet.lo, alphabet.hi]; throws AlphabetError for samples
// outside it.
Histogram MarginalHistogram(std::span<const int> samples, const Alphabet& alphabet);
// "value,count,frequency" rows.
std::string FormatHistogramCsv(const Histogram& histogram);

// All sub-pixel values of an image.
std::vector<int> PixelSamples(const RgbImage& image);
enum class LatentKind { kY, kZ };
// Quantized latents of the (reflect-padded) image under `model`.
std::vector<int> LatentSamples(const Model& model, const RgbImage& image,
                               LatentKind kind);

struct FitResult {
  Family family = Family::kGaussian;
  int K = 1;
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> scales;
  Alphabet alphabet;
  // Bits per symbol on the samples the model was fitted to.
  double nll_bits = 0.0;
  int iterations = 0;
  bool converged = false;
  // Every EM iteration kept the NLL non-increasing (always true for K = 1).
  bool monotone = true;
};

struct FitOptions {
  uint64_t seed = 1;
  int restarts = 10;
  int max_iterations = 500;
  double tolerance = 1e-9;  // relative NLL change
};

// Maximum-likelihood fit of the tail-folded discretized `family` over
// `alphabet` (default: the sample range). K = 1 uses alternating Brent
// searches over the location and log scale; K > 1 (Gaussian only) runs EM
// from the K = 1 solution and from k-means++ seeds, keeping the best.
// Throws std::invalid_argument for fewer than 30 * K samples or K > 1 with
// a non-Gaussian family.
FitResult FitFamily(std::span<const int> samples, Family family, int K,
                    const FitOptions& options = {});
FitResult FitFamily(std::span<const int> samples, Family family, int K,
                    const Alphabet& alphabet, const FitOptions& options = {});

// Bits per symbol of `samples` under a fitted model.
double NllBits(const FitResult& fit, std::span<const int> samples);

struct ComparisonRow {
  FitResult fit;
  double heldout_nll_bits = 0.0;
};

struct FamilyComparison {
  Alphabet alphabet;
  size_t train_samples = 0;
  size_t heldout_samples = 0;
  std::vector<ComparisonRow> rows;  // ascending held-out NLL
};

// Fits the four families at K = 1 and the Gaussian mixture at `mixture_k`
// on a seeded 80% split and ranks them on the remaining 20%.
FamilyComparison CompareFamilies(std::span<const int> samples,
                                 const FitOptions& options = {},
                                 int mixture_k = 3);
std::string FormatComparisonCsv(const FamilyComparison& comparison);

struct AblationOptions {
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  double lambda_warm = 0.6;  // the other arm uses 0
  // Fractions of the run at which the rate is recorded; the first is the
  // primary checkpoint for the summary.
  std::vector<double> checkpoints = {0.25, 0.5, 1.0};
};

struct AblationRow {
  uint64_t seed = 0;
  int64_t step = 0;
  double lambda_warm = 0.0;
  double rate_x = 0.0;
  double rate_y = 0.0;
  double rate_z = 0.0;
  double rate() const { return rate_x + rate_y + rate_z; }
};

struct AblationSummary {
  std::vector<AblationRow> rows;  // seed-major, then checkpoint, then arm
  int64_t primary_step = 0;
  // Per seed: rate without warm-up minus rate with warm-up at primary_step.
  std::vector<double> differences;
  double median_difference = 0.0;
};

// Paired runs per seed: both arms share initialization, crops and noise and
// differ only in lambda_warm. Rates are the logged training-batch rates.
AblationSummary WarmupAblation(const TrainConfig& config,
                               const std::vector<RgbImage>& corpus,
                               const AblationOptions& options,
                               std::ostream* progress = nullptr);
// "seed,step,lambda_warm,rate_x,rate_y,rate_z,rate" rows.
std::string FormatAblationCsv(const AblationSummary& summary);
// Per-seed differences and the median, as "seed,step,difference" rows and a
// final "median" row.
std::string FormatAblationSummary(const AblationSummary& summary,
                                  const AblationOptions& options);

}  // namespace lhgm

#endif  // LHGM_BENCH_H_
