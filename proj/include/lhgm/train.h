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

#ifndef LHGM_TRAIN_H_
#define LHGM_TRAIN_H_

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lhgm/config.h"
#include "lhgm/image_io.h"
#include "lhgm/model.h"
#include "lhgm/random.h"
#include "lhgm/tensor.h"

namespace lhgm {

// Rates are bits per sub-pixel of the batch (bits / (N * 3 * H * W)); the
// L2 terms are per-element means of (mu - target)^2. total is the scalar
// rate_x + rate_y + rate_z + lambda * (l2_x + l2_y), and carries the tape.
struct LossBreakdown {
  double rate_x = 0.0;
  double rate_y = 0.0;
  double rate_z = 0.0;
  double l2_x = 0.0;
  double l2_y = 0.0;
  double lambda = 0.0;
  Tensor total;

  double rate() const { return rate_x + rate_y + rate_z; }
};

struct TrainConfig {
  // Reference-scale values: 680k steps, warm-up 80k, switch at 600k,
  // 128x128 patches.
  int64_t steps = 5000;
  int64_t warmup_steps = 600;
  double lambda_warm = 0.6;
  int batch = 8;
  int patch = 32;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;
  int64_t lr_switch_step = 4200;
  uint64_t seed = 1;
  int64_t log_every = 50;
  int64_t checkpoint_every = 0;  // 0: only the final weights
  ModelConfig model;

  void Validate() const;
  // Train and model keys share one flat namespace.
  KeyValues ToKeyValues() const;
  static TrainConfig FromReader(KeyValueReader& reader);
  static TrainConfig FromFile(const std::string& path);
};

// lambda_warm while step < warmup_steps, 0 afterwards.
double LambdaSchedule(int64_t step, const TrainConfig& config);
double LearningRate(int64_t step, const TrainConfig& config);

// Minutes-scale preset: tiny model, lr 3e-3 -> 3e-4 at step 4200, pixel
// heads with unit 128 and scale gain 8. Mirrors configs/desk.cfg.
TrainConfig DeskTrainConfig();

// Builds the rate and L2 terms from train-mode outputs. x holds the true
// pixels. With lambda == 0 the L2 terms are reported but not composed into
// total, so the gradient is exactly the rate gradient.
LossBreakdown ComputeLoss(const Model& model, const ForwardOutputs& outputs,
                          const Tensor& x, double lambda);
LossBreakdown Loss(const Model& model, const ForwardOutputs& outputs,
                   const Tensor& x, int64_t step, const TrainConfig& config);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  int64_t t = 0;        // applied steps
  int64_t skipped = 0;  // steps dropped for non-finite gradients
};

// One bias-corrected Adam update over `params` from their accumulated
// gradients (missing gradients count as zero). A non-finite gradient
// anywhere drops the whole step and returns false.
bool AdamStep(std::span<Tensor* const> params, AdamState& state, double lr);

// Uniform random crops from the images that are at least patch x patch.
class PatchSampler {
 public:
  // Undersized images are skipped with a warning on `warnings` (may be
  // null). Throws std::invalid_argument if nothing is left.
  PatchSampler(const std::vector<RgbImage>& corpus, int patch,
               std::ostream* warnings);

  // [batch, 3, patch, patch] pixel values in [0, 255].
  Tensor Sample(int batch, Rng& rng) const;
  size_t usable() const { return images_.size(); }

 private:
  std::vector<const RgbImage*> images_;
  int patch_;
};

Tensor SamplePatches(const std::vector<RgbImage>& corpus, int patch, int batch,
                     Rng& rng, std::ostream* warnings);

// [1, 3, H, W] pixel values of an image.
Tensor ImageToTensor(const RgbImage& image);

struct MetricsRecord {
  int64_t step = 0;
  double rate_x = 0.0;
  double rate_y = 0.0;
  double rate_z = 0.0;
  double l2_x = 0.0;
  double l2_y = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  double wall_seconds = 0.0;

  double rate() const { return rate_x + rate_y + rate_z; }
};

// Comma-separated metrics log.
std::string MetricsHeader();
std::string FormatMetrics(const MetricsRecord& record, uint64_t seed);

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::ostream* metrics = nullptr;   // CSV log, one row per logged step
  std::ostream* warnings = nullptr;
  std::string checkpoint_path;       // empty: no checkpoints written
  // Steps whose metrics are kept in TrainResult::records regardless of
  // log_every (e.g. ablation checkpoints).
  std::vector<int64_t> record_steps;
};

struct TrainResult {
  Model model;
  std::vector<MetricsRecord> records;  // logged steps, ascending
  int64_t skipped_steps = 0;
};

// Runs config.steps optimization steps. Randomness comes from three streams
// derived from config.seed (initialization, crops, quantization noise), so
// runs that differ only in lambda see identical crops and noise. Throws
// TrainingDivergedError when total stays above 10x its first value for 100
// consecutive steps.
TrainResult TrainLoop(const TrainConfig& config,
                      const std::vector<RgbImage>& corpus,
                      const TrainOptions& options = {});

// Per-stream seeds used by TrainLoop.
uint64_t InitSeed(uint64_t seed);
uint64_t CropSeed(uint64_t seed);
uint64_t NoiseSeed(uint64_t seed);

}  // namespace lhgm

#endif  // LHGM_TRAIN_H_
