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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "lhgm/distributions.h"

namespace lhgm {

namespace {

std::string Num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// splitmix64 finalizer; decorrelates the per-stream seeds.
uint64_t Mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double MeanSquaredError(const Tensor& a, const Tensor& b, Tensor* out) {
  *out = ReduceMean(Square(Sub(a, b)));
  return out->item();
}

}  // namespace

void TrainConfig::Validate() const {
  model.Validate();
  if (steps < 0 || warmup_steps < 0 || lr_switch_step < 0) {
    throw ConfigError("step counts must be non-negative");
  }
  if (batch < 1 || patch < kDownsampleZ || patch % kDownsampleZ != 0) {
    throw ConfigError("batch must be positive and patch a positive multiple of " +
                      std::to_string(kDownsampleZ));
  }
  if (!(lr_initial > 0.0) || !(lr_final > 0.0) || !(lambda_warm >= 0.0)) {
    throw ConfigError("learning rates must be positive and lambda_warm >= 0");
  }
  if (log_every < 1 || checkpoint_every < 0) {
    throw ConfigError("log_every must be positive, checkpoint_every >= 0");
  }
}

KeyValues TrainConfig::ToKeyValues() const {
  KeyValues kv = model.ToKeyValues();
  kv["steps"] = std::to_string(steps);
  kv["warmup_steps"] = std::to_string(warmup_steps);
  kv["lambda_warm"] = Num(lambda_warm);
  kv["batch"] = std::to_string(batch);
  kv["patch"] = std::to_string(patch);
  kv["lr_initial"] = Num(lr_initial);
  kv["lr_final"] = Num(lr_final);
  kv["lr_switch_step"] = std::to_string(lr_switch_step);
  kv["seed"] = std::to_string(seed);
  kv["log_every"] = std::to_string(log_every);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  return kv;
}

TrainConfig TrainConfig::FromReader(KeyValueReader& r) {
  TrainConfig c;
  c.model = ModelConfig::FromReader(r);
  c.steps = r.Int("steps", c.steps);
  c.warmup_steps = r.Int("warmup_steps", c.warmup_steps);
  c.lambda_warm = r.Double("lambda_warm", c.lambda_warm);
  c.batch = static_cast<int>(r.Int("batch", c.batch));
  c.patch = static_cast<int>(r.Int("patch", c.patch));
  c.lr_initial = r.Double("lr_initial", c.lr_initial);
  c.lr_final = r.Double("lr_final", c.lr_final);
  c.lr_switch_step = r.Int("lr_switch_step", c.lr_switch_step);
  c.seed = r.Uint("seed", c.seed);
  c.log_every = r.Int("log_every", c.log_every);
  c.checkpoint_every = r.Int("checkpoint_every", c.checkpoint_every);
  c.Validate();
  return c;
}

TrainConfig TrainConfig::FromFile(const std::string& path) {
  KeyValueReader reader(ReadKeyValueFile(path));
  TrainConfig c = FromReader(reader);
  reader.CheckAllConsumed();
  return c;
}

double LambdaSchedule(int64_t step, const TrainConfig& config) {
  return step < config.warmup_steps ? config.lambda_warm : 0.0;
}

double LearningRate(int64_t step, const TrainConfig& config) {
  return step < config.lr_switch_step ? config.lr_initial : config.lr_final;
}

TrainConfig DeskTrainConfig() {
  TrainConfig c;
  c.model = TinyModelConfig();
  c.model.pixel_unit = 128.0;
  c.model.pixel_scale_gain = 8.0;
  c.lr_initial = 3e-3;
  c.lr_final = 3e-4;
  return c;
}

LossBreakdown ComputeLoss(const Model& model, const ForwardOutputs& outputs,
                          const Tensor& x, double lambda) {
  const Family family = model.config().family;
  const double subpixels = static_cast<double>(NumElements(x.shape()));
  const double inv = 1.0 / subpixels;

  const Tensor bits_x =
      MixtureRateBits(outputs.x_params, x, kPixelAlphabet, family);
  const Tensor bits_y =
      MixtureRateBits(outputs.y_params, outputs.y_hat, std::nullopt, family);
  const Tensor bits_z = model.prior().RateBits(outputs.z_hat, std::nullopt);

  LossBreakdown loss;
  loss.lambda = lambda;
  const Tensor rx = MulScalar(bits_x, inv);
  const Tensor ry = MulScalar(bits_y, inv);
  const Tensor rz = MulScalar(bits_z, inv);
  loss.rate_x = rx.item();
  loss.rate_y = ry.item();
  loss.rate_z = rz.item();
  Tensor total = Add(Add(rx, ry), rz);

  Tensor l2x, l2y;
  if (lambda != 0.0) {
    loss.l2_x = MeanSquaredError(outputs.x_params.WeightedMean(), x, &l2x);
    loss.l2_y =
        MeanSquaredError(outputs.y_params.WeightedMean(), outputs.y_hat, &l2y);
    total = Add(total, MulScalar(Add(l2x, l2y), lambda));
  } else {
    NoGradGuard no_grad;
    loss.l2_x = MeanSquaredError(outputs.x_params.WeightedMean(), x, &l2x);
    loss.l2_y =
        MeanSquaredError(outputs.y_params.WeightedMean(), outputs.y_hat, &l2y);
  }
  loss.total = total;
  return loss;
}

LossBreakdown Loss(const Model& model, const ForwardOutputs& outputs,
                   const Tensor& x, int64_t step, const TrainConfig& config) {
  return ComputeLoss(model, outputs, x, LambdaSchedule(step, config));
}

bool AdamStep(std::span<Tensor* const> params, AdamState& state, double lr) {
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("Adam state does not match the parameters");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i]->size()) {
      throw std::invalid_argument("Adam moment shape mismatch");
    }
    for (double g : params[i]->grad()) {
      if (!std::isfinite(g)) {
        ++state.skipped;
        return false;
      }
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto grad = params[i]->grad();
    if (grad.empty()) continue;
    auto w = params[i]->mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = AdamState::kBeta1 * m[j] + (1.0 - AdamState::kBeta1) * grad[j];
      v[j] = AdamState::kBeta2 * v[j] + (1.0 - AdamState::kBeta2) * grad[j] * grad[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  }
  return true;
}

PatchSampler::PatchSampler(const std::vector<RgbImage>& corpus, int patch,
                           std::ostream* warnings)
    : patch_(patch) {
  if (patch < 1) throw std::invalid_argument("patch size must be positive");
  for (const RgbImage& img : corpus) {
    if (img.width >= patch && img.height >= patch) {
      images_.push_back(&img);
    } else if (warnings) {
      *warnings << "warning: skipping " << img.width << "x" << img.height
                << " image smaller than the " << patch << "x" << patch
                << " patch\n";
    }
  }
  if (images_.empty()) {
    throw std::invalid_argument("no image in the corpus is at least " +
                                std::to_string(patch) + "x" +
                                std::to_string(patch));
  }
}

Tensor PatchSampler::Sample(int batch, Rng& rng) const {
  const int64_t p = patch_;
  Tensor out(Shape{batch, 3, p, p});
  auto d = out.mutable_data();
  for (int b = 0; b < batch; ++b) {
    const RgbImage& img = *images_[rng.Below(images_.size())];
    const int x0 = static_cast<int>(rng.Below(img.width - patch_ + 1));
    const int y0 = static_cast<int>(rng.Below(img.height - patch_ + 1));
    for (int c = 0; c < 3; ++c) {
      for (int r = 0; r < patch_; ++r) {
        double* row = &d[((b * 3 + c) * p + r) * p];
        for (int col = 0; col < patch_; ++col) {
          row[col] = img.at(x0 + col, y0 + r, c);
        }
      }
    }
  }
  return out;
}

Tensor SamplePatches(const std::vector<RgbImage>& corpus, int patch, int batch,
                     Rng& rng, std::ostream* warnings) {
  return PatchSampler(corpus, patch, warnings).Sample(batch, rng);
}

Tensor ImageToTensor(const RgbImage& image) {
  const int64_t h = image.height, w = image.width;
  Tensor out(Shape{1, 3, h, w});
  auto d = out.mutable_data();
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < image.height; ++r) {
      for (int col = 0; col < image.width; ++col) {
        d[(c * h + r) * w + col] = image.at(col, r, c);
      }
    }
  }
  return out;
}

std::string MetricsHeader() {
  return "seed,step,rate_x,rate_y,rate_z,l2_x,l2_y,lambda,total,wall_seconds";
}

std::string FormatMetrics(const MetricsRecord& r, uint64_t seed) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%llu,%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f",
                static_cast<unsigned long long>(seed),
                static_cast<long long>(r.step), r.rate_x, r.rate_y, r.rate_z,
                r.l2_x, r.l2_y, r.lambda, r.total, r.wall_seconds);
  return buf;
}

uint64_t InitSeed(uint64_t seed) { return Mix(seed ^ 0x1001); }
uint64_t CropSeed(uint64_t seed) { return Mix(seed ^ 0x2002); }
uint64_t NoiseSeed(uint64_t seed) { return Mix(seed ^ 0x3003); }

TrainResult TrainLoop(const TrainConfig& config,
                      const std::vector<RgbImage>& corpus,
                      const TrainOptions& options) {
  config.Validate();
  const PatchSampler sampler(corpus, config.patch, options.warnings);
  TrainResult result{Model(config.model, InitSeed(config.seed)), {}, 0};
  Model& model = result.model;
  Rng crop_rng(CropSeed(config.seed));
  Rng noise_rng(NoiseSeed(config.seed));

  std::vector<Tensor*> params;
  for (auto& [name, t] : model.Parameters()) {
    t->set_requires_grad(true);
    params.push_back(t);
  }
  AdamState adam;

  if (options.metrics) *options.metrics << MetricsHeader() << "\n";
  const auto start = std::chrono::steady_clock::now();
  double first_total = 0.0;
  int64_t above = 0;

  for (int64_t step = 0; step < config.steps; ++step) {
    const Tensor x = sampler.Sample(config.batch, crop_rng);
    GradTape::Current().Clear();
    for (Tensor* p : params) p->ZeroGrad();
    const ForwardOutputs out = model.Forward(x, Mode::kTrain, &noise_rng);
    const LossBreakdown loss = Loss(model, out, x, step, config);
    Backward(loss.total);
    GradTape::Current().Clear();
    AdamStep(params, adam, LearningRate(step, config));

    const double total = loss.total.item();
    if (step == 0) first_total = total;
    above = (std::isfinite(total) && total <= 10.0 * std::abs(first_total))
                ? 0
                : above + 1;
    if (above >= 100) {
      throw TrainingDivergedError(
          "training diverged at step " + std::to_string(step) + ": total " +
          Num(total) + " above 10x the initial " + Num(first_total) +
          " for 100 consecutive steps");
    }

    const bool last = step + 1 == config.steps;
    const bool wanted =
        std::find(options.record_steps.begin(), options.record_steps.end(),
                  step) != options.record_steps.end();
    if (step % config.log_every == 0 || last || wanted) {
      MetricsRecord rec{step,        loss.rate_x, loss.rate_y,
                        loss.rate_z, loss.l2_x,   loss.l2_y,
                        loss.lambda, total,       0.0};
      rec.wall_seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - start)
                             .count();
      if (options.metrics) {
        *options.metrics << FormatMetrics(rec, config.seed) << "\n";
        options.metrics->flush();
      }
      result.records.push_back(rec);
    }
    if (!options.checkpoint_path.empty() && config.checkpoint_every > 0 &&
        (step + 1) % config.checkpoint_every == 0) {
      SaveWeights(model, options.checkpoint_path);
    }
  }
  for (Tensor* p : params) {
    p->ZeroGrad();
    p->set_requires_grad(false);
  }
  result.skipped_steps = adam.skipped;
  if (!options.checkpoint_path.empty()) SaveWeights(model, options.checkpoint_path);
  return result;
}

}  // namespace lhgm
