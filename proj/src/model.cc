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

#include "lhgm/model.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace lhgm {

namespace {

constexpr double kSlope = 0.01;
constexpr double kPixelCentre = 127.5;

double SoftplusScalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

void ModelConfig::Validate() const {
  if (main_channels < 1 || hyper_channels < 1 || latent_channels < 1 ||
      hyper_latent_channels < 1 || mixtures < 1) {
    throw ConfigError("model channel counts and mixtures must be >= 1");
  }
  if (!(pixel_unit > 0) || !(pixel_scale_gain > 0) || !(prior_init_scale > 0)) {
    throw ConfigError(
        "pixel_unit, pixel_scale_gain and prior_init_scale must be positive");
  }
}

KeyValues ModelConfig::ToKeyValues() const {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {
      {"main_channels", std::to_string(main_channels)},
      {"hyper_channels", std::to_string(hyper_channels)},
      {"latent_channels", std::to_string(latent_channels)},
      {"hyper_latent_channels", std::to_string(hyper_latent_channels)},
      {"mixtures", std::to_string(mixtures)},
      {"context_model", context_model ? "true" : "false"},
      {"family", std::string(FamilyName(family))},
      {"pixel_unit", num(pixel_unit)},
      {"pixel_scale_gain", num(pixel_scale_gain)},
      {"prior_init_scale", num(prior_init_scale)},
  };
}

ModelConfig ModelConfig::FromReader(KeyValueReader& r) {
  ModelConfig c;
  c.main_channels = static_cast<int>(r.Int("main_channels", c.main_channels));
  c.hyper_channels = static_cast<int>(r.Int("hyper_channels", c.hyper_channels));
  c.latent_channels =
      static_cast<int>(r.Int("latent_channels", c.latent_channels));
  c.hyper_latent_channels = static_cast<int>(
      r.Int("hyper_latent_channels", c.hyper_latent_channels));
  c.mixtures = static_cast<int>(r.Int("mixtures", c.mixtures));
  c.context_model = r.Bool("context_model", c.context_model);
  try {
    c.family = ParseFamily(r.String("family", std::string(FamilyName(c.family))));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.pixel_unit = r.Double("pixel_unit", c.pixel_unit);
  c.pixel_scale_gain = r.Double("pixel_scale_gain", c.pixel_scale_gain);
  c.prior_init_scale = r.Double("prior_init_scale", c.prior_init_scale);
  c.Validate();
  return c;
}

ModelConfig TinyModelConfig() {
  ModelConfig c;
  c.main_channels = 12;
  c.hyper_channels = 12;
  c.latent_channels = 8;
  c.hyper_latent_channels = 4;
  return c;
}

Model::Model(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.Validate();
  Rng rng(seed);
  const int64_t n = config_.main_channels, m = config_.hyper_channels;
  const int64_t cy = config_.latent_channels, cz = config_.hyper_latent_channels;
  const int64_t py = config_.y_param_channels();
  AddConv("ga.conv0", n, 3, 3, rng);
  AddConv("ga.conv1", n, n, 3, rng);
  AddConv("ga.conv2", cy, n, 3, rng);
  AddConv("ga.conv3", cy, cy, 3, rng);
  AddConv("ha.conv0", m, cy, 3, rng);
  AddConv("ha.conv1", cz, m, 3, rng);
  AddConvTransposed("hs.deconv0", cz, m, 4, rng);
  AddConvTransposed("hs.deconv1", m, py, 4, rng);
  AddConv("ctx.mask", m, cy, kContextKernel, rng);
  AddConv("ctx.fuse0", m, m + py, 1, rng);
  AddConv("ctx.fuse1", py, m, 1, rng);
  AddConvTransposed("gs.deconv0", cy, n, 4, rng);
  AddConv("gs.conv1", n, n, 3, rng);
  AddConvTransposed("gs.deconv2", n, n, 4, rng);
  AddConv("gs.head", config_.x_param_channels(), n, 1, rng);
  prior_ = FactorizedPrior(static_cast<int>(cz), config_.prior_init_scale,
                           rng.NextU64());
}

void Model::AddConv(const std::string& name, int64_t out, int64_t in,
                    int64_t k, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  Tensor w(Shape{out, in, k, k}, 0.0, true);
  for (double& v : w.mutable_data()) v = rng.Uniform(-bound, bound);
  tensors_[name + ".w"] = w;
  tensors_[name + ".b"] = Tensor(Shape{out}, 0.0, true);
}

void Model::AddConvTransposed(const std::string& name, int64_t in,
                              int64_t out, int64_t k, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(out * k * k));
  Tensor w(Shape{in, out, k, k}, 0.0, true);
  for (double& v : w.mutable_data()) v = rng.Uniform(-bound, bound);
  tensors_[name + ".w"] = w;
  tensors_[name + ".b"] = Tensor(Shape{out}, 0.0, true);
}

std::vector<std::pair<std::string, Tensor*>> Model::Parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : tensors_) out.emplace_back(name, &t);
  for (auto& p : prior_.NamedParameters()) out.push_back(p);
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::Parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<Model*>(this)->Parameters()) {
    out.emplace_back(name, t);
  }
  return out;
}

Tensor& Model::Param(const std::string& name) {
  for (auto& [n, t] : Parameters()) {
    if (n == name) return *t;
  }
  throw std::out_of_range("no parameter named " + name);
}

const Tensor& Model::Param(const std::string& name) const {
  return const_cast<Model*>(this)->Param(name);
}

Tensor Model::Conv(const std::string& name, const Tensor& x, int stride,
                   int padding) const {
  return Conv2d(x, tensors_.at(name + ".w"), tensors_.at(name + ".b"), stride,
                padding);
}

Tensor Model::Deconv(const std::string& name, const Tensor& x) const {
  return Conv2dTransposed(x, tensors_.at(name + ".w"),
                          tensors_.at(name + ".b"), 2, 1);
}

Tensor Model::Analysis(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw DimensionError("analysis expects [N, 3, H, W], got " +
                         ShapeToString(x.shape()));
  }
  if (x.dim(2) % kDownsampleZ != 0 || x.dim(3) % kDownsampleZ != 0) {
    throw DimensionError("analysis input " + ShapeToString(x.shape()) +
                         " is not a multiple of " +
                         std::to_string(kDownsampleZ) + "; pad it first");
  }
  const Tensor in = MulScalar(AddScalar(x, -kPixelCentre), 1.0 / kPixelCentre);
  const Tensor h1 = LeakyRelu(Conv("ga.conv0", in, 2, 1), kSlope);
  const Tensor a1 = LeakyRelu(Add(h1, Conv("ga.conv1", h1, 1, 1)), kSlope);
  const Tensor h2 = Conv("ga.conv2", a1, 2, 1);
  return Add(h2, Conv("ga.conv3", LeakyRelu(h2, kSlope), 1, 1));
}

Tensor Model::HyperAnalysis(const Tensor& y) const {
  const Tensor h = LeakyRelu(Conv("ha.conv0", y, 2, 1), kSlope);
  return Conv("ha.conv1", h, 2, 1);
}

Tensor Model::HyperSynthesis(const Tensor& z_hat) const {
  const Tensor h = LeakyRelu(Deconv("hs.deconv0", z_hat), kSlope);
  return Deconv("hs.deconv1", h);
}

Tensor Model::ContextFuse(const Tensor& y_hat, const Tensor& hyper_raw) const {
  if (!config_.context_model) {
    throw std::logic_error("context fusion requested with the context model off");
  }
  const Tensor ctx = MaskedConv2d(y_hat, tensors_.at("ctx.mask.w"),
                                  tensors_.at("ctx.mask.b"));
  const Tensor h =
      LeakyRelu(Conv("ctx.fuse0", ConcatChannels(ctx, hyper_raw), 1, 0), kSlope);
  return Conv("ctx.fuse1", h, 1, 0);
}

Tensor Model::YParamsRaw(const Tensor& y_hat, const Tensor& hyper_raw) const {
  return config_.context_model ? ContextFuse(y_hat, hyper_raw) : hyper_raw;
}

Tensor Model::Synthesis(const Tensor& y_hat) const {
  const Tensor s1 = LeakyRelu(Deconv("gs.deconv0", y_hat), kSlope);
  const Tensor s2 = LeakyRelu(Add(s1, Conv("gs.conv1", s1, 1, 1)), kSlope);
  const Tensor s3 = LeakyRelu(Deconv("gs.deconv2", s2), kSlope);
  return Conv("gs.head", s3, 1, 0);
}

MixtureParams Model::SplitY(const Tensor& raw) const {
  return SplitMixtureParams(raw, config_.mixtures, config_.latent_channels);
}

MixtureParams Model::SplitX(const Tensor& raw) const {
  return SplitMixtureParams(raw, config_.mixtures, 3, config_.pixel_units());
}

void Model::ContextParamsAt(const Tensor& y_hat, const Tensor& hyper_raw,
                            int64_t n, int64_t row, int64_t col,
                            std::span<double> raw) const {
  if (!config_.context_model) {
    throw std::logic_error("context fusion requested with the context model off");
  }
  const int64_t cy = y_hat.dim(1), h = y_hat.dim(2), w = y_hat.dim(3);
  const int64_t m = config_.hyper_channels, p = config_.y_param_channels();
  if (static_cast<int64_t>(raw.size()) != p) {
    throw DimensionError("context output span has the wrong size");
  }
  constexpr int64_t k = kContextKernel, half = kContextKernel / 2;
  const double* mw = tensors_.at("ctx.mask.w").data().data();
  const double* mb = tensors_.at("ctx.mask.b").data().data();
  const double* yd = y_hat.data().data() + n * cy * h * w;

  std::vector<double> in(static_cast<size_t>(m + p));
  for (int64_t o = 0; o < m; ++o) {
    double acc = mb[o];
    for (int64_t c = 0; c < cy; ++c) {
      const double* kern = mw + (o * cy + c) * k * k;
      const double* plane = yd + c * h * w;
      // Mask A: rows above the centre, then the centre row left of it.
      for (int64_t ky = 0; ky <= half; ++ky) {
        const int64_t iy = row + ky - half;
        if (iy < 0 || iy >= h) continue;
        const int64_t kx_end = ky < half ? k : half;
        for (int64_t kx = 0; kx < kx_end; ++kx) {
          const int64_t ix = col + kx - half;
          if (ix < 0 || ix >= w) continue;
          acc += plane[iy * w + ix] * kern[ky * k + kx];
        }
      }
    }
    in[o] = acc;
  }
  const int64_t hp = hyper_raw.dim(2) * hyper_raw.dim(3);
  const double* hd = hyper_raw.data().data() + n * p * hp + row * w + col;
  for (int64_t c = 0; c < p; ++c) in[m + c] = hd[c * hp];

  const double* w0 = tensors_.at("ctx.fuse0.w").data().data();
  const double* b0 = tensors_.at("ctx.fuse0.b").data().data();
  std::vector<double> hidden(static_cast<size_t>(m));
  for (int64_t o = 0; o < m; ++o) {
    double acc = b0[o];
    for (int64_t i = 0; i < m + p; ++i) acc += w0[o * (m + p) + i] * in[i];
    hidden[o] = acc > 0 ? acc : kSlope * acc;
  }
  const double* w1 = tensors_.at("ctx.fuse1.w").data().data();
  const double* b1 = tensors_.at("ctx.fuse1.b").data().data();
  for (int64_t q = 0; q < p; ++q) {
    double acc = b1[q];
    for (int64_t o = 0; o < m; ++o) acc += w1[q * m + o] * hidden[o];
    raw[q] = acc;
  }
}

ForwardOutputs Model::Forward(const Tensor& x, Mode mode, Rng* rng) const {
  if (mode == Mode::kTrain && rng == nullptr) {
    throw std::invalid_argument("train-mode forward needs an rng");
  }
  ForwardOutputs out;
  out.y = Analysis(x);
  out.z = HyperAnalysis(out.y);
  if (mode == Mode::kTrain) {
    out.y_hat = QuantizeTrain(out.y, *rng);
    out.z_hat = QuantizeTrain(out.z, *rng);
  } else {
    out.y_hat = QuantizeInfer(out.y);
    out.z_hat = QuantizeInfer(out.z);
  }
  out.hyper_raw = HyperSynthesis(out.z_hat);
  out.y_params = SplitY(YParamsRaw(out.y_hat, out.hyper_raw));
  out.x_params = SplitX(Synthesis(out.y_hat));
  return out;
}

Tensor QuantizeTrain(const Tensor& v, Rng& rng) {
  Tensor noise(v.shape());
  for (double& u : noise.mutable_data()) u = rng.Uniform() - 0.5;
  return Add(v, noise);
}

Tensor QuantizeInfer(const Tensor& v) {
  Tensor out(v.shape());
  auto d = out.mutable_data();
  for (size_t i = 0; i < d.size(); ++i) d[i] = RoundHalfAway(v[i]);
  return out;
}

void SplitMixtureElement(std::span<const double> raw, int K, int64_t channels,
                         int64_t c, HeadUnits units, std::span<double> w,
                         std::span<double> mu, std::span<double> sigma) {
  const int64_t kc = K * channels;
  double top = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) top = std::max(top, raw[k * channels + c]);
  double total = 0.0;
  for (int k = 0; k < K; ++k) {
    w[k] = std::exp(raw[k * channels + c] - top);
    total += w[k];
  }
  for (int k = 0; k < K; ++k) {
    w[k] /= total;
    mu[k] = units.mean_offset + units.unit * raw[kc + k * channels + c];
    sigma[k] = std::max(
        units.unit * SoftplusScalar(units.scale_gain * raw[2 * kc + k * channels + c]),
        kScaleFloor);
  }
}

}  // namespace lhgm
