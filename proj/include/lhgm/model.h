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

#ifndef LHGM_MODEL_H_
#define LHGM_MODEL_H_

// Two-scale hyperprior network.
//
//   x --g_a--> y --h_a--> z        (x: [N,3,H,W] pixel values 0..255)
//   z~/z^ --h_s--> hyper features --(+ masked conv over y~/y^)--> y params
//   y~/y^ --g_s--> x params
//
// Shapes: y is [N, C_y, H/4, W/4], z is [N, C_z, H/16, W/16]. Parameter
// heads emit 3*K channels per coded channel, split by SplitMixtureParams.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lhgm/config.h"
#include "lhgm/distributions.h"
#include "lhgm/factorized_prior.h"
#include "lhgm/random.h"
#include "lhgm/tensor.h"

namespace lhgm {

inline constexpr int kDownsampleY = 4;
inline constexpr int kDownsampleZ = 16;
inline constexpr int kContextKernel = 5;

struct ModelConfig {
  int main_channels = 32;        // hidden width of g_a and g_s
  int hyper_channels = 64;       // hidden width of h_a, h_s and the fusion
  int latent_channels = 32;      // C_y
  int hyper_latent_channels = 16;  // C_z
  int mixtures = 3;              // K
  bool context_model = true;
  Family family = Family::kGaussian;
  // x-side head units: mean = 127.5 + pixel_unit * raw, scale =
  // pixel_unit * softplus(pixel_scale_gain * raw).
  double pixel_unit = 16.0;
  double pixel_scale_gain = 1.0;
  double prior_init_scale = 10.0;

  HeadUnits pixel_units() const { return {127.5, pixel_unit, pixel_scale_gain}; }
  int y_param_channels() const { return 3 * mixtures * latent_channels; }
  int x_param_channels() const { return 3 * mixtures * 3; }

  // Throws ConfigError for non-positive sizes.
  void Validate() const;
  KeyValues ToKeyValues() const;
  // Reads the model keys; absent keys keep their defaults.
  static ModelConfig FromReader(KeyValueReader& reader);
};

// A small configuration for tests and desk-scale runs.
ModelConfig TinyModelConfig();

enum class Mode { kTrain, kInfer };

struct ForwardOutputs {
  Tensor y;
  Tensor y_hat;  // y + U(-1/2, 1/2) in train mode, round(y) in infer mode
  Tensor z;
  Tensor z_hat;
  Tensor hyper_raw;  // h_s output, [N, 3*K*C_y, H/4, W/4]
  MixtureParams y_params;
  MixtureParams x_params;
};

class Model {
 public:
  // Deterministic initialization from `seed`: kernels uniform in
  // +-1/sqrt(fan_in), biases zero, prior per FactorizedPrior.
  Model(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Every learnable tensor, sorted by name; includes the prior ("prior.*").
  std::vector<std::pair<std::string, Tensor*>> Parameters();
  std::vector<std::pair<std::string, const Tensor*>> Parameters() const;
  Tensor& Param(const std::string& name);
  const Tensor& Param(const std::string& name) const;
  const FactorizedPrior& prior() const { return prior_; }

  // Input x is in pixel units; it is centred and scaled internally. H and W
  // must be multiples of kDownsampleZ.
  Tensor Analysis(const Tensor& x) const;
  Tensor HyperAnalysis(const Tensor& y) const;
  Tensor HyperSynthesis(const Tensor& z_hat) const;
  // Whole-plane context fusion; throws std::logic_error when the context
  // model is off.
  Tensor ContextFuse(const Tensor& y_hat, const Tensor& hyper_raw) const;
  // Raw y-parameter head output (context fused when enabled).
  Tensor YParamsRaw(const Tensor& y_hat, const Tensor& hyper_raw) const;
  Tensor Synthesis(const Tensor& y_hat) const;  // [N, 9*K, H, W]

  MixtureParams SplitY(const Tensor& raw) const;
  MixtureParams SplitX(const Tensor& raw) const;

  // Fused raw y parameters (3*K*C_y values, head layout) at one position,
  // reading y_hat only at raster positions before (row, col) in image n.
  // Used by both the encoder and the decoder so their tables agree bitwise.
  void ContextParamsAt(const Tensor& y_hat, const Tensor& hyper_raw, int64_t n,
                       int64_t row, int64_t col, std::span<double> raw) const;

  ForwardOutputs Forward(const Tensor& x, Mode mode, Rng* rng) const;

 private:
  void AddConv(const std::string& name, int64_t out, int64_t in, int64_t k,
               Rng& rng);
  void AddConvTransposed(const std::string& name, int64_t in, int64_t out,
                         int64_t k, Rng& rng);
  Tensor Conv(const std::string& name, const Tensor& x, int stride,
              int padding) const;
  Tensor Deconv(const std::string& name, const Tensor& x) const;

  ModelConfig config_;
  std::map<std::string, Tensor> tensors_;
  FactorizedPrior prior_;
};

// y + u with u ~ U(-1/2, 1/2) per element; gradient is the identity.
Tensor QuantizeTrain(const Tensor& v, Rng& rng);
// Rounds half away from zero; no gradient.
Tensor QuantizeInfer(const Tensor& v);

// Splits one position's raw head values for channel c (head layout as in
// SplitMixtureParams) into K weights, means and scales.
void SplitMixtureElement(std::span<const double> raw, int K, int64_t channels,
                         int64_t c, HeadUnits units, std::span<double> w,
                         std::span<double> mu, std::span<double> sigma);

// Weight file:
//   "LHGW" | u32 version | u32 length + model config text |
//   u32 tensor count | per tensor (sorted by name): u32 name length, name,
//   u32 rank, rank x i64 dims, float64 data
// All integers and floats little-endian.
std::vector<uint8_t> SerializeWeights(const Model& model);
Model DeserializeWeights(std::span<const uint8_t> bytes);
void SaveWeights(const Model& model, const std::string& path);
Model LoadWeights(const std::string& path);
// FNV-1a 64 of SerializeWeights().
uint64_t WeightsDigest(const Model& model);
uint64_t Fnv1a64(std::span<const uint8_t> bytes, uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace lhgm

#endif  // LHGM_MODEL_H_
