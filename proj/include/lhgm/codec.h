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

#ifndef LHGM_CODEC_H_
#define LHGM_CODEC_H_

// Lossless image codec built on the hyperprior model.
//
// Container (format version 1), integers little-endian:
//
//   offset size field
//        0    4 magic "LHGM"
//        4    1 version
//        5    1 flags (bit 0: context model used for y)
//        6    4 width
//       10    4 height
//       14    1 channels (always 3)
//       15    1 mixtures K
//       16    8 weights digest (WeightsDigest of the model)
//       24    2 y alphabet lo (i16)
//       26    2 y alphabet hi (i16)
//       28    2 z alphabet lo (i16)
//       30    2 z alphabet hi (i16)
//       32    4 z stream length
//       36    4 y stream length
//       40    4 x stream length
//       44      z stream, y stream, x stream
//
// The image is reflect-padded to a multiple of 16 for the transforms; only
// the true width x height sub-pixels of x are coded. Coding order:
//   z: channel-major raster, factorized prior per channel;
//   y: raster over positions, all channels per position, tables from the
//      hyper features (fused with the causal context when flagged);
//   x: channel-major raster over the true image, tables from synthesis.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lhgm/coder.h"
#include "lhgm/distributions.h"
#include "lhgm/image_io.h"
#include "lhgm/model.h"

namespace lhgm {

inline constexpr uint8_t kContainerVersion = 1;
inline constexpr size_t kContainerHeaderBytes = 44;
inline constexpr uint8_t kFlagContext = 0x01;
// Widest latent alphabet the codec accepts.
inline constexpr int kMaxLatentAlphabet = 4096;

class DigestMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RoundTripError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ContainerHeader {
  uint8_t version = kContainerVersion;
  uint8_t flags = 0;
  uint32_t width = 0;
  uint32_t height = 0;
  uint8_t channels = 3;
  uint8_t mixtures = 0;
  uint64_t digest = 0;
  Alphabet y_alphabet;
  Alphabet z_alphabet;
  uint32_t z_bytes = 0;
  uint32_t y_bytes = 0;
  uint32_t x_bytes = 0;

  bool context() const { return (flags & kFlagContext) != 0; }
  size_t file_bytes() const {
    return kContainerHeaderBytes + size_t{z_bytes} + y_bytes + x_bytes;
  }
};

std::vector<uint8_t> SerializeHeader(const ContainerHeader& header);
// Checks magic, version, reserved flag bits, dimensions and alphabets, and
// that the declared stream lengths account for exactly `file.size()` bytes.
// Throws CorruptStreamError.
ContainerHeader ParseHeader(std::span<const uint8_t> file);

// Reflect-padded copy (edge pixel not repeated) of `image` whose sides are
// rounded up to a multiple of `multiple`.
RgbImage PadReflect(const RgbImage& image, int multiple);

struct CompressOptions {
  // Fuse the causal context into the y tables; requires a model trained
  // with the context model.
  bool context = true;
};

// Optional instrumentation: a hash of every coded table, in coding order.
struct CodecTrace {
  std::vector<uint64_t> z_tables;
  std::vector<uint64_t> y_tables;
  std::vector<uint64_t> x_tables;
};

// Throws UnsupportedFormatError for empty or malformed images and
// std::invalid_argument when context is requested from a model without it.
std::vector<uint8_t> Compress(const RgbImage& image, const Model& model,
                              const CompressOptions& options = {},
                              CodecTrace* trace = nullptr);
// Throws DigestMismatchError when the file was written with other weights
// and CorruptStreamError for any damaged or truncated file.
RgbImage Decompress(std::span<const uint8_t> file, const Model& model,
                    CodecTrace* trace = nullptr);

struct BpspReport {
  std::string name;
  uint32_t width = 0;
  uint32_t height = 0;
  uint64_t subpixels = 0;
  uint64_t file_bits = 0;
  uint64_t header_bits = 0;
  uint64_t z_bits = 0;
  uint64_t y_bits = 0;
  uint64_t x_bits = 0;
  double bpsp = 0.0;
};

// bits / (3 * width * height).
double Bpsp(uint64_t file_bits, uint32_t width, uint32_t height);
BpspReport ReportFor(const std::string& name, std::span<const uint8_t> file);

struct EvalResult {
  std::vector<BpspReport> images;  // in input order
  double mean_bpsp = 0.0;
  uint64_t total_bits = 0;
  uint64_t total_subpixels = 0;
};

// Compresses and decompresses every image, `jobs` at a time. Any mismatch
// throws RoundTripError naming the image.
EvalResult EvalBpsp(const std::vector<std::string>& names,
                    const std::vector<RgbImage>& images, const Model& model,
                    const CompressOptions& options = {}, int jobs = 1);
// Reads every image in a directory (sorted) and evaluates it.
EvalResult EvalDirectory(const std::string& directory, const Model& model,
                         const CompressOptions& options = {}, int jobs = 1);

// Comma-separated report: header line, one row per image, then a "mean"
// row whose bpsp is the mean of the per-image values.
std::string FormatEvalReport(const EvalResult& result, uint64_t digest);

}  // namespace lhgm

#endif  // LHGM_CODEC_H_
