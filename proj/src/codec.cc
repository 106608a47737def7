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

#include "lhgm/codec.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <thread>

#include "lhgm/train.h"

namespace lhgm {

namespace {

constexpr char kMagic[4] = {'L', 'H', 'G', 'M'};

void PutLe(std::vector<uint8_t>& out, uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint64_t GetLe(std::span<const uint8_t> in, size_t pos, int n) {
  uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= uint64_t{in[pos + i]} << (8 * i);
  return v;
}

int16_t GetI16(std::span<const uint8_t> in, size_t pos) {
  return static_cast<int16_t>(static_cast<uint16_t>(GetLe(in, pos, 2)));
}

uint64_t HashCdf(const QuantizedCdf& cdf) {
  return Fnv1a64(std::span<const uint8_t>(
      reinterpret_cast<const uint8_t*>(cdf.cum.data()),
      cdf.cum.size() * sizeof(uint32_t)));
}

// Maps i into [0, n) by mirroring about the edge samples.
int Reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Alphabet LatentAlphabet(const Tensor& v, const char* what) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : v.data()) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string(what) + " latents are not finite");
    }
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double a = lo - 1.0, b = hi + 1.0;
  if (a < std::numeric_limits<int16_t>::min() ||
      b > std::numeric_limits<int16_t>::max() || b - a + 1 > kMaxLatentAlphabet) {
    throw std::runtime_error(std::string(what) + " latent range [" +
                             std::to_string(lo) + ", " + std::to_string(hi) +
                             "] is too wide to code");
  }
  return {static_cast<int>(a), static_cast<int>(b)};
}

void CheckImage(const RgbImage& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<size_t>(image.width) * image.height * 3) {
    throw UnsupportedFormatError("image must be a non-empty 8-bit RGB raster");
  }
}

// Shared table construction so the encoder and decoder run the same code.
class Tables {
 public:
  Tables(const Model& model, bool context)
      : model_(model), context_(context), K_(model.config().mixtures) {
    w_.resize(K_);
    mu_.resize(K_);
    sigma_.resize(K_);
  }

  void ZTables(const Alphabet& alphabet) {
    const FactorizedPrior& prior = model_.prior();
    z_.resize(prior.channels());
    std::vector<double> pmf(alphabet.size());
    for (int c = 0; c < prior.channels(); ++c) {
      prior.Pmf(c, alphabet, pmf);
      QuantizeCdfInto(pmf, z_[c]);
    }
  }
  const QuantizedCdf& z(int c) const { return z_[c]; }

  // Raw y parameters for all channels at one position.
  void YRaw(const Tensor& y_hat, const Tensor& hyper_raw, int64_t row,
            int64_t col) {
    const int64_t p = model_.config().y_param_channels();
    raw_.resize(p);
    if (context_) {
      model_.ContextParamsAt(y_hat, hyper_raw, 0, row, col, raw_);
    } else {
      const int64_t h = hyper_raw.dim(2), w = hyper_raw.dim(3);
      for (int64_t c = 0; c < p; ++c) raw_[c] = hyper_raw[(c * h + row) * w + col];
    }
  }

  const QuantizedCdf& YTable(int64_t channel, const Alphabet& alphabet) {
    SplitMixtureElement(raw_, K_, model_.config().latent_channels, channel, {},
                        w_, mu_, sigma_);
    return Build(alphabet);
  }

  const QuantizedCdf& XTable(const MixtureParams& x_params, int64_t element) {
    x_params.Element(element, w_, mu_, sigma_);
    return Build(kPixelAlphabet);
  }

 private:
  const QuantizedCdf& Build(const Alphabet& alphabet) {
    pmf_.resize(alphabet.size());
    MixturePmf(w_, mu_, sigma_, alphabet, pmf_, model_.config().family);
    QuantizeCdfInto(pmf_, table_);
    return table_;
  }

  const Model& model_;
  bool context_;
  int K_;
  std::vector<QuantizedCdf> z_;
  std::vector<double> raw_, w_, mu_, sigma_, pmf_;
  QuantizedCdf table_;
};

Tensor PaddedTensor(const RgbImage& image) {
  return ImageToTensor(PadReflect(image, kDownsampleZ));
}

}  // namespace

std::vector<uint8_t> SerializeHeader(const ContainerHeader& h) {
  std::vector<uint8_t> out;
  out.reserve(kContainerHeaderBytes);
  out.insert(out.end(), kMagic, kMagic + 4);
  PutLe(out, h.version, 1);
  PutLe(out, h.flags, 1);
  PutLe(out, h.width, 4);
  PutLe(out, h.height, 4);
  PutLe(out, h.channels, 1);
  PutLe(out, h.mixtures, 1);
  PutLe(out, h.digest, 8);
  PutLe(out, static_cast<uint16_t>(h.y_alphabet.lo), 2);
  PutLe(out, static_cast<uint16_t>(h.y_alphabet.hi), 2);
  PutLe(out, static_cast<uint16_t>(h.z_alphabet.lo), 2);
  PutLe(out, static_cast<uint16_t>(h.z_alphabet.hi), 2);
  PutLe(out, h.z_bytes, 4);
  PutLe(out, h.y_bytes, 4);
  PutLe(out, h.x_bytes, 4);
  return out;
}

ContainerHeader ParseHeader(std::span<const uint8_t> file) {
  if (file.size() < kContainerHeaderBytes) {
    throw CorruptStreamError("file shorter than the container header");
  }
  if (std::memcmp(file.data(), kMagic, 4) != 0) {
    throw CorruptStreamError("not an LHGM file (bad magic)");
  }
  ContainerHeader h;
  h.version = file[4];
  if (h.version != kContainerVersion) {
    throw CorruptStreamError("unsupported container version " +
                             std::to_string(h.version));
  }
  h.flags = file[5];
  if (h.flags & ~kFlagContext) throw CorruptStreamError("unknown header flags");
  h.width = static_cast<uint32_t>(GetLe(file, 6, 4));
  h.height = static_cast<uint32_t>(GetLe(file, 10, 4));
  h.channels = file[14];
  h.mixtures = file[15];
  h.digest = GetLe(file, 16, 8);
  h.y_alphabet = {GetI16(file, 24), GetI16(file, 26)};
  h.z_alphabet = {GetI16(file, 28), GetI16(file, 30)};
  h.z_bytes = static_cast<uint32_t>(GetLe(file, 32, 4));
  h.y_bytes = static_cast<uint32_t>(GetLe(file, 36, 4));
  h.x_bytes = static_cast<uint32_t>(GetLe(file, 40, 4));
  if (h.width == 0 || h.height == 0 || h.width > (1u << 16) ||
      h.height > (1u << 16) || h.channels != 3 || h.mixtures == 0) {
    throw CorruptStreamError("implausible image geometry in header");
  }
  for (const Alphabet& a : {h.y_alphabet, h.z_alphabet}) {
    if (a.hi - a.lo < 2 || a.size() > kMaxLatentAlphabet) {
      throw CorruptStreamError("invalid latent alphabet in header");
    }
  }
  if (h.file_bytes() != file.size()) {
    throw CorruptStreamError("declared stream lengths (" +
                             std::to_string(h.file_bytes()) +
                             " bytes) do not match the file size (" +
                             std::to_string(file.size()) + ")");
  }
  return h;
}

RgbImage PadReflect(const RgbImage& image, int multiple) {
  const int w = (image.width + multiple - 1) / multiple * multiple;
  const int h = (image.height + multiple - 1) / multiple * multiple;
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    const int sy = Reflect(y, image.height);
    for (int x = 0; x < w; ++x) {
      const int sx = Reflect(x, image.width);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(sx, sy, c);
    }
  }
  return out;
}

std::vector<uint8_t> Compress(const RgbImage& image, const Model& model,
                              const CompressOptions& options,
                              CodecTrace* trace) {
  CheckImage(image);
  if (image.width > (1 << 16) || image.height > (1 << 16)) {
    throw UnsupportedFormatError("image larger than 65536 pixels on a side");
  }
  if (options.context && !model.config().context_model) {
    throw std::invalid_argument(
        "context coding requested but the model has no context weights");
  }
  NoGradGuard no_grad;
  const Tensor x = PaddedTensor(image);
  const Tensor y = model.Analysis(x);
  const Tensor y_hat = QuantizeInfer(y);
  const Tensor zq = QuantizeInfer(model.HyperAnalysis(y));
  const Tensor hyper_raw = model.HyperSynthesis(zq);

  ContainerHeader header;
  header.flags = options.context ? kFlagContext : 0;
  header.width = static_cast<uint32_t>(image.width);
  header.height = static_cast<uint32_t>(image.height);
  header.mixtures = static_cast<uint8_t>(model.config().mixtures);
  header.digest = WeightsDigest(model);
  header.y_alphabet = LatentAlphabet(y_hat, "y");
  header.z_alphabet = LatentAlphabet(zq, "z");

  Tables tables(model, options.context);

  // z: channel-major raster.
  tables.ZTables(header.z_alphabet);
  RangeEncoder z_enc;
  {
    const int64_t cz = zq.dim(1), plane = zq.dim(2) * zq.dim(3);
    for (int64_t c = 0; c < cz; ++c) {
      const QuantizedCdf& cdf = tables.z(static_cast<int>(c));
      for (int64_t i = 0; i < plane; ++i) {
        if (trace) trace->z_tables.push_back(HashCdf(cdf));
        z_enc.Encode(cdf, static_cast<int>(zq[c * plane + i]) - header.z_alphabet.lo);
      }
    }
  }

  // y: positions in raster order, channels within a position.
  RangeEncoder y_enc;
  {
    const int64_t cy = y_hat.dim(1), h = y_hat.dim(2), w = y_hat.dim(3);
    for (int64_t r = 0; r < h; ++r) {
      for (int64_t col = 0; col < w; ++col) {
        tables.YRaw(y_hat, hyper_raw, r, col);
        for (int64_t c = 0; c < cy; ++c) {
          const QuantizedCdf& cdf = tables.YTable(c, header.y_alphabet);
          if (trace) trace->y_tables.push_back(HashCdf(cdf));
          y_enc.Encode(cdf, static_cast<int>(y_hat[(c * h + r) * w + col]) -
                                header.y_alphabet.lo);
        }
      }
    }
  }

  // x: true image only.
  RangeEncoder x_enc;
  {
    const MixtureParams xp = model.SplitX(model.Synthesis(y_hat));
    const int64_t hp = x.dim(2), wp = x.dim(3);
    for (int64_t c = 0; c < 3; ++c) {
      for (int64_t r = 0; r < image.height; ++r) {
        for (int64_t col = 0; col < image.width; ++col) {
          const int64_t e = (c * hp + r) * wp + col;
          const QuantizedCdf& cdf = tables.XTable(xp, e);
          if (trace) trace->x_tables.push_back(HashCdf(cdf));
          x_enc.Encode(cdf, image.at(static_cast<int>(col), static_cast<int>(r),
                                     static_cast<int>(c)));
        }
      }
    }
  }

  const std::vector<uint8_t> zs = z_enc.Finish(), ys = y_enc.Finish(),
                             xs = x_enc.Finish();
  header.z_bytes = static_cast<uint32_t>(zs.size());
  header.y_bytes = static_cast<uint32_t>(ys.size());
  header.x_bytes = static_cast<uint32_t>(xs.size());
  std::vector<uint8_t> file = SerializeHeader(header);
  file.insert(file.end(), zs.begin(), zs.end());
  file.insert(file.end(), ys.begin(), ys.end());
  file.insert(file.end(), xs.begin(), xs.end());
  return file;
}

RgbImage Decompress(std::span<const uint8_t> file, const Model& model,
                    CodecTrace* trace) {
  const ContainerHeader header = ParseHeader(file);
  if (header.digest != WeightsDigest(model)) {
    throw DigestMismatchError(
        "file was written with different weights (digest mismatch)");
  }
  if (header.mixtures != model.config().mixtures) {
    throw CorruptStreamError("mixture count does not match the weights");
  }
  if (header.context() && !model.config().context_model) {
    throw CorruptStreamError("file needs the context model, weights lack it");
  }
  NoGradGuard no_grad;
  const int64_t hp = (header.height + kDownsampleZ - 1) / kDownsampleZ * kDownsampleZ;
  const int64_t wp = (header.width + kDownsampleZ - 1) / kDownsampleZ * kDownsampleZ;
  const int64_t cz = model.config().hyper_latent_channels;
  const int64_t cy = model.config().latent_channels;
  const auto z_stream = file.subspan(kContainerHeaderBytes, header.z_bytes);
  const auto y_stream = file.subspan(kContainerHeaderBytes + header.z_bytes,
                                     header.y_bytes);
  const auto x_stream = file.subspan(
      kContainerHeaderBytes + header.z_bytes + header.y_bytes, header.x_bytes);

  Tables tables(model, header.context());

  Tensor z_hat(Shape{1, cz, hp / kDownsampleZ, wp / kDownsampleZ});
  {
    tables.ZTables(header.z_alphabet);
    RangeDecoder dec(z_stream);
    const int64_t plane = z_hat.dim(2) * z_hat.dim(3);
    auto zd = z_hat.mutable_data();
    for (int64_t c = 0; c < cz; ++c) {
      const QuantizedCdf& cdf = tables.z(static_cast<int>(c));
      for (int64_t i = 0; i < plane; ++i) {
        if (trace) trace->z_tables.push_back(HashCdf(cdf));
        zd[c * plane + i] = dec.Decode(cdf) + header.z_alphabet.lo;
      }
    }
    dec.Finish();
  }
  const Tensor hyper_raw = model.HyperSynthesis(z_hat);

  const int64_t h = hp / kDownsampleY, w = wp / kDownsampleY;
  Tensor y_hat(Shape{1, cy, h, w});
  {
    RangeDecoder dec(y_stream);
    auto yd = y_hat.mutable_data();
    for (int64_t r = 0; r < h; ++r) {
      for (int64_t col = 0; col < w; ++col) {
        tables.YRaw(y_hat, hyper_raw, r, col);
        for (int64_t c = 0; c < cy; ++c) {
          const QuantizedCdf& cdf = tables.YTable(c, header.y_alphabet);
          if (trace) trace->y_tables.push_back(HashCdf(cdf));
          yd[(c * h + r) * w + col] = dec.Decode(cdf) + header.y_alphabet.lo;
        }
      }
    }
    dec.Finish();
  }

  RgbImage image(static_cast<int>(header.width), static_cast<int>(header.height));
  {
    const MixtureParams xp = model.SplitX(model.Synthesis(y_hat));
    RangeDecoder dec(x_stream);
    for (int64_t c = 0; c < 3; ++c) {
      for (int64_t r = 0; r < image.height; ++r) {
        for (int64_t col = 0; col < image.width; ++col) {
          const int64_t e = (c * hp + r) * wp + col;
          const QuantizedCdf& cdf = tables.XTable(xp, e);
          if (trace) trace->x_tables.push_back(HashCdf(cdf));
          image.at(static_cast<int>(col), static_cast<int>(r), static_cast<int>(c)) =
              static_cast<uint8_t>(dec.Decode(cdf));
        }
      }
    }
    dec.Finish();
  }
  return image;
}

double Bpsp(uint64_t file_bits, uint32_t width, uint32_t height) {
  return static_cast<double>(file_bits) /
         (3.0 * static_cast<double>(width) * static_cast<double>(height));
}

BpspReport ReportFor(const std::string& name, std::span<const uint8_t> file) {
  const ContainerHeader h = ParseHeader(file);
  BpspReport r;
  r.name = name;
  r.width = h.width;
  r.height = h.height;
  r.subpixels = uint64_t{3} * h.width * h.height;
  r.file_bits = uint64_t{8} * file.size();
  r.header_bits = uint64_t{8} * kContainerHeaderBytes;
  r.z_bits = uint64_t{8} * h.z_bytes;
  r.y_bits = uint64_t{8} * h.y_bytes;
  r.x_bits = uint64_t{8} * h.x_bytes;
  r.bpsp = Bpsp(r.file_bits, h.width, h.height);
  return r;
}

EvalResult EvalBpsp(const std::vector<std::string>& names,
                    const std::vector<RgbImage>& images, const Model& model,
                    const CompressOptions& options, int jobs) {
  if (names.size() != images.size()) {
    throw std::invalid_argument("names and images differ in length");
  }
  EvalResult result;
  result.images.resize(images.size());
  std::vector<std::string> errors(images.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < images.size(); i = next++) {
      try {
        const std::vector<uint8_t> file = Compress(images[i], model, options);
        if (Decompress(file, model) != images[i]) {
          errors[i] = "round trip mismatch";
        } else {
          result.images[i] = ReportFor(names[i], file);
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(images.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();
  for (size_t i = 0; i < images.size(); ++i) {
    if (!errors[i].empty()) {
      throw RoundTripError("round trip failed for " + names[i] + ": " + errors[i]);
    }
  }
  double sum = 0.0;
  for (const BpspReport& r : result.images) {
    sum += r.bpsp;
    result.total_bits += r.file_bits;
    result.total_subpixels += r.subpixels;
  }
  if (!result.images.empty()) result.mean_bpsp = sum / result.images.size();
  return result;
}

EvalResult EvalDirectory(const std::string& directory, const Model& model,
                         const CompressOptions& options, int jobs) {
  std::vector<std::string> names;
  std::vector<RgbImage> images;
  for (const std::string& path : ListImages(directory)) {
    names.push_back(path.substr(path.find_last_of('/') + 1));
    images.push_back(ReadImage(path));
  }
  if (images.empty()) {
    throw std::invalid_argument("no .png or .ppm images in " + directory);
  }
  return EvalBpsp(names, images, model, options, jobs);
}

std::string FormatEvalReport(const EvalResult& result, uint64_t digest) {
  char digest_hex[17];
  std::snprintf(digest_hex, sizeof digest_hex, "%016llx",
                static_cast<unsigned long long>(digest));
  std::string out =
      "image,width,height,subpixels,file_bits,header_bits,z_bits,y_bits,x_bits,"
      "bpsp,weights_digest\n";
  char buf[512];
  for (const BpspReport& r : result.images) {
    std::snprintf(buf, sizeof buf, "%s,%u,%u,%llu,%llu,%llu,%llu,%llu,%llu,%.6f,%s\n",
                  r.name.c_str(), r.width, r.height,
                  static_cast<unsigned long long>(r.subpixels),
                  static_cast<unsigned long long>(r.file_bits),
                  static_cast<unsigned long long>(r.header_bits),
                  static_cast<unsigned long long>(r.z_bits),
                  static_cast<unsigned long long>(r.y_bits),
                  static_cast<unsigned long long>(r.x_bits), r.bpsp, digest_hex);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mean,,,%llu,%llu,,,,,%.6f,%s\n",
                static_cast<unsigned long long>(result.total_subpixels),
                static_cast<unsigned long long>(result.total_bits),
                result.mean_bpsp, digest_hex);
  out += buf;
  return out;
}

}  // namespace lhgm
