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

#include "lhgm/coder.h"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>

namespace lhgm {

namespace {

constexpr uint32_t kTop = 1u << 24;
constexpr size_t kChecksumBytes = 4;
constexpr size_t kMinStream = 5 + kChecksumBytes;

uint32_t CrcInit() { return static_cast<uint32_t>(crc32(0L, Z_NULL, 0)); }

uint32_t CrcUpdate(uint32_t crc, int symbol) {
  const uint32_t u = static_cast<uint32_t>(symbol);
  const Bytef le[4] = {static_cast<Bytef>(u), static_cast<Bytef>(u >> 8),
                       static_cast<Bytef>(u >> 16), static_cast<Bytef>(u >> 24)};
  return static_cast<uint32_t>(crc32(crc, le, 4));
}

}  // namespace

void QuantizeCdfInto(std::span<const double> pmf, QuantizedCdf& out) {
  const size_t n = pmf.size();
  if (n < 2 || n > kCdfTotal) {
    throw std::invalid_argument("pmf length " + std::to_string(n) +
                                " outside [2, 65536]");
  }
  double sum = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("pmf entries must be finite and >= 0");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("pmf sums to " + std::to_string(sum));
  }

  std::vector<int64_t> freq(n);
  int64_t total = 0;
  size_t largest = 0;
  int64_t residue_left;
  for (size_t i = 0; i < n; ++i) {
    freq[i] = static_cast<int64_t>(std::llround(pmf[i] * kCdfTotal));
    total += freq[i];
    if (freq[i] > freq[largest]) largest = i;
  }

  const int64_t residue = static_cast<int64_t>(kCdfTotal) - total;
  if (freq[largest] + residue >= 1) {
    freq[largest] += residue;
    residue_left = 0;
  } else {
    residue_left = -residue;
  }

  // Max-heap over the non-zero bins on (frequency, lowest index first), so
  // units are always taken from the current largest bin deterministically.
  auto cmp = [&](size_t a, size_t b) {
    return freq[a] != freq[b] ? freq[a] < freq[b] : a > b;
  };
  std::vector<size_t> zeros;
  std::priority_queue<size_t, std::vector<size_t>, decltype(cmp)> heap(cmp);
  for (size_t i = 0; i < n; ++i) {
    if (freq[i] == 0) {
      zeros.push_back(i);
    } else {
      heap.push(i);
    }
  }
  auto take_one = [&] {
    const size_t i = heap.top();
    heap.pop();
    --freq[i];
    heap.push(i);
  };
  for (int64_t r = 0; r < residue_left; ++r) take_one();
  for (size_t i : zeros) {
    take_one();
    freq[i] = 1;
  }

  out.cum.resize(n + 1);
  out.cum[0] = 0;
  for (size_t i = 0; i < n; ++i) {
    out.cum[i + 1] = out.cum[i] + static_cast<uint32_t>(freq[i]);
  }
}

QuantizedCdf QuantizeCdf(std::span<const double> pmf) {
  QuantizedCdf out;
  QuantizeCdfInto(pmf, out);
  return out;
}

void ValidateCdf(const QuantizedCdf& cdf) {
  if (cdf.cum.size() < 3 || cdf.cum.front() != 0 ||
      cdf.cum.back() != kCdfTotal) {
    throw std::invalid_argument("cdf must run from 0 to 2^16 over >= 2 bins");
  }
  for (size_t i = 1; i < cdf.cum.size(); ++i) {
    if (cdf.cum[i] <= cdf.cum[i - 1]) {
      throw std::invalid_argument("cdf is not strictly increasing at " +
                                  std::to_string(i));
    }
  }
}

RangeEncoder::RangeEncoder() : crc_(CrcInit()) {}

void RangeEncoder::ShiftLow() {
  if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
    uint8_t temp = cache_;
    do {
      bytes_.push_back(static_cast<uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::Encode(const QuantizedCdf& cdf, int symbol) {
  if (finished_) throw std::logic_error("encoder already finished");
  if (symbol < 0 || symbol >= cdf.size()) {
    throw std::out_of_range("symbol " + std::to_string(symbol) +
                            " outside table of " + std::to_string(cdf.size()));
  }
  const uint32_t r = range_ >> kCdfPrecision;
  low_ += static_cast<uint64_t>(cdf.cum[symbol]) * r;
  range_ = r * cdf.freq(symbol);
  while (range_ < kTop) {
    range_ <<= 8;
    ShiftLow();
  }
  crc_ = CrcUpdate(crc_, symbol);
  ++count_;
}

std::vector<uint8_t> RangeEncoder::Finish() {
  if (finished_) throw std::logic_error("encoder already finished");
  finished_ = true;
  for (int i = 0; i < 5; ++i) ShiftLow();
  for (int shift = 24; shift >= 0; shift -= 8) {
    bytes_.push_back(static_cast<uint8_t>(crc_ >> shift));
  }
  return std::move(bytes_);
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> stream) : crc_(CrcInit()) {
  if (stream.size() < kMinStream) {
    throw CorruptStreamError("stream of " + std::to_string(stream.size()) +
                             " bytes is shorter than the minimal frame");
  }
  payload_ = stream.first(stream.size() - kChecksumBytes);
  for (size_t i = payload_.size(); i < stream.size(); ++i) {
    stored_crc_ = (stored_crc_ << 8) | stream[i];
  }
  if (NextByte() != 0) throw CorruptStreamError("bad stream lead byte");
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | NextByte();
}

uint8_t RangeDecoder::NextByte() {
  if (pos_ >= payload_.size()) {
    throw CorruptStreamError("read past the end of the stream");
  }
  return payload_[pos_++];
}

int RangeDecoder::Decode(const QuantizedCdf& cdf) {
  const uint32_t r = range_ >> kCdfPrecision;
  const uint32_t value = code_ / r;
  if (value >= kCdfTotal) {
    throw CorruptStreamError("decoded value outside the frequency table");
  }
  const auto it = std::upper_bound(cdf.cum.begin(), cdf.cum.end(), value);
  const int symbol = static_cast<int>(it - cdf.cum.begin()) - 1;
  code_ -= cdf.cum[symbol] * r;
  range_ = r * cdf.freq(symbol);
  while (range_ < kTop) {
    code_ = (code_ << 8) | NextByte();
    range_ <<= 8;
  }
  crc_ = CrcUpdate(crc_, symbol);
  return symbol;
}

void RangeDecoder::Finish() {
  if (pos_ != payload_.size()) {
    throw CorruptStreamError(std::to_string(payload_.size() - pos_) +
                             " unread payload bytes");
  }
  // The flush writes `low` out exactly, so an intact stream leaves no offset.
  if (code_ != 0) throw CorruptStreamError("stream does not end on a flush");
  if (crc_ != stored_crc_) throw CorruptStreamError("checksum mismatch");
}

std::vector<uint8_t> Encode(std::span<const int> symbols,
                            const CdfProvider& provider) {
  RangeEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) {
    enc.Encode(provider(i, symbols.first(i)), symbols[i]);
  }
  return enc.Finish();
}

std::vector<int> Decode(std::span<const uint8_t> stream,
                        const CdfProvider& provider, size_t count) {
  RangeDecoder dec(stream);
  std::vector<int> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    out.push_back(dec.Decode(provider(i, out)));
  }
  dec.Finish();
  return out;
}

double QuantizedCrossEntropyBits(std::span<const int> symbols,
                                 const CdfProvider& provider) {
  double bits = 0.0;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const QuantizedCdf& cdf = provider(i, symbols.first(i));
    bits -= std::log2(static_cast<double>(cdf.freq(symbols[i])) / kCdfTotal);
  }
  return bits;
}

}  // namespace lhgm
