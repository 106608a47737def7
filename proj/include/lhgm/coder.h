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

#ifndef LHGM_CODER_H_
#define LHGM_CODER_H_

// Byte-oriented range coder over 16-bit cumulative frequency tables.
//
// Stream layout (format version 1):
//   * range coder bytes, most significant first. The encoder keeps a 64-bit
//     `low` (33 bits used, bit 32 is the pending carry) and a 32-bit `range`.
//     Each symbol does range >>= 16; low += cum[s] * range;
//     range *= freq[s], then shifts out bytes while range < 2^24. The first
//     byte is always the initial cache byte 0x00; Finish() shifts out five
//     more bytes.
//   * CRC-32 (zlib polynomial) of the coded symbol indices, each fed as a
//     4-byte little-endian integer, stored big-endian.
//
// The decoder reads exactly the bytes the encoder wrote and ends with a zero
// code register. Running past the payload, leftover payload bytes, a
// non-zero final code, a decoded value outside the table or a checksum
// mismatch all raise CorruptStreamError.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace lhgm {

inline constexpr int kCdfPrecision = 16;
inline constexpr uint32_t kCdfTotal = 1u << kCdfPrecision;

class CorruptStreamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// cum[0] = 0 < cum[1] < ... < cum[n] = kCdfTotal.
struct QuantizedCdf {
  std::vector<uint32_t> cum;

  int size() const { return static_cast<int>(cum.size()) - 1; }
  uint32_t freq(int s) const { return cum[s + 1] - cum[s]; }
};

// Scales `pmf` to integer frequencies totalling 2^16: round each entry, put
// the rounding residue on the largest bin, then lift zero bins to 1 by
// taking one unit at a time from the current largest bin. Throws
// std::invalid_argument for fewer than 2 or more than 2^16 entries, negative
// or non-finite entries, or a sum more than 1e-6 away from 1.
QuantizedCdf QuantizeCdf(std::span<const double> pmf);
// Same as QuantizeCdf but writes into `out`, reusing its storage.
void QuantizeCdfInto(std::span<const double> pmf, QuantizedCdf& out);

// Throws std::invalid_argument unless the table is a valid QuantizedCdf.
void ValidateCdf(const QuantizedCdf& cdf);

class RangeEncoder {
 public:
  RangeEncoder();
  // `symbol` indexes the table; out-of-range symbols throw std::out_of_range.
  void Encode(const QuantizedCdf& cdf, int symbol);
  // Flushes the coder, appends the checksum and returns the stream.
  std::vector<uint8_t> Finish();

  size_t symbols() const { return count_; }

 private:
  void ShiftLow();

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  uint32_t crc_;
  size_t count_ = 0;
  std::vector<uint8_t> bytes_;
  bool finished_ = false;
};

class RangeDecoder {
 public:
  // Throws CorruptStreamError for streams shorter than the minimal frame.
  explicit RangeDecoder(std::span<const uint8_t> stream);
  int Decode(const QuantizedCdf& cdf);
  // Checks that the payload was consumed exactly and the checksum matches.
  void Finish();

 private:
  uint8_t NextByte();

  std::span<const uint8_t> payload_;
  uint32_t stored_crc_ = 0;
  size_t pos_ = 0;
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t crc_;
};

// Pull-model table source: called once per position, in order, before that
// position is coded. `previous` holds every symbol already coded, so a
// provider may condition on the causal past.
using CdfProvider = std::function<const QuantizedCdf&(
    size_t index, std::span<const int> previous)>;

std::vector<uint8_t> Encode(std::span<const int> symbols,
                            const CdfProvider& provider);
std::vector<int> Decode(std::span<const uint8_t> stream,
                        const CdfProvider& provider, size_t count);

// Sum of -log2(freq / 2^16) over the sequence.
double QuantizedCrossEntropyBits(std::span<const int> symbols,
                                 const CdfProvider& provider);

}  // namespace lhgm

#endif  // LHGM_CODER_H_
