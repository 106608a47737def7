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

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lhgm/model.h"

namespace lhgm {

namespace {

constexpr char kMagic[4] = {'L', 'H', 'G', 'W'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  void U32(uint32_t v) { Le(v, 4); }
  void I64(int64_t v) { Le(static_cast<uint64_t>(v), 8); }
  void F64(double v) { Le(std::bit_cast<uint64_t>(v), 8); }
  void Bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<uint8_t> Take() { return std::move(out_); }

 private:
  void Le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> in) : in_(in) {}
  uint32_t U32() { return static_cast<uint32_t>(Le(4)); }
  int64_t I64() { return static_cast<int64_t>(Le(8)); }
  double F64() { return std::bit_cast<double>(Le(8)); }
  std::string String(size_t n) {
    Need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void Bytes(void* dst, size_t n) {
    Need(n);
    std::memcpy(dst, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void Need(size_t n) {
    if (in_.size() - pos_ < n) {
      throw std::runtime_error("weight file truncated");
    }
  }
  uint64_t Le(int n) {
    Need(static_cast<size_t>(n));
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += static_cast<size_t>(n);
    return v;
  }
  std::span<const uint8_t> in_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> SerializeWeights(const Model& model) {
  Writer w;
  w.Bytes(kMagic, 4);
  w.U32(kVersion);
  const std::string config = FormatKeyValues(model.config().ToKeyValues());
  w.U32(static_cast<uint32_t>(config.size()));
  w.Bytes(config.data(), config.size());
  const auto params = model.Parameters();
  w.U32(static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.U32(static_cast<uint32_t>(name.size()));
    w.Bytes(name.data(), name.size());
    w.U32(static_cast<uint32_t>(t->rank()));
    for (int64_t d : t->shape()) w.I64(d);
    for (double v : t->data()) w.F64(v);
  }
  return w.Take();
}

Model DeserializeWeights(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.Bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a weight file (bad magic)");
  }
  const uint32_t version = r.U32();
  if (version != kVersion) {
    throw std::runtime_error("unsupported weight file version " +
                             std::to_string(version));
  }
  KeyValueReader config_reader(ParseKeyValues(r.String(r.U32())));
  const ModelConfig config = ModelConfig::FromReader(config_reader);
  config_reader.CheckAllConsumed();
  Model model(config, 0);
  auto params = model.Parameters();
  const uint32_t count = r.U32();
  if (count != params.size()) {
    throw std::runtime_error("weight file has " + std::to_string(count) +
                             " tensors, model expects " +
                             std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    const std::string stored = r.String(r.U32());
    if (stored != name) {
      throw std::runtime_error("weight file tensor '" + stored +
                               "' where '" + name + "' was expected");
    }
    const uint32_t rank = r.U32();
    Shape shape(rank);
    for (auto& d : shape) d = r.I64();
    if (shape != t->shape()) {
      throw std::runtime_error("tensor '" + name + "' has shape " +
                               ShapeToString(shape) + ", expected " +
                               ShapeToString(t->shape()));
    }
    for (double& v : t->mutable_data()) v = r.F64();
  }
  if (!r.done()) throw std::runtime_error("trailing bytes in weight file");
  return model;
}

void SaveWeights(const Model& model, const std::string& path) {
  const std::vector<uint8_t> bytes = SerializeWeights(model);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write weights to " + path);
}

Model LoadWeights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights " + path);
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return DeserializeWeights(bytes);
}

uint64_t Fnv1a64(std::span<const uint8_t> bytes, uint64_t seed) {
  uint64_t h = seed;
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t WeightsDigest(const Model& model) {
  return Fnv1a64(SerializeWeights(model));
}

}  // namespace lhgm
