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

#ifndef LHGM_CONFIG_H_
#define LHGM_CONFIG_H_

// Plain "key = value" configuration text. One pair per line; blank lines and
// lines starting with '#' are ignored; keys may not repeat.

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lhgm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues ParseKeyValues(std::string_view text);
// Sorted by key, one "key = value" line each.
std::string FormatKeyValues(const KeyValues& values);
KeyValues ReadKeyValueFile(const std::string& path);

// Typed access that remembers which keys were read, so callers can reject
// unknown keys once every consumer has taken its share.
class KeyValueReader {
 public:
  explicit KeyValueReader(KeyValues values) : values_(std::move(values)) {}

  int64_t Int(const std::string& key, int64_t fallback);
  uint64_t Uint(const std::string& key, uint64_t fallback);
  double Double(const std::string& key, double fallback);
  bool Bool(const std::string& key, bool fallback);
  std::string String(const std::string& key, const std::string& fallback);

  // Throws ConfigError naming the first key nobody asked for.
  void CheckAllConsumed() const;

 private:
  const std::string* Find(const std::string& key);

  KeyValues values_;
  std::set<std::string> used_;
};

}  // namespace lhgm

#endif  // LHGM_CONFIG_H_
