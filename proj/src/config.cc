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

#include "lhgm/config.h"

#include <charconv>
#include <fstream>
#include <sstream>

namespace lhgm {

namespace {

std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T ParseNumber(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value for '" + key + "': '" + text + "'");
  }
  return value;
}

}  // namespace

KeyValues ParseKeyValues(std::string_view text) {
  KeyValues out;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = Trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": missing '='");
    }
    const std::string key(Trim(line.substr(0, eq)));
    const std::string value(Trim(line.substr(eq + 1)));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    }
    if (!out.emplace(key, value).second) {
      throw ConfigError("duplicate key '" + key + "'");
    }
  }
  return out;
}

std::string FormatKeyValues(const KeyValues& values) {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

KeyValues ReadKeyValueFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseKeyValues(buf.str());
}

const std::string* KeyValueReader::Find(const std::string& key) {
  used_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

int64_t KeyValueReader::Int(const std::string& key, int64_t fallback) {
  const std::string* v = Find(key);
  return v ? ParseNumber<int64_t>(key, *v) : fallback;
}

uint64_t KeyValueReader::Uint(const std::string& key, uint64_t fallback) {
  const std::string* v = Find(key);
  return v ? ParseNumber<uint64_t>(key, *v) : fallback;
}

double KeyValueReader::Double(const std::string& key, double fallback) {
  const std::string* v = Find(key);
  return v ? ParseNumber<double>(key, *v) : fallback;
}

bool KeyValueReader::Bool(const std::string& key, bool fallback) {
  const std::string* v = Find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "on" || *v == "1") return true;
  if (*v == "false" || *v == "off" || *v == "0") return false;
  throw ConfigError("bad boolean for '" + key + "': '" + *v + "'");
}

std::string KeyValueReader::String(const std::string& key,
                                   const std::string& fallback) {
  const std::string* v = Find(key);
  return v ? *v : fallback;
}

void KeyValueReader::CheckAllConsumed() const {
  for (const auto& [k, v] : values_) {
    if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
}

}  // namespace lhgm
