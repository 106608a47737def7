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

#ifndef LHGM_IMAGE_IO_H_
#define LHGM_IMAGE_IO_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lhgm {

// 8-bit RGB, interleaved, rows top to bottom.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(size_t(w) * h * 3) {}

  uint8_t at(int x, int y, int c) const {
    return pixels[(size_t(y) * width + x) * 3 + c];
  }
  uint8_t& at(int x, int y, int c) {
    return pixels[(size_t(y) * width + x) * 3 + c];
  }
  bool operator==(const RgbImage&) const = default;
};

class UnsupportedFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// PNG must be 8-bit RGB (palette and alpha are rejected). PPM is binary P6
// with maxval 255.
RgbImage ReadImage(const std::string& path);
void WriteImage(const std::string& path, const RgbImage& image);

RgbImage ReadPng(const std::string& path);
void WritePng(const std::string& path, const RgbImage& image);
RgbImage ReadPpm(const std::string& path);
void WritePpm(const std::string& path, const RgbImage& image);

// Image files (.png/.ppm) in a directory, sorted by name.
std::vector<std::string> ListImages(const std::string& directory);

}  // namespace lhgm

#endif  // LHGM_IMAGE_IO_H_
