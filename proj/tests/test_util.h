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

#ifndef LHGM_TESTS_TEST_UTIL_H_
#define LHGM_TESTS_TEST_UTIL_H_

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "lhgm/image_io.h"
#include "lhgm/random.h"
#include "lhgm/tensor.h"

namespace lhgm::testing {

Tensor RandomTensor(const Shape& shape, Rng& rng, double lo = -1.0,
                    double hi = 1.0, bool requires_grad = false);

// Compares analytic gradients of `f` against central differences for every
// element of every input. `f` may return a tensor of any shape; it is
// projected onto a fixed random direction to form a scalar. The returned
// error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-4).
double MaxGradientError(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, uint64_t seed, double h = 1e-5);

// Central difference of the scalar `f` along one random direction per input
// tensor, against the analytic directional derivative; same error measure.
// Each tensor keeps its best error over `steps`: inside a network a
// leaky_relu kink can sit between the probes of one step size, and tiny
// gradients drown in rounding at another, while a wrong gradient fails at
// all of them.
double MaxDirectionalGradientError(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, uint64_t seed,
    std::initializer_list<double> steps = {1e-4, 1e-5, 1e-6, 1e-7});

// Direct six-loop cross-correlation, the oracle for Conv2d.
std::vector<double> NaiveConv2d(const Tensor& input, const Tensor& kernel,
                                const Tensor& bias, int stride, int padding);
// Scatter form of the transposed convolution.
std::vector<double> NaiveConv2dTransposed(const Tensor& input,
                                          const Tensor& kernel,
                                          const Tensor& bias, int stride,
                                          int padding);

// Synthetic fixture images.
RgbImage ConstantImage(int width, int height, uint8_t r, uint8_t g, uint8_t b);
RgbImage GradientImage(int width, int height);
RgbImage NoiseImage(int width, int height, uint64_t seed);

std::string SourceDir();
std::string TempDir(const std::string& tag);

}  // namespace lhgm::testing

#endif  // LHGM_TESTS_TEST_UTIL_H_
