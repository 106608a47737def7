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

#include <algorithm>
#include <string>

#include "lhgm/tensor.h"

namespace lhgm {
namespace {

struct ConvGeometry {
  int64_t n, c, h, w;     // input
  int64_t o, kh, kw;      // kernel
  int64_t oh, ow;         // output
  int64_t stride, pad;
};

// Range of output columns [lo, hi) whose tap `kx` lands inside [0, w).
inline void ValidColumns(const ConvGeometry& g, int64_t kx, int64_t* lo,
                         int64_t* hi) {
  // ix = ox * stride - pad + kx must satisfy 0 <= ix < w.
  const int64_t first = g.pad - kx;
  *lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  const int64_t last = g.w - 1 + g.pad - kx;
  *hi = last < 0 ? 0 : std::min(g.ow, last / g.stride + 1);
}

void CheckBias(const Tensor& bias, int64_t channels) {
  if (bias.size() != 0 && bias.size() != static_cast<size_t>(channels)) {
    throw DimensionError("bias has " + std::to_string(bias.size()) +
                         " entries, expected " + std::to_string(channels));
  }
}

void ConvForward(const ConvGeometry& g, const double* in, const double* k,
                 const double* bias, double* out) {
  const int64_t out_plane = g.oh * g.ow;
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t o = 0; o < g.o; ++o) {
      double* dst = out + (n * g.o + o) * out_plane;
      std::fill_n(dst, out_plane, bias ? bias[o] : 0.0);
      for (int64_t c = 0; c < g.c; ++c) {
        const double* src = in + (n * g.c + c) * g.h * g.w;
        const double* kern = k + (o * g.c + c) * g.kh * g.kw;
        for (int64_t ky = 0; ky < g.kh; ++ky) {
          for (int64_t kx = 0; kx < g.kw; ++kx) {
            const double wv = kern[ky * g.kw + kx];
            if (wv == 0.0) continue;
            int64_t lo, hi;
            ValidColumns(g, kx, &lo, &hi);
            for (int64_t oy = 0; oy < g.oh; ++oy) {
              const int64_t iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.h) continue;
              const double* row = src + iy * g.w - g.pad + kx;
              double* orow = dst + oy * g.ow;
              if (g.stride == 1) {
                for (int64_t ox = lo; ox < hi; ++ox) orow[ox] += wv * row[ox];
              } else {
                for (int64_t ox = lo; ox < hi; ++ox) {
                  orow[ox] += wv * row[ox * g.stride];
                }
              }
            }
          }
        }
      }
    }
  }
}

// Accumulates d(in) and d(kernel) given d(out) for the correlation above.
// The transposed convolution reuses this with the roles of in/out swapped.
void ConvBackwardInput(const ConvGeometry& g, const double* gout,
                       const double* k, double* gin) {
  const int64_t out_plane = g.oh * g.ow;
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t o = 0; o < g.o; ++o) {
      const double* go = gout + (n * g.o + o) * out_plane;
      for (int64_t c = 0; c < g.c; ++c) {
        double* gi = gin + (n * g.c + c) * g.h * g.w;
        const double* kern = k + (o * g.c + c) * g.kh * g.kw;
        for (int64_t ky = 0; ky < g.kh; ++ky) {
          for (int64_t kx = 0; kx < g.kw; ++kx) {
            const double wv = kern[ky * g.kw + kx];
            if (wv == 0.0) continue;
            int64_t lo, hi;
            ValidColumns(g, kx, &lo, &hi);
            for (int64_t oy = 0; oy < g.oh; ++oy) {
              const int64_t iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.h) continue;
              double* row = gi + iy * g.w - g.pad + kx;
              const double* orow = go + oy * g.ow;
              if (g.stride == 1) {
                for (int64_t ox = lo; ox < hi; ++ox) row[ox] += wv * orow[ox];
              } else {
                for (int64_t ox = lo; ox < hi; ++ox) {
                  row[ox * g.stride] += wv * orow[ox];
                }
              }
            }
          }
        }
      }
    }
  }
}

void ConvBackwardKernel(const ConvGeometry& g, const double* gout,
                        const double* in, double* gk) {
  const int64_t out_plane = g.oh * g.ow;
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t o = 0; o < g.o; ++o) {
      const double* go = gout + (n * g.o + o) * out_plane;
      for (int64_t c = 0; c < g.c; ++c) {
        const double* src = in + (n * g.c + c) * g.h * g.w;
        double* kern = gk + (o * g.c + c) * g.kh * g.kw;
        for (int64_t ky = 0; ky < g.kh; ++ky) {
          for (int64_t kx = 0; kx < g.kw; ++kx) {
            int64_t lo, hi;
            ValidColumns(g, kx, &lo, &hi);
            double acc = 0.0;
            for (int64_t oy = 0; oy < g.oh; ++oy) {
              const int64_t iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.h) continue;
              const double* row = src + iy * g.w - g.pad + kx;
              const double* orow = go + oy * g.ow;
              for (int64_t ox = lo; ox < hi; ++ox) {
                acc += orow[ox] * row[ox * g.stride];
              }
            }
            kern[ky * g.kw + kx] += acc;
          }
        }
      }
    }
  }
}

std::vector<double> BiasGrad(const double* gout, int64_t n, int64_t channels,
                             int64_t plane) {
  std::vector<double> gb(static_cast<size_t>(channels), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < channels; ++c) {
      const double* p = gout + (i * channels + c) * plane;
      double acc = 0.0;
      for (int64_t j = 0; j < plane; ++j) acc += p[j];
      gb[c] += acc;
    }
  }
  return gb;
}

}  // namespace

Tensor Conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("Conv2d expects NCHW input and OCkk kernel");
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw DimensionError("Conv2d: input has " + std::to_string(input.dim(1)) +
                         " channels, kernel expects " +
                         std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0) {
    throw DimensionError("Conv2d: kernel size must be odd");
  }
  if (stride < 1 || padding < 0) {
    throw DimensionError("Conv2d: stride must be >= 1 and padding >= 0");
  }
  CheckBias(bias, kernel.dim(0));
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 kernel.dim(0), kernel.dim(2), kernel.dim(3), 0, 0,
                 stride, padding};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw DimensionError("Conv2d: kernel larger than padded input");
  }
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  std::vector<double> out(static_cast<size_t>(g.n * g.o * g.oh * g.ow));
  ConvForward(g, input.data().data(), kernel.data().data(),
              bias.size() ? bias.data().data() : nullptr, out.data());
  auto in_i = input.impl();
  auto k_i = kernel.impl();
  auto b_i = bias.impl();
  return MakeResult(
      Shape{g.n, g.o, g.oh, g.ow}, std::move(out), {&input, &kernel, &bias},
      [g, in_i, k_i, b_i](const TensorImpl& o) {
        if (in_i->requires_grad) {
          std::vector<double> gi(in_i->data.size(), 0.0);
          ConvBackwardInput(g, o.grad.data(), k_i->data.data(), gi.data());
          AccumulateGrad(*in_i, gi);
        }
        if (k_i->requires_grad) {
          std::vector<double> gk(k_i->data.size(), 0.0);
          ConvBackwardKernel(g, o.grad.data(), in_i->data.data(), gk.data());
          AccumulateGrad(*k_i, gk);
        }
        if (b_i->requires_grad && !b_i->data.empty()) {
          AccumulateGrad(*b_i, BiasGrad(o.grad.data(), g.n, g.o, g.oh * g.ow));
        }
      });
}

Tensor Conv2dTransposed(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("Conv2dTransposed expects NCHW input");
  }
  if (kernel.dim(0) != input.dim(1)) {
    throw DimensionError("Conv2dTransposed: input has " +
                         std::to_string(input.dim(1)) +
                         " channels, kernel expects " +
                         std::to_string(kernel.dim(0)));
  }
  if (stride < 1 || padding < 0) {
    throw DimensionError("Conv2dTransposed: stride must be >= 1, padding >= 0");
  }
  const int64_t out_c = kernel.dim(1);
  CheckBias(bias, out_c);
  const int64_t oh = (input.dim(2) - 1) * stride - 2 * padding + kernel.dim(2);
  const int64_t ow = (input.dim(3) - 1) * stride - 2 * padding + kernel.dim(3);
  if (oh <= 0 || ow <= 0) {
    throw DimensionError("Conv2dTransposed: empty output");
  }
  // The transposed op is the input-gradient of a correlation that maps the
  // [N,out_c,oh,ow] output back to the given input; describe that
  // correlation and run its backward pass as our forward pass.
  ConvGeometry g{input.dim(0), out_c, oh, ow, input.dim(1), kernel.dim(2),
                 kernel.dim(3), input.dim(2), input.dim(3), stride, padding};
  std::vector<double> out(static_cast<size_t>(g.n * out_c * oh * ow), 0.0);
  ConvBackwardInput(g, input.data().data(), kernel.data().data(), out.data());
  if (bias.size()) {
    const int64_t plane = oh * ow;
    for (int64_t n = 0; n < g.n; ++n) {
      for (int64_t c = 0; c < out_c; ++c) {
        double* p = out.data() + (n * out_c + c) * plane;
        for (int64_t j = 0; j < plane; ++j) p[j] += bias[c];
      }
    }
  }
  auto in_i = input.impl();
  auto k_i = kernel.impl();
  auto b_i = bias.impl();
  return MakeResult(
      Shape{g.n, out_c, oh, ow}, std::move(out), {&input, &kernel, &bias},
      [g, in_i, k_i, b_i, out_c, oh, ow](const TensorImpl& o) {
        if (in_i->requires_grad) {
          std::vector<double> gi(in_i->data.size(), 0.0);
          ConvForward(g, o.grad.data(), k_i->data.data(), nullptr, gi.data());
          AccumulateGrad(*in_i, gi);
        }
        if (k_i->requires_grad) {
          std::vector<double> gk(k_i->data.size(), 0.0);
          ConvBackwardKernel(g, in_i->data.data(), o.grad.data(), gk.data());
          AccumulateGrad(*k_i, gk);
        }
        if (b_i->requires_grad && !b_i->data.empty()) {
          AccumulateGrad(*b_i, BiasGrad(o.grad.data(), g.n, out_c, oh * ow));
        }
      });
}

std::vector<double> CausalMask(int64_t kh, int64_t kw, MaskType type) {
  if (kh != kw || kh % 2 == 0) {
    throw DimensionError("masked convolution needs a square odd kernel");
  }
  (void)type;  // only type A exists
  std::vector<double> mask(static_cast<size_t>(kh * kw), 1.0);
  const int64_t centre = kh / 2;
  for (int64_t y = 0; y < kh; ++y) {
    for (int64_t x = 0; x < kw; ++x) {
      if (y > centre || (y == centre && x >= centre)) mask[y * kw + x] = 0.0;
    }
  }
  return mask;
}

Tensor MaskedConv2d(const Tensor& input, const Tensor& kernel,
                    const Tensor& bias, MaskType type) {
  if (kernel.rank() != 4) throw DimensionError("MaskedConv2d: kernel rank");
  const int64_t kh = kernel.dim(2), kw = kernel.dim(3);
  const std::vector<double> tap = CausalMask(kh, kw, type);
  std::vector<double> full(kernel.size());
  for (size_t i = 0; i < full.size(); ++i) full[i] = tap[i % tap.size()];
  const Tensor mask(kernel.shape(), std::move(full));
  return Conv2d(input, Mul(kernel, mask), bias, 1, static_cast<int>(kh / 2));
}

}  // namespace lhgm
