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

#include "lhgm/tensor.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

namespace lhgm {

int64_t NumElements(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw DimensionError("negative dimension");
    n *= d;
  }
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) {}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  const int64_t n = NumElements(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(n), fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (NumElements(shape) != static_cast<int64_t>(data.size())) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + ShapeToString(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::Scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + ShapeToString(shape()));
  }
  return impl_->data[0];
}

Tensor Tensor::Detach() const { return Tensor(shape(), impl_->data, false); }

GradTape& GradTape::Current() {
  thread_local GradTape tape;
  return tape;
}

bool GradTape::ShouldRecord(std::initializer_list<const Tensor*> inputs) const {
  if (!enabled_) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

void GradTape::Record(BackwardFn fn) { entries_.push_back(std::move(fn)); }

NoGradGuard::NoGradGuard() : previous_(GradTape::Current().enabled_) {
  GradTape::Current().enabled_ = false;
}

NoGradGuard::~NoGradGuard() { GradTape::Current().enabled_ = previous_; }

void AccumulateGrad(TensorImpl& impl, std::span<const double> values) {
  if (!impl.requires_grad) return;
  if (impl.grad.empty()) {
    impl.grad.assign(values.begin(), values.end());
    return;
  }
  for (size_t i = 0; i < values.size(); ++i) impl.grad[i] += values[i];
}

std::span<const double> OutputGrad(const TensorImpl& impl) { return impl.grad; }

Tensor MakeResult(Shape shape, std::vector<double> data,
                  std::initializer_list<const Tensor*> inputs,
                  std::function<void(const TensorImpl& out)> backward) {
  GradTape& tape = GradTape::Current();
  const bool record = tape.ShouldRecord(inputs);
  Tensor out(std::move(shape), std::move(data), record);
  if (record) {
    std::weak_ptr<TensorImpl> weak = out.impl();
    tape.Record([weak, fn = std::move(backward)]() {
      auto impl = weak.lock();
      if (!impl || impl->grad.empty()) return;
      fn(*impl);
    });
  }
  return out;
}

void Backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("Backward() needs a scalar loss, got " +
                         ShapeToString(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("Backward() on a loss that is not on the tape");
  }
  GradTape& tape = GradTape::Current();
  loss.impl()->grad.assign(1, 1.0);
  // Entries hold weak references to their own outputs; consumers keep
  // their inputs alive.
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    (*it)();
  }
  tape.Clear();
}

namespace {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast CheckBinary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.size() == 1) return Broadcast::kRightScalar;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       ShapeToString(a.shape()) + " and " +
                       ShapeToString(b.shape()));
}

// Shared driver for binary elementwise ops. `f` computes the value, `da` and
// `db` the partial derivatives given (a, b, out).
template <typename F, typename DA, typename DB>
Tensor Binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da,
              DB db) {
  const Broadcast bc = CheckBinary(a, b, name);
  const Shape shape = bc == Broadcast::kLeftScalar ? b.shape() : a.shape();
  const size_t n = static_cast<size_t>(NumElements(shape));
  auto av = a.data();
  auto bv = b.data();
  auto at = [&](size_t i) { return bc == Broadcast::kLeftScalar ? av[0] : av[i]; };
  auto bt = [&](size_t i) { return bc == Broadcast::kRightScalar ? bv[0] : bv[i]; };
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f(at(i), bt(i));
  auto ai = a.impl();
  auto bi = b.impl();
  return MakeResult(shape, std::move(out), {&a, &b},
                    [ai, bi, bc, n, da, db](const TensorImpl& o) {
                      auto g = OutputGrad(o);
                      auto a_of = [&](size_t i) {
                        return bc == Broadcast::kLeftScalar ? ai->data[0]
                                                            : ai->data[i];
                      };
                      auto b_of = [&](size_t i) {
                        return bc == Broadcast::kRightScalar ? bi->data[0]
                                                             : bi->data[i];
                      };
                      if (ai->requires_grad) {
                        std::vector<double> ga(ai->data.size(), 0.0);
                        for (size_t i = 0; i < n; ++i) {
                          const double d =
                              g[i] * da(a_of(i), b_of(i), o.data[i]);
                          if (bc == Broadcast::kLeftScalar) {
                            ga[0] += d;
                          } else {
                            ga[i] = d;
                          }
                        }
                        AccumulateGrad(*ai, ga);
                      }
                      if (bi->requires_grad) {
                        std::vector<double> gb(bi->data.size(), 0.0);
                        for (size_t i = 0; i < n; ++i) {
                          const double d =
                              g[i] * db(a_of(i), b_of(i), o.data[i]);
                          if (bc == Broadcast::kRightScalar) {
                            gb[0] += d;
                          } else {
                            gb[i] = d;
                          }
                        }
                        AccumulateGrad(*bi, gb);
                      }
                    });
}

// Shared driver for unary elementwise ops; `df(x, y)` is dy/dx.
template <typename F, typename DF>
Tensor Unary(const Tensor& a, F f, DF df) {
  const size_t n = a.size();
  auto av = a.data();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  auto ai = a.impl();
  return MakeResult(a.shape(), std::move(out), {&a},
                    [ai, n, df](const TensorImpl& o) {
                      auto g = OutputGrad(o);
                      std::vector<double> ga(n);
                      for (size_t i = 0; i < n; ++i) {
                        ga[i] = g[i] * df(ai->data[i], o.data[i]);
                      }
                      AccumulateGrad(*ai, ga);
                    });
}

double SoftplusValue(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double SigmoidValue(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor Add(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "Add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor Sub(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "Sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor Mul(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "Mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor Div(const Tensor& a, const Tensor& b) {
  return Binary(
      a, b, "Div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor AddScalar(const Tensor& a, double s) {
  return Unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor MulScalar(const Tensor& a, double s) {
  return Unary(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor Neg(const Tensor& a) { return MulScalar(a, -1.0); }

Tensor Exp(const Tensor& a) {
  return Unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor Log(const Tensor& a, bool checked) {
  if (checked) {
    for (double v : a.data()) {
      if (!(v > 0.0)) throw std::domain_error("Log of non-positive value");
    }
  }
  return Unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor Square(const Tensor& a) {
  return Unary(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor Clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("Clamp: lo > hi");
  return Unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor LeakyRelu(const Tensor& a, double slope) {
  return Unary(
      a, [slope](double x) { return x >= 0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0 ? 1.0 : slope; });
}

Tensor Softplus(const Tensor& a) {
  return Unary(
      a, SoftplusValue, [](double x, double) { return SigmoidValue(x); });
}

Tensor Tanh(const Tensor& a) {
  return Unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor Sigmoid(const Tensor& a) {
  return Unary(
      a, SigmoidValue, [](double, double y) { return y * (1.0 - y); });
}

Tensor Softmax(const Tensor& a, size_t axis) {
  if (axis >= a.rank()) {
    throw DimensionError("Softmax axis " + std::to_string(axis) +
                         " out of range for " + ShapeToString(a.shape()));
  }
  const auto& s = a.shape();
  int64_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const int64_t len = s[axis];
  auto av = a.data();
  std::vector<double> out(a.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (int64_t k = 0; k < len; ++k) mx = std::max(mx, av[base + k * inner]);
      double sum = 0.0;
      for (int64_t k = 0; k < len; ++k) {
        const double e = std::exp(av[base + k * inner] - mx);
        out[base + k * inner] = e;
        sum += e;
      }
      for (int64_t k = 0; k < len; ++k) out[base + k * inner] /= sum;
    }
  }
  auto ai = a.impl();
  return MakeResult(s, std::move(out), {&a},
                    [ai, outer, inner, len](const TensorImpl& o) {
                      auto g = OutputGrad(o);
                      std::vector<double> ga(o.data.size());
                      for (int64_t u = 0; u < outer; ++u) {
                        for (int64_t in = 0; in < inner; ++in) {
                          const int64_t base = u * len * inner + in;
                          double dot = 0.0;
                          for (int64_t k = 0; k < len; ++k) {
                            const int64_t i = base + k * inner;
                            dot += g[i] * o.data[i];
                          }
                          for (int64_t k = 0; k < len; ++k) {
                            const int64_t i = base + k * inner;
                            ga[i] = o.data[i] * (g[i] - dot);
                          }
                        }
                      }
                      AccumulateGrad(*ai, ga);
                    });
}

Tensor ReduceSum(const Tensor& a) {
  double sum = 0.0;
  for (double v : a.data()) sum += v;
  auto ai = a.impl();
  return MakeResult(Shape{}, {sum}, {&a}, [ai](const TensorImpl& o) {
    std::vector<double> ga(ai->data.size(), o.grad[0]);
    AccumulateGrad(*ai, ga);
  });
}

Tensor ReduceMean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("ReduceMean of empty tensor");
  return MulScalar(ReduceSum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor ReduceSumAxis(const Tensor& a, size_t axis) {
  if (axis >= a.rank()) {
    throw DimensionError("ReduceSumAxis axis out of range for " +
                         ShapeToString(a.shape()));
  }
  const auto& s = a.shape();
  int64_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const int64_t len = s[axis];
  Shape shape = s;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  auto av = a.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = 0; k < len; ++k)
      for (int64_t i = 0; i < inner; ++i)
        out[o * inner + i] += av[(o * len + k) * inner + i];
  auto ai = a.impl();
  return MakeResult(std::move(shape), std::move(out), {&a},
                    [ai, outer, inner, len](const TensorImpl& o) {
                      std::vector<double> ga(ai->data.size());
                      for (int64_t u = 0; u < outer; ++u)
                        for (int64_t k = 0; k < len; ++k)
                          for (int64_t i = 0; i < inner; ++i)
                            ga[(u * len + k) * inner + i] =
                                o.grad[u * inner + i];
                      AccumulateGrad(*ai, ga);
                    });
}

double RoundHalfAway(double x) { return std::round(x); }

Tensor RoundSte(const Tensor& a) {
  return Unary(a, RoundHalfAway, [](double, double) { return 1.0; });
}

double StdNormalCdf(double x) {
  return 0.5 * std::erfc(-x * std::numbers::sqrt2 * 0.5);
}

Tensor StdNormalCdf(const Tensor& a) {
  constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;
  return Unary(
      a, [](double x) { return StdNormalCdf(x); },
      [](double x, double) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Tensor Reshape(const Tensor& a, Shape shape) {
  if (NumElements(shape) != static_cast<int64_t>(a.size())) {
    throw DimensionError("Reshape " + ShapeToString(a.shape()) + " -> " +
                         ShapeToString(shape));
  }
  auto ai = a.impl();
  return MakeResult(std::move(shape), ai->data, {&a},
                    [ai](const TensorImpl& o) { AccumulateGrad(*ai, o.grad); });
}

Tensor SliceChannels(const Tensor& a, int64_t begin, int64_t count) {
  if (a.rank() != 4) throw DimensionError("SliceChannels expects NCHW");
  const int64_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  if (begin < 0 || count < 0 || begin + count > c) {
    throw DimensionError("SliceChannels range out of bounds");
  }
  std::vector<double> out(static_cast<size_t>(n * count * hw));
  auto av = a.data();
  for (int64_t i = 0; i < n; ++i) {
    std::copy_n(av.begin() + (i * c + begin) * hw, count * hw,
                out.begin() + i * count * hw);
  }
  auto ai = a.impl();
  return MakeResult(
      Shape{n, count, a.dim(2), a.dim(3)}, std::move(out), {&a},
      [ai, n, c, hw, begin, count](const TensorImpl& o) {
        std::vector<double> ga(ai->data.size(), 0.0);
        for (int64_t i = 0; i < n; ++i) {
          std::copy_n(o.grad.begin() + i * count * hw, count * hw,
                      ga.begin() + (i * c + begin) * hw);
        }
        AccumulateGrad(*ai, ga);
      });
}

Tensor ConcatChannels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DimensionError("ConcatChannels: " + ShapeToString(a.shape()) +
                         " vs " + ShapeToString(b.shape()));
  }
  const int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const int64_t hw = a.dim(2) * a.dim(3);
  std::vector<double> out(static_cast<size_t>(n * (ca + cb) * hw));
  auto av = a.data();
  auto bv = b.data();
  for (int64_t i = 0; i < n; ++i) {
    std::copy_n(av.begin() + i * ca * hw, ca * hw,
                out.begin() + i * (ca + cb) * hw);
    std::copy_n(bv.begin() + i * cb * hw, cb * hw,
                out.begin() + (i * (ca + cb) + ca) * hw);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return MakeResult(Shape{n, ca + cb, a.dim(2), a.dim(3)}, std::move(out),
                    {&a, &b}, [ai, bi, n, ca, cb, hw](const TensorImpl& o) {
                      if (ai->requires_grad) {
                        std::vector<double> ga(ai->data.size());
                        for (int64_t i = 0; i < n; ++i) {
                          std::copy_n(o.grad.begin() + i * (ca + cb) * hw,
                                      ca * hw, ga.begin() + i * ca * hw);
                        }
                        AccumulateGrad(*ai, ga);
                      }
                      if (bi->requires_grad) {
                        std::vector<double> gb(bi->data.size());
                        for (int64_t i = 0; i < n; ++i) {
                          std::copy_n(
                              o.grad.begin() + (i * (ca + cb) + ca) * hw,
                              cb * hw, gb.begin() + i * cb * hw);
                        }
                        AccumulateGrad(*bi, gb);
                      }
                    });
}

}  // namespace lhgm
