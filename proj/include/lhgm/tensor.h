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

#ifndef LHGM_TENSOR_H_
#define LHGM_TENSOR_H_

// Dense float64 tensors with a reverse-mode gradient tape.
//
// Every op that sees at least one input with requires_grad() records a
// backward closure on the calling thread's GradTape. Backward() replays the
// tape in reverse order and then clears it. Layout is row-major; image
// tensors use NCHW.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lhgm {

using Shape = std::vector<int64_t>;

int64_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation
};

class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor Scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  int64_t dim(size_t axis) const { return impl_->shape.at(axis); }
  size_t rank() const { return impl_->shape.size(); }
  size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Writes bypass the tape; only use on leaves or before recording.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void ZeroGrad() { impl_->grad.clear(); }

  // Copy of the values with no tape history.
  Tensor Detach() const;
  // Shares storage; Detach() gives an independent copy.
  bool SameStorage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Per-thread record of executed differentiable ops.
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  static GradTape& Current();

  // True when recording is enabled and any input requires a gradient.
  bool ShouldRecord(std::initializer_list<const Tensor*> inputs) const;
  void Record(BackwardFn fn);
  size_t size() const { return entries_.size(); }
  void Clear() { entries_.clear(); }

  bool enabled() const { return enabled_; }

 private:
  friend class NoGradGuard;
  friend void Backward(const Tensor& loss);
  std::vector<BackwardFn> entries_;
  bool enabled_ = true;
};

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Adds `values` into impl's gradient buffer, allocating it on first use.
void AccumulateGrad(TensorImpl& impl, std::span<const double> values);
// Gradient of an op output, or an empty span if nothing flowed into it.
std::span<const double> OutputGrad(const TensorImpl& impl);

// Builds an op result; when any input tracks gradients the result does too
// and `backward` is pushed on the tape. `backward` receives the output impl.
Tensor MakeResult(Shape shape, std::vector<double> data,
                  std::initializer_list<const Tensor*> inputs,
                  std::function<void(const TensorImpl& out)> backward);

// Seeds d(loss)/d(loss) = 1, replays the tape and clears it.
void Backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Elementwise and reduction ops. Binary ops require equal shapes or one side
// with exactly one element.

Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Div(const Tensor& a, const Tensor& b);
Tensor AddScalar(const Tensor& a, double s);
Tensor MulScalar(const Tensor& a, double s);
Tensor Neg(const Tensor& a);
Tensor Exp(const Tensor& a);
// Throws std::domain_error on non-positive input when `checked`.
Tensor Log(const Tensor& a, bool checked = true);
Tensor Square(const Tensor& a);
Tensor Clamp(const Tensor& a, double lo, double hi);
Tensor LeakyRelu(const Tensor& a, double slope);
Tensor Softplus(const Tensor& a);
Tensor Tanh(const Tensor& a);
Tensor Sigmoid(const Tensor& a);
Tensor Softmax(const Tensor& a, size_t axis);
Tensor ReduceSum(const Tensor& a);
Tensor ReduceMean(const Tensor& a);
// Sums out one axis; the result drops that axis.
Tensor ReduceSumAxis(const Tensor& a, size_t axis);
// Rounds half away from zero; gradient passes through unchanged.
Tensor RoundSte(const Tensor& a);
Tensor StdNormalCdf(const Tensor& a);

Tensor Reshape(const Tensor& a, Shape shape);
// Channel (axis 1) slicing and concatenation of NCHW tensors.
Tensor SliceChannels(const Tensor& a, int64_t begin, int64_t count);
Tensor ConcatChannels(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Convolutions. input [N,C,H,W], kernel [O,C,kh,kw], bias [O] (may be empty).

Tensor Conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

// Adjoint of Conv2d; kernel is [C_in,O,kh,kw] and the output spatial size is
// (H-1)*stride - 2*padding + kh.
Tensor Conv2dTransposed(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, int stride, int padding);

enum class MaskType { kA };

// Zeroes the kernel centre and every raster-later tap, then applies a
// stride-1 "same" convolution. Output at pixel p only sees input pixels
// strictly before p in raster order.
std::vector<double> CausalMask(int64_t kh, int64_t kw, MaskType type);
Tensor MaskedConv2d(const Tensor& input, const Tensor& kernel,
                    const Tensor& bias, MaskType type = MaskType::kA);

// Scalar standard normal CDF shared by the tensor op and the likelihoods.
double StdNormalCdf(double x);
double RoundHalfAway(double x);

}  // namespace lhgm

#endif  // LHGM_TENSOR_H_
