// Copyright 2026 The CLMorph Authors.
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

#pragma once

// Dense row-major float64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Ops record their inputs and a
// backward rule; Tensor::backward() walks the graph in reverse topological
// order. Leaves created with requires_grad=true keep their gradient buffer
// across graphs until zero_grad() is called, which is how parameters work.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace clmorph {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // In-place access for initialization and optimizer updates only.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  // Empty span when no gradient has been materialized.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history, requires_grad=false.
  Tensor detach() const;
  // Value copy as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  void backward() const;

  // Identity of the underlying node (used to detect shared parameters).
  const void* id() const noexcept { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct OpBuilder;
  friend struct detail::Node;
};

// Gradient buffers handed to a backward rule, one per input. An entry is
// empty when that input does not require a gradient.
using GradSpans = std::vector<std::span<double>>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSpans& grad_in)>;

// Records a new op result. Used by the ops below and by modules that
// implement fused kernels (warping, contrastive loss).
struct OpBuilder {
  static Tensor make(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                     BackwardFn backward);
};

// ---- convolution / resampling ----

// input [N,C,D,H,W], weight [F,C,k,k,k], bias [F] (may be undefined).
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);

// Trilinear upsampling of the three trailing axes of an [N,C,D,H,W] tensor,
// align_corners=false: source = (dst + 0.5) / factor - 0.5, clamped to the grid.
Tensor upsample_trilinear(const Tensor& input, int factor);

// Non-overlapping average pooling of the three trailing axes; extents must be
// divisible by `factor`.
Tensor avg_pool3d(const Tensor& input, int factor);

// input [N,K], weight [M,K], bias [M] (may be undefined) -> [N,M]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Per-sample, per-channel normalization of [N,C,...] with affine scale/shift [C].
Tensor instance_norm(const Tensor& input, const Tensor& scale, const Tensor& shift,
                     double eps = 1e-5);

// ---- elementwise; the only broadcasting allowed is scalar-vs-tensor ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor negate(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);

// ---- reductions ----

Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);
Tensor reduce_sum(const Tensor& a, std::size_t axis);
Tensor reduce_mean(const Tensor& a, std::size_t axis);
// Euclidean norm over all elements.
Tensor l2_norm(const Tensor& a);
// Rows of an [N,K] tensor scaled to unit Euclidean norm.
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);

// ---- shape manipulation ----

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Repeat a tensor with leading extent 1 `times` along axis 0.
Tensor repeat_batch(const Tensor& a, std::size_t times);
// Slice [begin, begin+count) along axis 0.
Tensor slice_batch(const Tensor& a, std::size_t begin, std::size_t count);

}  // namespace clmorph
