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

#include "clmorph/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <type_traits>
#include <unordered_set>

#include "clmorph/errors.hpp"

#include <cblas.h>

namespace clmorph {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until materialized
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

using detail::Node;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (node_->value.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from_data(shape(), node_->value, false); }
Tensor Tensor::clone(bool requires_grad) const { return from_data(shape(), node_->value, requires_grad); }

void Tensor::backward() const {
  if (node_->value.size() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative DFS post-order gives a topological order; only nodes that
  // require gradients are ever entered.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (node_->grad.empty()) node_->grad.assign(1, 0.0);
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    GradSpans grads(node->inputs.size());
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      Node* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      if (in->grad.empty()) in->grad.assign(in->value.size(), 0.0);
      grads[i] = in->grad;
    }
    node->backward(node->grad, grads);
  }
}

Tensor OpBuilder::make(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                       BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (const auto& t : inputs) node->requires_grad = node->requires_grad || t.requires_grad();
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(std::move(t.node_));
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// conv3d
//
// GEMMs run single-threaded so results are bit-reproducible.
[[maybe_unused]] const int kBlasThreads = [] {
  openblas_set_num_threads(1);
  return 1;
}();

// Lowered to GEMM: for a slab of output planes, im2col builds
// cols[C*k^3, planes*OH*OW] and out[F, ...] = weight[F, C*k^3] * cols.

namespace {

struct ConvGeometry {
  long N, C, D, H, W, F, k, s, p, OD, OH, OW;
  long kvol() const { return C * k * k * k; }
  long plane() const { return OH * OW; }
};

// Output planes per GEMM so that the column buffer stays around 16 MiB.
long slab_planes(const ConvGeometry& g) {
  const long budget = 2L << 20;  // doubles
  return std::clamp(budget / std::max(1L, g.kvol() * g.plane()), 1L, g.OD);
}

void im2col(const ConvGeometry& g, const double* in, long n, long od0, long planes, double* cols) {
  const long M = planes * g.plane();
  for (long c = 0; c < g.C; ++c)
    for (long kd = 0; kd < g.k; ++kd)
      for (long kh = 0; kh < g.k; ++kh)
        for (long kw = 0; kw < g.k; ++kw) {
          double* row = cols + (((c * g.k + kd) * g.k + kh) * g.k + kw) * M;
          for (long od = od0; od < od0 + planes; ++od) {
            const long id = od * g.s - g.p + kd;
            for (long oh = 0; oh < g.OH; ++oh) {
              double* dst = row + ((od - od0) * g.OH + oh) * g.OW;
              const long ih = oh * g.s - g.p + kh;
              if (id < 0 || id >= g.D || ih < 0 || ih >= g.H) {
                std::fill_n(dst, g.OW, 0.0);
                continue;
              }
              const double* src = in + (((n * g.C + c) * g.D + id) * g.H + ih) * g.W;
              for (long ow = 0; ow < g.OW; ++ow) {
                const long iw = ow * g.s - g.p + kw;
                dst[ow] = (iw >= 0 && iw < g.W) ? src[iw] : 0.0;
              }
            }
          }
        }
}

void col2im_add(const ConvGeometry& g, const double* cols, long n, long od0, long planes, double* gin) {
  const long M = planes * g.plane();
  for (long c = 0; c < g.C; ++c)
    for (long kd = 0; kd < g.k; ++kd)
      for (long kh = 0; kh < g.k; ++kh)
        for (long kw = 0; kw < g.k; ++kw) {
          const double* row = cols + (((c * g.k + kd) * g.k + kh) * g.k + kw) * M;
          for (long od = od0; od < od0 + planes; ++od) {
            const long id = od * g.s - g.p + kd;
            if (id < 0 || id >= g.D) continue;
            for (long oh = 0; oh < g.OH; ++oh) {
              const long ih = oh * g.s - g.p + kh;
              if (ih < 0 || ih >= g.H) continue;
              const double* src = row + ((od - od0) * g.OH + oh) * g.OW;
              double* dst = gin + (((n * g.C + c) * g.D + id) * g.H + ih) * g.W;
              for (long ow = 0; ow < g.OW; ++ow) {
                const long iw = ow * g.s - g.p + kw;
                if (iw >= 0 && iw < g.W) dst[iw] += src[ow];
              }
            }
          }
        }
}

// ---- stride-1 direct kernels on a zero-padded copy of the input ----
//
// An accumulator block of FB filters x NV vectors of output columns stays in
// registers; each input vector load feeds FB fused multiply-adds. Uses the
// GCC/Clang vector extension so the block maps onto SIMD registers.

template <int Lanes>
struct Simd {
  typedef double type __attribute__((vector_size(8 * Lanes)));
  static type load(const double* p) {
    type v;
    std::memcpy(&v, p, sizeof(v));
    return v;
  }
  static void store(double* p, type v) { std::memcpy(p, &v, sizeof(v)); }
};

struct Padded {
  std::vector<double> data;
  long C, D, H, W;  // padded extents
  const double* row(long c, long d, long h) const { return data.data() + ((c * D + d) * H + h) * W; }
};

Padded pad_input(const double* in, long C, long D, long H, long W, long p) {
  Padded out{std::vector<double>(static_cast<std::size_t>(C * (D + 2 * p) * (H + 2 * p) * (W + 2 * p)), 0.0),
             C, D + 2 * p, H + 2 * p, W + 2 * p};
  for (long c = 0; c < C; ++c)
    for (long d = 0; d < D; ++d)
      for (long h = 0; h < H; ++h)
        std::copy_n(in + ((c * D + d) * H + h) * W, W, out.data.data() + ((c * out.D + d + p) * out.H + h + p) * out.W + p);
  return out;
}

// out[f, od, oh, ow] += sum_{c,kd,kh,kw} w[f,c,kd,kh,kw] * in[c, od+kd, oh+kh, ow+kw]
template <int K, int FB, int Lanes, int NV>
void direct_forward(const Padded& in, const double* w, long F, long OD, long OH, long OW, double* out) {
  using S = Simd<Lanes>;
  using V = typename S::type;
  constexpr long k3 = K * K * K;
  constexpr long WB = Lanes * NV;
  const long C = in.C;
  for (long f0 = 0; f0 < F; f0 += FB)
    for (long od = 0; od < OD; ++od)
      for (long oh = 0; oh < OH; ++oh)
        for (long ow0 = 0; ow0 < OW; ow0 += WB) {
          V acc[FB][NV];
          for (int f = 0; f < FB; ++f)
            for (int x = 0; x < NV; ++x) acc[f][x] = V{};
          for (long c = 0; c < C; ++c)
            for (long kd = 0; kd < K; ++kd)
              for (long kh = 0; kh < K; ++kh) {
                const double* row = in.row(c, od + kd, oh + kh) + ow0;
                const double* wk = w + (f0 * C + c) * k3 + (kd * K + kh) * K;
                for (long kw = 0; kw < K; ++kw) {
                  V src[NV];
                  for (int x = 0; x < NV; ++x) src[x] = S::load(row + kw + Lanes * x);
                  for (int f = 0; f < FB; ++f) {
                    const double wv = wk[f * C * k3 + kw];
                    for (int x = 0; x < NV; ++x) acc[f][x] += wv * src[x];
                  }
                }
              }
          for (int f = 0; f < FB; ++f)
            for (int x = 0; x < NV; ++x) {
              double* dst = out + (((f0 + f) * OD + od) * OH + oh) * OW + ow0 + Lanes * x;
              S::store(dst, S::load(dst) + acc[f][x]);
            }
        }
}

// gw[f,c,kd,kh,kw] += sum_{od,oh,ow} gout[f,od,oh,ow] * in[c, od+kd, oh+kh, ow+kw]
template <int K, int FB, int Lanes, int NV>
void direct_weight_grad(const Padded& in, const double* gout, long F, long OD, long OH, long OW, double* gw) {
  using S = Simd<Lanes>;
  using V = typename S::type;
  constexpr long k3 = K * K * K;
  constexpr long WB = Lanes * NV;
  const long C = in.C, out_vol = OD * OH * OW;
  for (long f0 = 0; f0 < F; f0 += FB)
    for (long c = 0; c < C; ++c)
      for (long kd = 0; kd < K; ++kd)
        for (long kh = 0; kh < K; ++kh) {
          V acc[FB][K];
          for (int f = 0; f < FB; ++f)
            for (int t = 0; t < K; ++t) acc[f][t] = V{};
          for (long od = 0; od < OD; ++od)
            for (long oh = 0; oh < OH; ++oh) {
              const double* row = in.row(c, od + kd, oh + kh);
              const double* g = gout + f0 * out_vol + (od * OH + oh) * OW;
              for (long ow = 0; ow < OW; ow += WB)
                for (int x = 0; x < NV; ++x) {
                  V src[K];
                  for (int t = 0; t < K; ++t) src[t] = S::load(row + ow + Lanes * x + t);
                  for (int f = 0; f < FB; ++f) {
                    const V gv = S::load(g + f * out_vol + ow + Lanes * x);
                    for (int t = 0; t < K; ++t) acc[f][t] += gv * src[t];
                  }
                }
            }
          for (int f = 0; f < FB; ++f)
            for (int t = 0; t < K; ++t) {
              double sum = 0.0;
              for (int l = 0; l < Lanes; ++l) sum += acc[f][t][l];
              gw[((f0 + f) * C + c) * k3 + (kd * K + kh) * K + t] += sum;
            }
        }
}

template <int K, int FB>
void dispatch_width(long OW, auto&& run) {
  using std::integral_constant;
  if (OW % 16 == 0) run(integral_constant<int, K>{}, integral_constant<int, FB>{}, integral_constant<int, 8>{}, integral_constant<int, 2>{});
  else if (OW % 8 == 0) run(integral_constant<int, K>{}, integral_constant<int, FB>{}, integral_constant<int, 8>{}, integral_constant<int, 1>{});
  else if (OW % 4 == 0) run(integral_constant<int, K>{}, integral_constant<int, FB>{}, integral_constant<int, 4>{}, integral_constant<int, 1>{});
  else if (OW % 2 == 0) run(integral_constant<int, K>{}, integral_constant<int, FB>{}, integral_constant<int, 2>{}, integral_constant<int, 1>{});
  else run(integral_constant<int, K>{}, integral_constant<int, FB>{}, integral_constant<int, 1>{}, integral_constant<int, 1>{});
}

template <int K>
void dispatch_filters(long F, long OW, auto&& run) {
  if (F % 8 == 0) dispatch_width<K, 8>(OW, run);
  else if (F % 4 == 0) dispatch_width<K, 4>(OW, run);
  else if (F % 3 == 0) dispatch_width<K, 3>(OW, run);
  else if (F % 2 == 0) dispatch_width<K, 2>(OW, run);
  else dispatch_width<K, 1>(OW, run);
}

// Picks compile-time kernel/block sizes and calls run(K, FB, Lanes, NV).
// Only kernel sizes 1 and 3 have direct kernels.
void dispatch_blocks(long k, long F, long OW, auto&& run) {
  if (k == 3) dispatch_filters<3>(F, OW, run);
  else dispatch_filters<1>(F, OW, run);
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  require_rank(input, 5, "conv3d", "input");
  require_rank(weight, 5, "conv3d", "weight");
  ConvGeometry g{};
  g.N = input.dim(0), g.C = input.dim(1), g.D = input.dim(2), g.H = input.dim(3), g.W = input.dim(4);
  g.F = weight.dim(0), g.k = weight.dim(2);
  if (static_cast<long>(weight.dim(1)) != g.C) {
    throw DimensionError("conv3d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
  }
  if (static_cast<long>(weight.dim(3)) != g.k || static_cast<long>(weight.dim(4)) != g.k) {
    throw DimensionError("conv3d: kernel must be cubic, got " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || static_cast<long>(bias.dim(0)) != g.F)) {
    throw DimensionError("conv3d: bias shape " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(g.F) + " filters");
  }
  if (g.k % 2 == 0) throw ConfigError("conv3d: kernel size must be odd, got " + std::to_string(g.k));
  if (stride < 1) throw ConfigError("conv3d: stride must be >= 1");
  if (pad < 0) throw ConfigError("conv3d: pad must be >= 0");
  g.s = stride, g.p = pad;
  auto out_extent = [&](long e) {
    const long span = e + 2 * g.p - g.k;
    if (span < 0 || span % g.s != 0) {
      throw ConfigError("conv3d: extent " + std::to_string(e) + " with kernel " + std::to_string(g.k) +
                        ", stride " + std::to_string(g.s) + ", pad " + std::to_string(g.p) +
                        " does not give an exact output extent");
    }
    return span / g.s + 1;
  };
  g.OD = out_extent(g.D), g.OH = out_extent(g.H), g.OW = out_extent(g.W);

  const long K = g.kvol(), plane = g.plane(), out_vol = g.OD * plane;
  const long chunk = slab_planes(g);
  std::vector<double> out(static_cast<std::size_t>(g.N * g.F * out_vol), 0.0);
  {
    const double* in = input.data().data();
    const double* w = weight.data().data();
    if (bias.defined()) {
      const double* b = bias.data().data();
      for (long n = 0; n < g.N; ++n)
        for (long f = 0; f < g.F; ++f) std::fill_n(out.data() + (n * g.F + f) * out_vol, out_vol, b[f]);
    }
    if (g.s == 1 && (g.k == 1 || g.k == 3)) {
      for (long n = 0; n < g.N; ++n) {
        const Padded padded = pad_input(in + n * g.C * g.D * g.H * g.W, g.C, g.D, g.H, g.W, g.p);
        dispatch_blocks(g.k, g.F, g.OW, [&](auto kk, auto fb, auto lanes, auto nv) {
          direct_forward<kk(), fb(), lanes(), nv()>(padded, w, g.F, g.OD, g.OH, g.OW, out.data() + n * g.F * out_vol);
        });
      }
    } else {
      std::vector<double> cols(static_cast<std::size_t>(K * chunk * plane));
      for (long n = 0; n < g.N; ++n)
        for (long od0 = 0; od0 < g.OD; od0 += chunk) {
          const long planes = std::min(chunk, g.OD - od0), M = planes * plane;
          im2col(g, in, n, od0, planes, cols.data());
          cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, g.F, M, K, 1.0, w, K, cols.data(), M, 1.0,
                      out.data() + n * g.F * out_vol + od0 * plane, out_vol);
        }
    }
  }

  auto backward = [=](std::span<const double> gout, GradSpans& gr) {
    const double* in = input.data().data();
    const double* w = weight.data().data();
    double* gin = gr[0].empty() ? nullptr : gr[0].data();
    double* gw = gr[1].empty() ? nullptr : gr[1].data();
    const double* go = gout.data();
    if (gr.size() > 2 && !gr[2].empty()) {
      double* gb = gr[2].data();
      for (long n = 0; n < g.N; ++n)
        for (long f = 0; f < g.F; ++f) {
          const double* row = go + (n * g.F + f) * out_vol;
          double acc = 0.0;
          for (long i = 0; i < out_vol; ++i) acc += row[i];
          gb[f] += acc;
        }
    }
    if (!gin && !gw) return;
    if (g.s == 1 && (g.k == 1 || g.k == 3)) {
      // Input gradient = correlation of gout (padded by k-1-p) with the
      // flipped kernel, channels transposed.
      std::vector<double> flipped;
      if (gin) {
        flipped.resize(static_cast<std::size_t>(g.F * K));
        const long k3 = g.k * g.k * g.k;
        for (long f = 0; f < g.F; ++f)
          for (long c = 0; c < g.C; ++c)
            for (long t = 0; t < k3; ++t) flipped[(c * g.F + f) * k3 + (k3 - 1 - t)] = w[(f * g.C + c) * k3 + t];
      }
      const long back_pad = g.k - 1 - g.p;
      for (long n = 0; n < g.N; ++n) {
        const double* gslab = go + n * g.F * out_vol;
        if (gw) {
          const Padded padded = pad_input(in + n * g.C * g.D * g.H * g.W, g.C, g.D, g.H, g.W, g.p);
          dispatch_blocks(g.k, g.F, g.OW, [&](auto kk, auto fb, auto lanes, auto nv) {
            direct_weight_grad<kk(), fb(), lanes(), nv()>(padded, gslab, g.F, g.OD, g.OH, g.OW, gw);
          });
        }
        if (gin) {
          if (back_pad >= 0) {
            const Padded padded = pad_input(gslab, g.F, g.OD, g.OH, g.OW, back_pad);
            dispatch_blocks(g.k, g.C, g.W, [&](auto kk, auto fb, auto lanes, auto nv) {
              direct_forward<kk(), fb(), lanes(), nv()>(padded, flipped.data(), g.C, g.D, g.H, g.W,
                                                        gin + n * g.C * g.D * g.H * g.W);
            });
          } else {
            // pad > k-1 leaves input voxels no output sees; use the GEMM path.
            std::vector<double> cols(static_cast<std::size_t>(K * g.OD * plane));
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, g.OD * plane, g.F, 1.0, w, K, gslab, out_vol,
                        0.0, cols.data(), g.OD * plane);
            col2im_add(g, cols.data(), n, 0, g.OD, gin);
          }
        }
      }
      return;
    }
    std::vector<double> cols(static_cast<std::size_t>(K * chunk * plane));
    for (long n = 0; n < g.N; ++n)
      for (long od0 = 0; od0 < g.OD; od0 += chunk) {
        const long planes = std::min(chunk, g.OD - od0), M = planes * plane;
        const double* gslab = go + n * g.F * out_vol + od0 * plane;
        if (gw) {
          im2col(g, in, n, od0, planes, cols.data());
          cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, g.F, K, M, 1.0, gslab, out_vol, cols.data(), M,
                      1.0, gw, K);
        }
        if (gin) {
          cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, M, g.F, 1.0, w, K, gslab, out_vol, 0.0,
                      cols.data(), M);
          col2im_add(g, cols.data(), n, od0, planes, gin);
        }
      }
  };

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return OpBuilder::make({static_cast<std::size_t>(g.N), static_cast<std::size_t>(g.F),
                          static_cast<std::size_t>(g.OD), static_cast<std::size_t>(g.OH),
                          static_cast<std::size_t>(g.OW)},
                         std::move(out), std::move(inputs), backward);
}

// ---------------------------------------------------------------------------
// upsample_trilinear

namespace {

struct LerpTap {
  std::size_t i0, i1;
  double t;  // weight of i1
};

std::vector<LerpTap> lerp_table(std::size_t in, std::size_t factor) {
  std::vector<LerpTap> table(in * factor);
  for (std::size_t o = 0; o < table.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    table[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return table;
}

}  // namespace

Tensor upsample_trilinear(const Tensor& input, int factor) {
  if (factor < 1) throw ConfigError("upsample_trilinear: factor must be >= 1, got " + std::to_string(factor));
  require_rank(input, 5, "upsample_trilinear", "input");
  const std::size_t NC = input.dim(0) * input.dim(1);
  const std::size_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t OD = D * f, OH = H * f, OW = W * f;
  const auto td = lerp_table(D, f), th = lerp_table(H, f), tw = lerp_table(W, f);

  // Visit each output voxel with its 8 (index, weight) taps.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t nc = 0; nc < NC; ++nc) {
      const std::size_t ib = nc * D * H * W, ob = nc * OD * OH * OW;
      for (std::size_t od = 0; od < OD; ++od) {
        const auto& a = td[od];
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const auto& b = th[oh];
          const std::size_t r00 = ib + (a.i0 * H + b.i0) * W, r01 = ib + (a.i0 * H + b.i1) * W;
          const std::size_t r10 = ib + (a.i1 * H + b.i0) * W, r11 = ib + (a.i1 * H + b.i1) * W;
          const double w00 = (1 - a.t) * (1 - b.t), w01 = (1 - a.t) * b.t;
          const double w10 = a.t * (1 - b.t), w11 = a.t * b.t;
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const auto& c = tw[ow];
            fn(ob + (od * OH + oh) * OW + ow, r00, r01, r10, r11, w00, w01, w10, w11, c);
          }
        }
      }
    }
  };

  std::vector<double> out(NC * OD * OH * OW);
  const double* in = input.data().data();
  for_each_tap([&](std::size_t o, std::size_t r00, std::size_t r01, std::size_t r10, std::size_t r11,
                   double w00, double w01, double w10, double w11, const LerpTap& c) {
    auto row = [&](std::size_t r) { return (1 - c.t) * in[r + c.i0] + c.t * in[r + c.i1]; };
    out[o] = w00 * row(r00) + w01 * row(r01) + w10 * row(r10) + w11 * row(r11);
  });

  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    double* gin = g[0].data();
    for_each_tap([&](std::size_t o, std::size_t r00, std::size_t r01, std::size_t r10, std::size_t r11,
                     double w00, double w01, double w10, double w11, const LerpTap& c) {
      const double go = gout[o];
      auto row = [&](std::size_t r, double w) {
        gin[r + c.i0] += go * w * (1 - c.t);
        gin[r + c.i1] += go * w * c.t;
      };
      row(r00, w00);
      row(r01, w01);
      row(r10, w10);
      row(r11, w11);
    });
  };
  return OpBuilder::make({input.dim(0), input.dim(1), OD, OH, OW}, std::move(out), {input}, backward);
}

// ---------------------------------------------------------------------------
// avg_pool3d

Tensor avg_pool3d(const Tensor& input, int factor) {
  if (factor < 1) throw ConfigError("avg_pool3d: factor must be >= 1, got " + std::to_string(factor));
  require_rank(input, 5, "avg_pool3d", "input");
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t NC = input.dim(0) * input.dim(1);
  const std::size_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
  if (D % f || H % f || W % f) {
    throw ConfigError("avg_pool3d: extents " + shape_str(input.shape()) + " not divisible by " + std::to_string(f));
  }
  const std::size_t OD = D / f, OH = H / f, OW = W / f;
  const double inv = 1.0 / static_cast<double>(f * f * f);
  auto for_each = [=](auto&& fn) {
    for (std::size_t nc = 0; nc < NC; ++nc)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            fn(((nc * D + d) * H + h) * W + w, ((nc * OD + d / f) * OH + h / f) * OW + w / f);
  };
  std::vector<double> out(NC * OD * OH * OW, 0.0);
  const auto in = input.data();
  for_each([&](std::size_t i, std::size_t o) { out[o] += in[i] * inv; });
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    for_each([&](std::size_t i, std::size_t o) { g[0][i] += gout[o] * inv; });
  };
  return OpBuilder::make({input.dim(0), input.dim(1), OD, OH, OW}, std::move(out), {input}, backward);
}

// ---------------------------------------------------------------------------
// linear

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const std::size_t N = input.dim(0), K = input.dim(1), M = weight.dim(0);
  if (weight.dim(1) != K) {
    throw DimensionError("linear: inner dimension mismatch, input " + shape_str(input.shape()) +
                         " weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != M)) {
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(M) + " outputs");
  }
  std::vector<double> out(N * M);
  const double* x = input.data().data();
  const double* w = weight.data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t m = 0; m < M; ++m) {
      double acc = bias.defined() ? bias.data()[m] : 0.0;
      for (std::size_t kk = 0; kk < K; ++kk) acc += x[n * K + kk] * w[m * K + kk];
      out[n * M + m] = acc;
    }

  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    const double* xv = input.data().data();
    const double* wv = weight.data().data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < M; ++m) {
        const double go = gout[n * M + m];
        if (!g[0].empty())
          for (std::size_t kk = 0; kk < K; ++kk) g[0][n * K + kk] += go * wv[m * K + kk];
        if (!g[1].empty())
          for (std::size_t kk = 0; kk < K; ++kk) g[1][m * K + kk] += go * xv[n * K + kk];
        if (g.size() > 2 && !g[2].empty()) g[2][m] += go;
      }
  };
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return OpBuilder::make({N, M}, std::move(out), std::move(inputs), backward);
}

// ---------------------------------------------------------------------------
// instance_norm

Tensor instance_norm(const Tensor& input, const Tensor& scale_t, const Tensor& shift_t, double eps) {
  if (input.rank() < 3) throw DimensionError("instance_norm: input must be [N,C,...], got " + shape_str(input.shape()));
  const std::size_t N = input.dim(0), C = input.dim(1), S = input.numel() / (N * C);
  if (scale_t.numel() != C || shift_t.numel() != C) {
    throw DimensionError("instance_norm: affine parameters must have " + std::to_string(C) + " entries");
  }
  std::vector<double> out(input.numel());
  std::vector<double> inv_std(N * C);
  const double* x = input.data().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* src = x + nc * S;
    double mean = 0.0;
    for (std::size_t i = 0; i < S; ++i) mean += src[i];
    mean /= static_cast<double>(S);
    double var = 0.0;
    for (std::size_t i = 0; i < S; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(S);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[nc] = inv;
    const double g = scale_t.data()[nc % C], b = shift_t.data()[nc % C];
    double* dst = out.data() + nc * S;
    for (std::size_t i = 0; i < S; ++i) dst[i] = g * ((src[i] - mean) * inv) + b;
  }

  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    const double* xv = input.data().data();
    std::vector<double> xhat(S);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const std::size_t c = nc % C;
      const double* src = xv + nc * S;
      const double* go = gout.data() + nc * S;
      double mean = 0.0;
      for (std::size_t i = 0; i < S; ++i) mean += src[i];
      mean /= static_cast<double>(S);
      const double inv = inv_std[nc];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t i = 0; i < S; ++i) {
        xhat[i] = (src[i] - mean) * inv;
        sum_dy += go[i];
        sum_dy_xhat += go[i] * xhat[i];
      }
      if (!g[1].empty()) g[1][c] += sum_dy_xhat;
      if (!g[2].empty()) g[2][c] += sum_dy;
      if (!g[0].empty()) {
        const double gamma = scale_t.data()[c];
        const double sd = static_cast<double>(S);
        double* dx = g[0].data() + nc * S;
        for (std::size_t i = 0; i < S; ++i) {
          dx[i] += gamma * inv / sd * (sd * go[i] - sum_dy - xhat[i] * sum_dy_xhat);
        }
      }
    }
  };
  return OpBuilder::make(input.shape(), std::move(out), {input, scale_t, shift_t}, backward);
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

bool is_scalar(const Tensor& t) { return t.numel() == 1 && t.rank() == 0; }

// Result shape of a binary elementwise op under scalar-vs-tensor broadcasting.
const Shape& binary_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar(a)) return b.shape();
  if (is_scalar(b)) return a.shape();
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " are not broadcastable (only scalar-vs-tensor)");
}

// Binary op with pointwise partial derivatives da(x,y), db(x,y).
template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  const Shape shape = binary_shape(a, b, name);
  const std::size_t n = shape_numel(shape);
  const bool sa = a.numel() != n, sb = b.numel() != n;
  std::vector<double> out(n);
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[sa ? 0 : i], bv[sb ? 0 : i]);
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double xa = x[sa ? 0 : i], yb = y[sb ? 0 : i];
      if (!g[0].empty()) g[0][sa ? 0 : i] += gout[i] * da(xa, yb);
      if (!g[1].empty()) g[1][sb ? 0 : i] += gout[i] * db(xa, yb);
    }
  };
  return OpBuilder::make(shape, std::move(out), {a, b}, backward);
}

// Unary op whose derivative is expressed through input x and output y.
template <class F, class DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto av = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    const auto x = a.data();
    for (std::size_t i = 0; i < n; ++i) g[0][i] += gout[i] * df(x[i]);
  };
  return OpBuilder::make(a.shape(), std::move(out), {a}, backward);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                   [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(a, [factor](double x) { return x * factor; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(a, [value](double x) { return x + value; }, [](double) { return 1.0; });
}

Tensor negate(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: input must be strictly positive, got " + std::to_string(v));
  }
  return unary_op(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary_op(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                  [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

// ---------------------------------------------------------------------------
// reductions

Tensor reduce_sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const std::size_t n = a.numel();
  auto backward = [n](std::span<const double> gout, GradSpans& g) {
    for (std::size_t i = 0; i < n; ++i) g[0][i] += gout[0];
  };
  return OpBuilder::make({}, {acc}, {a}, backward);
}

Tensor reduce_mean(const Tensor& a) { return scale(reduce_sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reduce_sum(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("reduce_sum: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
  const Shape& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  std::vector<double> out(outer * inner, 0.0);
  const auto v = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += v[(o * len + l) * inner + i];
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) g[0][(o * len + l) * inner + i] += gout[o * inner + i];
  };
  return OpBuilder::make(std::move(out_shape), std::move(out), {a}, backward);
}

Tensor reduce_mean(const Tensor& a, std::size_t axis) {
  const std::size_t len = axis < a.rank() ? a.dim(axis) : 1;
  return scale(reduce_sum(a, axis), 1.0 / static_cast<double>(len));
}

Tensor l2_norm(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  const double norm = std::sqrt(acc);
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    if (norm == 0.0) return;
    const auto v = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) g[0][i] += gout[0] * v[i] / norm;
  };
  return OpBuilder::make({}, {norm}, {a}, backward);
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  require_rank(a, 2, "l2_normalize_rows", "input");
  const std::size_t N = a.dim(0), K = a.dim(1);
  std::vector<double> out(N * K), norms(N);
  const auto v = a.data();
  for (std::size_t n = 0; n < N; ++n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) acc += v[n * K + k] * v[n * K + k];
    norms[n] = std::max(std::sqrt(acc), eps);
    for (std::size_t k = 0; k < K; ++k) out[n * K + k] = v[n * K + k] / norms[n];
  }
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    const auto x = a.data();
    for (std::size_t n = 0; n < N; ++n) {
      // d(x/|x|) = (g - u (u.g)) / |x|
      double dot = 0.0;
      for (std::size_t k = 0; k < K; ++k) dot += gout[n * K + k] * x[n * K + k] / norms[n];
      for (std::size_t k = 0; k < K; ++k) {
        const double u = x[n * K + k] / norms[n];
        g[0][n * K + k] += (gout[n * K + k] - u * dot) / norms[n];
      }
    }
  };
  return OpBuilder::make(a.shape(), std::move(out), {a}, backward);
}

// ---------------------------------------------------------------------------
// shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto backward = [](std::span<const double> gout, GradSpans& g) {
    for (std::size_t i = 0; i < gout.size(); ++i) g[0][i] += gout[i];
  };
  return OpBuilder::make(std::move(shape), std::move(out), {a}, backward);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) + " along axis " + std::to_string(axis));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::vector<std::size_t> chunk(parts.size());
  std::size_t row = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    chunk[p] = parts[p].numel() / std::max<std::size_t>(outer, 1);
    row += chunk[p];
  }
  std::vector<double> out(outer * row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = o * row;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto v = parts[p].data();
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * chunk[p]), chunk[p], out.begin() + static_cast<std::ptrdiff_t>(off));
      off += chunk[p];
    }
  }
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    for (std::size_t o = 0; o < outer; ++o) {
      std::size_t off = o * row;
      for (std::size_t p = 0; p < chunk.size(); ++p) {
        if (!g[p].empty())
          for (std::size_t i = 0; i < chunk[p]; ++i) g[p][o * chunk[p] + i] += gout[off + i];
        off += chunk[p];
      }
    }
  };
  return OpBuilder::make(std::move(out_shape), std::move(out), parts, backward);
}

Tensor repeat_batch(const Tensor& a, std::size_t times) {
  if (a.rank() == 0 || a.dim(0) != 1) throw DimensionError("repeat_batch: leading extent must be 1, got " + shape_str(a.shape()));
  if (times == 1) return a;
  const std::size_t n = a.numel();
  std::vector<double> out(n * times);
  for (std::size_t t = 0; t < times; ++t) std::copy(a.data().begin(), a.data().end(), out.begin() + static_cast<std::ptrdiff_t>(t * n));
  Shape shape = a.shape();
  shape[0] = times;
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    for (std::size_t t = 0; t < times; ++t)
      for (std::size_t i = 0; i < n; ++i) g[0][i] += gout[t * n + i];
  };
  return OpBuilder::make(std::move(shape), std::move(out), {a}, backward);
}

Tensor slice_batch(const Tensor& a, std::size_t begin, std::size_t count) {
  if (a.rank() == 0 || begin + count > a.dim(0) || count == 0) {
    throw DimensionError("slice_batch: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t stride = a.numel() / a.dim(0);
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                          a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
  Shape shape = a.shape();
  shape[0] = count;
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    for (std::size_t i = 0; i < gout.size(); ++i) g[0][begin * stride + i] += gout[i];
  };
  return OpBuilder::make(std::move(shape), std::move(out), {a}, backward);
}

}  // namespace clmorph
