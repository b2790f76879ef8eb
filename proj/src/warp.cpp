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

#include "clmorph/warp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace clmorph {

namespace {

struct AxisSample {
  std::size_t i0 = 0, i1 = 0;
  double t = 0.0;      // weight of i1
  double dt_dq = 0.0;  // 0 when the coordinate was clamped
};

inline AxisSample sample_axis(double q, std::size_t extent) {
  AxisSample s;
  if (extent == 1) return s;
  const double hi = static_cast<double>(extent - 1);
  const double c = std::clamp(q, 0.0, hi);
  s.dt_dq = (q >= 0.0 && q <= hi) ? 1.0 : 0.0;
  s.i0 = std::min(static_cast<std::size_t>(std::floor(c)), extent - 2);
  s.i1 = s.i0 + 1;
  s.t = c - static_cast<double>(s.i0);
  return s;
}

}  // namespace

Tensor warp_trilinear(const Tensor& vol, const Tensor& z) {
  if (vol.rank() != 5 || z.rank() != 5 || z.dim(1) != 3 || vol.dim(0) != z.dim(0) ||
      vol.dim(2) != z.dim(2) || vol.dim(3) != z.dim(3) || vol.dim(4) != z.dim(4)) {
    throw DimensionError("warp_trilinear: volume " + shape_str(vol.shape()) + " and field " +
                         shape_str(z.shape()) + " do not match");
  }
  const std::size_t N = vol.dim(0), C = vol.dim(1);
  const Extent3 e{vol.dim(2), vol.dim(3), vol.dim(4)};
  const std::size_t V = e.voxels();

  // Calls fn(n, voxel, sd, sh, sw) for each output voxel.
  auto for_each_voxel = [=](auto&& fn) {
    const auto zv = z.data();
    for (std::size_t n = 0; n < N; ++n) {
      const double* zd = zv.data() + n * 3 * V;
      for (std::size_t d = 0; d < e.d; ++d)
        for (std::size_t h = 0; h < e.h; ++h)
          for (std::size_t w = 0; w < e.w; ++w) {
            const std::size_t p = e.index(d, h, w);
            fn(n, p, sample_axis(static_cast<double>(d) + zd[p], e.d),
               sample_axis(static_cast<double>(h) + zd[V + p], e.h),
               sample_axis(static_cast<double>(w) + zd[2 * V + p], e.w));
          }
    }
  };

  std::vector<double> out(N * C * V);
  {
    const auto src = vol.data();
    for_each_voxel([&](std::size_t n, std::size_t p, const AxisSample& a, const AxisSample& b,
                       const AxisSample& c) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double* v = src.data() + (n * C + ch) * V;
        auto at = [&](std::size_t i, std::size_t j, std::size_t k) { return v[e.index(i, j, k)]; };
        const double c00 = (1 - c.t) * at(a.i0, b.i0, c.i0) + c.t * at(a.i0, b.i0, c.i1);
        const double c01 = (1 - c.t) * at(a.i0, b.i1, c.i0) + c.t * at(a.i0, b.i1, c.i1);
        const double c10 = (1 - c.t) * at(a.i1, b.i0, c.i0) + c.t * at(a.i1, b.i0, c.i1);
        const double c11 = (1 - c.t) * at(a.i1, b.i1, c.i0) + c.t * at(a.i1, b.i1, c.i1);
        const double c0 = (1 - b.t) * c00 + b.t * c01;
        const double c1 = (1 - b.t) * c10 + b.t * c11;
        out[(n * C + ch) * V + p] = (1 - a.t) * c0 + a.t * c1;
      }
    });
  }

  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    const auto src = vol.data();
    double* gvol = g[0].empty() ? nullptr : g[0].data();
    double* gz = g[1].empty() ? nullptr : g[1].data();
    for_each_voxel([&](std::size_t n, std::size_t p, const AxisSample& a, const AxisSample& b,
                       const AxisSample& c) {
      const double wa[2] = {1 - a.t, a.t}, wb[2] = {1 - b.t, b.t}, wc[2] = {1 - c.t, c.t};
      const double da[2] = {-a.dt_dq, a.dt_dq}, db[2] = {-b.dt_dq, b.dt_dq}, dc[2] = {-c.dt_dq, c.dt_dq};
      const std::size_t ia[2] = {a.i0, a.i1}, ib[2] = {b.i0, b.i1}, ic[2] = {c.i0, c.i1};
      double gd = 0.0, gh = 0.0, gw = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double go = gout[(n * C + ch) * V + p];
        if (go == 0.0) continue;
        const std::size_t base = (n * C + ch) * V;
        for (int x = 0; x < 2; ++x)
          for (int y = 0; y < 2; ++y)
            for (int s = 0; s < 2; ++s) {
              const std::size_t idx = base + e.index(ia[x], ib[y], ic[s]);
              if (gvol) gvol[idx] += go * wa[x] * wb[y] * wc[s];
              if (gz) {
                const double v = src[idx] * go;
                gd += v * da[x] * wb[y] * wc[s];
                gh += v * wa[x] * db[y] * wc[s];
                gw += v * wa[x] * wb[y] * dc[s];
              }
            }
      }
      if (gz) {
        double* zg = gz + n * 3 * V;
        zg[p] += gd;
        zg[V + p] += gh;
        zg[2 * V + p] += gw;
      }
    });
  };
  return OpBuilder::make(vol.shape(), std::move(out), {vol, z}, backward);
}

ImageVolume warp_trilinear(const ImageVolume& vol, const DisplacementField& field) {
  require_same_extent(vol, field, "warp_trilinear");
  ImageVolume out = image_from_tensor(warp_trilinear(to_tensor(vol), to_tensor(field)));
  out.spacing = vol.spacing;
  return out;
}

LabelVolume warp_nearest(const LabelVolume& labels, const DisplacementField& field) {
  require_same_extent(labels, field, "warp_nearest");
  const Extent3 e = labels.extent;
  LabelVolume out(e);
  out.spacing = labels.spacing;
  auto nearest = [](double q, std::size_t extent) {
    const double r = std::floor(q + 0.5);
    return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(extent - 1)));
  };
  for (std::size_t d = 0; d < e.d; ++d)
    for (std::size_t h = 0; h < e.h; ++h)
      for (std::size_t w = 0; w < e.w; ++w) {
        const std::size_t sd = nearest(static_cast<double>(d) + field.at(0, d, h, w), e.d);
        const std::size_t sh = nearest(static_cast<double>(h) + field.at(1, d, h, w), e.h);
        const std::size_t sw = nearest(static_cast<double>(w) + field.at(2, d, h, w), e.w);
        out.at(d, h, w) = labels.at(sd, sh, sw);
      }
  return out;
}

ImageVolume jacobian_determinant(const DisplacementField& field) {
  const Extent3 e = field.extent;
  if (e.d < 3 || e.h < 3 || e.w < 3) {
    throw ConfigError("jacobian_determinant: every extent must be >= 3");
  }
  ImageVolume out(e);
  // Derivative of component `comp` along `axis` at (d,h,w).
  auto deriv = [&](int comp, int axis, std::size_t d, std::size_t h, std::size_t w) {
    std::size_t idx[3] = {d, h, w};
    const std::size_t ext[3] = {e.d, e.h, e.w};
    const std::size_t i = idx[axis];
    std::size_t lo = i == 0 ? 0 : i - 1;
    std::size_t hi = i + 1 == ext[axis] ? i : i + 1;
    idx[axis] = lo;
    const double a = field.at(comp, idx[0], idx[1], idx[2]);
    idx[axis] = hi;
    const double b = field.at(comp, idx[0], idx[1], idx[2]);
    return (b - a) / static_cast<double>(hi - lo);
  };
  for (std::size_t d = 0; d < e.d; ++d)
    for (std::size_t h = 0; h < e.h; ++h)
      for (std::size_t w = 0; w < e.w; ++w) {
        double j[3][3];
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) j[r][c] = (r == c ? 1.0 : 0.0) + deriv(r, c, d, h, w);
        out.at(d, h, w) = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                          j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                          j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
      }
  return out;
}

JacobianStats jacobian_stats(const ImageVolume& jacobian) {
  JacobianStats s;
  if (jacobian.data.empty()) return s;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -std::numeric_limits<double>::infinity();
  for (double v : jacobian.data) {
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    s.mean += v;
    if (v <= 0.0) ++s.non_positive;
  }
  s.mean /= static_cast<double>(jacobian.data.size());
  return s;
}

}  // namespace clmorph
