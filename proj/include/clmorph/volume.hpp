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

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "clmorph/errors.hpp"
#include "clmorph/tensor.hpp"

namespace clmorph {

// Extents in (d, h, w) order.
struct Extent3 {
  std::size_t d = 0, h = 0, w = 0;

  std::size_t voxels() const { return d * h * w; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
  bool operator==(const Extent3&) const = default;
};

// Dense 3-D field. Spacing is carried as metadata only.
template <class T>
struct Volume {
  Extent3 extent;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::vector<T> data;

  Volume() = default;
  explicit Volume(Extent3 e, T fill = T{}) : extent(e), data(e.voxels(), fill) {}

  T& at(std::size_t z, std::size_t y, std::size_t x) { return data[extent.index(z, y, x)]; }
  const T& at(std::size_t z, std::size_t y, std::size_t x) const { return data[extent.index(z, y, x)]; }
};

using ImageVolume = Volume<double>;
using LabelVolume = Volume<std::uint8_t>;

// Per-voxel displacement in voxel units; component-major storage
// (all d-components, then h, then w), i.e. a [3,D,H,W] array.
struct DisplacementField {
  Extent3 extent;
  std::vector<double> data;

  DisplacementField() = default;
  explicit DisplacementField(Extent3 e) : extent(e), data(3 * e.voxels(), 0.0) {}

  double& at(int comp, std::size_t z, std::size_t y, std::size_t x) {
    return data[static_cast<std::size_t>(comp) * extent.voxels() + extent.index(z, y, x)];
  }
  double at(int comp, std::size_t z, std::size_t y, std::size_t x) const {
    return data[static_cast<std::size_t>(comp) * extent.voxels() + extent.index(z, y, x)];
  }
};

template <class A, class B>
void require_same_extent(const A& a, const B& b, const char* op) {
  if (!(a.extent == b.extent)) {
    throw DimensionError(std::string(op) + ": extents " + std::to_string(a.extent.d) + "x" +
                         std::to_string(a.extent.h) + "x" + std::to_string(a.extent.w) + " and " +
                         std::to_string(b.extent.d) + "x" + std::to_string(b.extent.h) + "x" +
                         std::to_string(b.extent.w) + " differ");
  }
}

// Image as a [1,1,D,H,W] tensor and back.
Tensor to_tensor(const ImageVolume& vol, bool requires_grad = false);
ImageVolume image_from_tensor(const Tensor& t, std::size_t batch_index = 0);
// Field as a [1,3,D,H,W] tensor and back.
Tensor to_tensor(const DisplacementField& field, bool requires_grad = false);
DisplacementField field_from_tensor(const Tensor& t, std::size_t batch_index = 0);

// Zero mean, unit variance (returns a copy; constant images map to zeros).
ImageVolume normalize_intensity(const ImageVolume& vol);

}  // namespace clmorph
