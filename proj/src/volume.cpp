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

#include "clmorph/volume.hpp"

#include <cmath>

namespace clmorph {

Tensor to_tensor(const ImageVolume& vol, bool requires_grad) {
  return Tensor::from_data({1, 1, vol.extent.d, vol.extent.h, vol.extent.w}, vol.data, requires_grad);
}

ImageVolume image_from_tensor(const Tensor& t, std::size_t batch_index) {
  if (t.rank() != 5 || t.dim(1) != 1 || batch_index >= t.dim(0)) {
    throw DimensionError("image_from_tensor: expected [N,1,D,H,W], got " + shape_str(t.shape()));
  }
  ImageVolume vol(Extent3{t.dim(2), t.dim(3), t.dim(4)});
  const std::size_t n = vol.extent.voxels();
  const auto src = t.data().subspan(batch_index * n, n);
  vol.data.assign(src.begin(), src.end());
  return vol;
}

Tensor to_tensor(const DisplacementField& field, bool requires_grad) {
  return Tensor::from_data({1, 3, field.extent.d, field.extent.h, field.extent.w}, field.data, requires_grad);
}

DisplacementField field_from_tensor(const Tensor& t, std::size_t batch_index) {
  if (t.rank() != 5 || t.dim(1) != 3 || batch_index >= t.dim(0)) {
    throw DimensionError("field_from_tensor: expected [N,3,D,H,W], got " + shape_str(t.shape()));
  }
  DisplacementField field(Extent3{t.dim(2), t.dim(3), t.dim(4)});
  const std::size_t n = field.data.size();
  const auto src = t.data().subspan(batch_index * n, n);
  field.data.assign(src.begin(), src.end());
  return field;
}

ImageVolume normalize_intensity(const ImageVolume& vol) {
  ImageVolume out = vol;
  if (vol.data.empty()) return out;
  double mean = 0.0;
  for (double v : vol.data) mean += v;
  mean /= static_cast<double>(vol.data.size());
  double var = 0.0;
  for (double v : vol.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(vol.data.size());
  const double sd = std::sqrt(var);
  for (double& v : out.data) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return out;
}

}  // namespace clmorph
