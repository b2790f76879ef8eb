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

// Spatial transformer. All warps pull: out(p) = in(p + z(p)), with sample
// coordinates clamped to the volume (border padding).

#include "clmorph/tensor.hpp"
#include "clmorph/volume.hpp"

namespace clmorph {

// Differentiable w.r.t. both arguments. vol [N,C,D,H,W], z [N,3,D,H,W] with
// components ordered (d, h, w). z with leading extent 1 is not broadcast.
Tensor warp_trilinear(const Tensor& vol, const Tensor& z);

ImageVolume warp_trilinear(const ImageVolume& vol, const DisplacementField& field);

// Nearest-neighbour resampling: out(p) = labels(round(p + z(p))), clamped.
LabelVolume warp_nearest(const LabelVolume& labels, const DisplacementField& field);

// det(I + grad z), central differences in the interior and one-sided
// differences on the faces. Requires every extent >= 3.
ImageVolume jacobian_determinant(const DisplacementField& field);

struct JacobianStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  std::size_t non_positive = 0;
};
JacobianStats jacobian_stats(const ImageVolume& jacobian);

}  // namespace clmorph
