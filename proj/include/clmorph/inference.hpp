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

// Test-time use of a trained network: displacement prediction (z = mu),
// atlas-based segmentation and registration.

#include "clmorph/network.hpp"
#include "clmorph/volume.hpp"
#include "clmorph/warp.hpp"

namespace clmorph {

// Mean displacement registering `unaligned` to `atlas`:
// unaligned(p + z(p)) ~ atlas(p). Both images are intensity-normalised first.
DisplacementField predict_field(const Network& net, const ImageVolume& unaligned, const ImageVolume& atlas);

// u with p = q + u(q) solving q = p + z(p), by fixed-point iteration
// u <- -z(q + u). Converges while the field is a contraction (|grad z| < 1).
DisplacementField invert_field(const DisplacementField& field, int iterations = 30);

// Atlas labels carried into the unaligned image's frame through the inverse
// of the registration mapping.
LabelVolume transfer_labels(const LabelVolume& atlas_labels, const DisplacementField& field);

LabelVolume segment_volume(const Network& net, const ImageVolume& unaligned, const ImageVolume& atlas,
                           const LabelVolume& atlas_labels, bool zero_field = false);

struct Registration {
  ImageVolume warped;  // unaligned o phi_z, in the atlas frame
  DisplacementField field;
  JacobianStats jacobian;
  double mse_before = 0.0;
  double mse_after = 0.0;
};

Registration register_volume(const Network& net, const ImageVolume& unaligned, const ImageVolume& atlas);

double mean_squared_error(const ImageVolume& a, const ImageVolume& b);

}  // namespace clmorph
