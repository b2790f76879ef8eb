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


#include "clmorph/inference.hpp"

#include "clmorph/errors.hpp"

namespace clmorph {

DisplacementField predict_field(const Network& net, const ImageVolume& unaligned, const ImageVolume& atlas) {
  require_same_extent(unaligned, atlas, "predict_field");
  const Encoding em = net.encode(normalize_intensity(unaligned));
  const Encoding ef = net.encode(normalize_intensity(atlas));
  const ProbabilisticField field = net.decode(em.pyramid, ef.pyramid);
  return field_from_tensor(field.mu);
}

DisplacementField invert_field(const DisplacementField& field, int iterations) {
  if (iterations < 0) throw ConfigError("invert_field: iterations must be >= 0");
  const Extent3 e = field.extent;
  const std::size_t n = e.voxels();
  std::array<ImageVolume, 3> comp;
  for (int c = 0; c < 3; ++c) {
    comp[c] = ImageVolume(e);
    std::copy(field.data.begin() + c * n, field.data.begin() + (c + 1) * n, comp[c].data.begin());
  }
  DisplacementField inv(e);
  for (int it = 0; it < iterations; ++it) {
    DisplacementField next(e);
    for (int c = 0; c < 3; ++c) {
      const ImageVolume sampled = warp_trilinear(comp[c], inv);
      for (std::size_t i = 0; i < n; ++i) next.data[c * n + i] = -sampled.data[i];
    }
    inv = std::move(next);
  }
  return inv;
}

LabelVolume transfer_labels(const LabelVolume& atlas_labels, const DisplacementField& field) {
  require_same_extent(atlas_labels, field, "transfer_labels");
  return warp_nearest(atlas_labels, invert_field(field));
}

LabelVolume segment_volume(const Network& net, const ImageVolume& unaligned, const ImageVolume& atlas,
                           const LabelVolume& atlas_labels, bool zero_field) {
  require_same_extent(unaligned, atlas, "segment_volume");
  require_same_extent(atlas_labels, atlas, "segment_volume");
  if (zero_field) return atlas_labels;
  return transfer_labels(atlas_labels, predict_field(net, unaligned, atlas));
}

double mean_squared_error(const ImageVolume& a, const ImageVolume& b) {
  require_same_extent(a, b, "mean_squared_error");
  if (a.data.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

Registration register_volume(const Network& net, const ImageVolume& unaligned, const ImageVolume& atlas) {
  Registration r;
  r.field = predict_field(net, unaligned, atlas);
  r.warped = warp_trilinear(unaligned, r.field);
  r.warped.spacing = atlas.spacing;
  r.jacobian = jacobian_stats(jacobian_determinant(r.field));
  r.mse_before = mean_squared_error(unaligned, atlas);
  r.mse_after = mean_squared_error(r.warped, atlas);
  return r;
}

}  // namespace clmorph
