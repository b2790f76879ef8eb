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

// Procedural stand-in for brain MRI: an atlas of ellipsoidal structures with
// exact label maps, smooth random displacement fields, and deformed samples
// with their ground truth. Everything is a pure function of (spec, seed).

#include <cstdint>
#include <string>

#include "clmorph/rng.hpp"
#include "clmorph/volume.hpp"

namespace clmorph {

struct SyntheticSpec {
  Extent3 shape{32, 32, 32};
  std::size_t structures = 6;
  // Semi-axis ranges in voxels.
  double radius_min = 3.0;
  double radius_max = 5.0;
  // Unlabelled enclosing ellipsoid ("body") intensity; 0 disables it.
  double body_intensity = 0.2;
  // Structure intensities are spread evenly over [intensity_min, 1].
  double intensity_min = 0.4;
  // Gaussian sigma (voxels) softening structure boundaries; 0 keeps hard edges.
  double edge_blur = 1.0;
  double noise = 0.02;
  // Displacement field: max vector magnitude and Gaussian smoothing sigma.
  double amplitude = 3.0;
  double smooth_radius = 4.0;
  double min_jacobian = 0.1;
  std::size_t max_retries = 50;
  std::uint64_t seed = 7;

  void validate() const;
};

struct LabeledImage {
  ImageVolume image;
  LabelVolume labels;
};

// Axis-aligned ellipsoid in voxel coordinates (d, h, w).
struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{};
  std::uint8_t label = 0;
  double intensity = 0.0;

  bool contains(double d, double h, double w) const;
};

struct Atlas {
  ImageVolume image;
  LabelVolume labels;
  std::vector<Ellipsoid> structures;  // in painting order; earlier ones win overlaps
};

Atlas make_atlas(const SyntheticSpec& spec);

// Gaussian-smoothed noise field scaled so max |z| == amplitude, regenerated
// until min det(I + grad z) > spec.min_jacobian.
DisplacementField make_smooth_field(const SyntheticSpec& spec, std::uint64_t seed);

// Pull-warps image (trilinear) and labels (nearest) by the same field.
LabeledImage deform_sample(const ImageVolume& image, const LabelVolume& labels, const DisplacementField& field);

struct AugmentConfig {
  bool flip = true;           // random flip along the y (h) axis
  double max_rotation_deg = 10.0;
  Extent3 crop{32, 32, 32};
};

struct AugmentPlan {
  bool flip = false;
  double angle_rad = 0.0;  // rotation in the (h, w) plane about the volume centre
  Extent3 origin{};        // crop corner
};

AugmentPlan draw_augment_plan(const Extent3& extent, const AugmentConfig& config, std::uint64_t seed);
LabeledImage apply_augment(const ImageVolume& image, const LabelVolume& labels, const AugmentPlan& plan,
                           const Extent3& crop);
LabeledImage augment(const ImageVolume& image, const LabelVolume& labels, const AugmentConfig& config,
                     std::uint64_t seed);

// ---- CLMV volume files ----
//
// "CLMV", u16 version (1), u8 dtype (0 = f64 image, 1 = u8 labels,
// 2 = f64 3-component field, component-major), 3 x u32 extents (d,h,w),
// 3 x f32 spacing, raw little-endian payload.

inline constexpr std::uint16_t kVolumeVersion = 1;

enum class VolumeDType : std::uint8_t { kImage = 0, kLabels = 1, kField = 2 };

void write_volume(const std::string& path, const ImageVolume& vol);
void write_volume(const std::string& path, const LabelVolume& vol);
void write_volume(const std::string& path, const DisplacementField& field);
ImageVolume read_image(const std::string& path);
LabelVolume read_labels(const std::string& path);
DisplacementField read_field(const std::string& path);
VolumeDType peek_dtype(const std::string& path);

std::vector<std::uint8_t> encode_volume(const ImageVolume& vol);
std::vector<std::uint8_t> encode_volume(const LabelVolume& vol);
std::vector<std::uint8_t> encode_volume(const DisplacementField& field);
ImageVolume decode_image(std::span<const std::uint8_t> bytes);
LabelVolume decode_labels(std::span<const std::uint8_t> bytes);
DisplacementField decode_field(std::span<const std::uint8_t> bytes);

// ---- dataset directory layout ----

std::string atlas_path(const std::string& root);
std::string atlas_labels_path(const std::string& root);
std::string sample_path(const std::string& root, std::size_t index);
std::string sample_labels_path(const std::string& root, std::size_t index);
std::string sample_field_path(const std::string& root, std::size_t index);

// Writes atlas + `count` deformed samples; sample i uses a field seeded from
// (spec.seed, i).
void generate_dataset(const SyntheticSpec& spec, std::size_t count, const std::string& root);

struct Dataset {
  LabeledImage atlas;
  std::vector<LabeledImage> samples;
};

Dataset load_dataset(const std::string& root);

}  // namespace clmorph
