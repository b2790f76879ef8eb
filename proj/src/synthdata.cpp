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

#include "clmorph/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "clmorph/binary_io.hpp"
#include "clmorph/warp.hpp"

namespace clmorph {

void SyntheticSpec::validate() const {
  if (shape.d < 4 || shape.h < 4 || shape.w < 4) throw ConfigError("synthetic shape must be at least 4 per axis");
  if (structures == 0 || structures > 255) throw ConfigError("structures must be in [1, 255]");
  if (!(radius_min > 0.0 && radius_max >= radius_min)) throw ConfigError("need 0 < radius_min <= radius_max");
  const double smallest = static_cast<double>(std::min({shape.d, shape.h, shape.w}));
  if (2.0 * radius_max + 2.0 > smallest) throw ConfigError("radius_max too large for the volume");
  if (!(intensity_min >= 0.0 && intensity_min <= 1.0)) throw ConfigError("intensity_min must be in [0,1]");
  if (!(body_intensity >= 0.0 && body_intensity < 1.0)) throw ConfigError("body_intensity must be in [0,1)");
  if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
  if (!(edge_blur >= 0.0)) throw ConfigError("edge_blur must be >= 0");
  if (!(amplitude >= 0.0)) throw ConfigError("amplitude must be >= 0");
  if (!(smooth_radius > 0.0)) throw ConfigError("smooth_radius must be > 0");
  if (max_retries == 0) throw ConfigError("max_retries must be >= 1");
}

namespace {

// In-place separable Gaussian blur of one [D,H,W] channel, replicate borders.
void gaussian_blur(double* data, const Extent3& e, double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= total;

  const std::size_t ext[3] = {e.d, e.h, e.w};
  const std::size_t stride[3] = {e.h * e.w, e.w, 1};
  std::vector<double> line;
  for (int axis = 0; axis < 3; ++axis) {
    const long n = static_cast<long>(ext[axis]);
    line.resize(n);
    // Iterate over all lines along `axis`.
    for (std::size_t d = 0; d < (axis == 0 ? 1 : e.d); ++d)
      for (std::size_t h = 0; h < (axis == 1 ? 1 : e.h); ++h)
        for (std::size_t w = 0; w < (axis == 2 ? 1 : e.w); ++w) {
          double* base = data + e.index(d, h, w);
          for (long i = 0; i < n; ++i) line[i] = base[i * stride[axis]];
          for (long i = 0; i < n; ++i) {
            double acc = 0.0;
            for (long t = -radius; t <= radius; ++t) acc += kernel[t + radius] * line[std::clamp(i + t, 0L, n - 1)];
            base[i * stride[axis]] = acc;
          }
        }
  }
}

}  // namespace

bool Ellipsoid::contains(double d, double h, double w) const {
  const double a = (d - center[0]) / radii[0], b = (h - center[1]) / radii[1], c = (w - center[2]) / radii[2];
  return a * a + b * b + c * c <= 1.0;
}

Atlas make_atlas(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Extent3 e = spec.shape;
  const double ext[3] = {static_cast<double>(e.d), static_cast<double>(e.h), static_cast<double>(e.w)};
  Atlas atlas;
  atlas.image = ImageVolume(e, 0.0);
  atlas.labels = LabelVolume(e, 0);

  if (spec.body_intensity > 0.0) {
    Ellipsoid body;
    for (int a = 0; a < 3; ++a) {
      body.center[a] = (ext[a] - 1.0) / 2.0;
      body.radii[a] = 0.42 * ext[a];
    }
    for (std::size_t d = 0; d < e.d; ++d)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w)
          if (body.contains(d, h, w)) atlas.image.at(d, h, w) = spec.body_intensity;
  }

  std::vector<double> levels(spec.structures);
  for (std::size_t j = 0; j < levels.size(); ++j) {
    levels[j] = spec.structures == 1 ? 1.0
                                     : spec.intensity_min + (1.0 - spec.intensity_min) * static_cast<double>(j) /
                                                                static_cast<double>(spec.structures - 1);
  }
  rng.shuffle(levels);

  for (std::size_t s = 0; s < spec.structures; ++s) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      Ellipsoid el;
      el.label = static_cast<std::uint8_t>(s + 1);
      el.intensity = levels[s];
      for (int a = 0; a < 3; ++a) {
        el.radii[a] = rng.uniform(spec.radius_min, spec.radius_max);
        const double margin = el.radii[a] + 1.0;
        el.center[a] = rng.uniform(margin, ext[a] - 1.0 - margin);
      }
      std::size_t inside = 0, overlap = 0;
      for (std::size_t d = 0; d < e.d; ++d)
        for (std::size_t h = 0; h < e.h; ++h)
          for (std::size_t w = 0; w < e.w; ++w)
            if (el.contains(d, h, w)) {
              ++inside;
              if (atlas.labels.at(d, h, w) != 0) ++overlap;
            }
      // Later structures may tuck under earlier ones by at most a quarter.
      if (inside == 0 || 4 * overlap > inside) continue;
      for (std::size_t d = 0; d < e.d; ++d)
        for (std::size_t h = 0; h < e.h; ++h)
          for (std::size_t w = 0; w < e.w; ++w)
            if (atlas.labels.at(d, h, w) == 0 && el.contains(d, h, w)) {
              atlas.labels.at(d, h, w) = el.label;
              atlas.image.at(d, h, w) = el.intensity;
            }
      atlas.structures.push_back(el);
      placed = true;
    }
    if (!placed) {
      throw GenerationError("could not place structure " + std::to_string(s + 1) + " after " +
                            std::to_string(spec.max_retries) + " attempts");
    }
  }

  if (spec.edge_blur > 0.0) gaussian_blur(atlas.image.data.data(), e, spec.edge_blur);
  if (spec.noise > 0.0) {
    for (double& v : atlas.image.data) v = std::clamp(v + rng.normal(0.0, spec.noise), 0.0, 1.0);
  }
  return atlas;
}


DisplacementField make_smooth_field(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Extent3 e = spec.shape;
  DisplacementField field(e);
  if (spec.amplitude == 0.0) return field;
  Rng rng(seed);
  const std::size_t V = e.voxels();
  // Blur on a grid padded by the kernel radius and crop, so the field
  // statistics do not change near the border.
  const std::size_t pad = static_cast<std::size_t>(std::ceil(3.0 * spec.smooth_radius));
  const Extent3 big{e.d + 2 * pad, e.h + 2 * pad, e.w + 2 * pad};
  for (std::size_t attempt = 0; attempt < spec.max_retries; ++attempt) {
    for (int c = 0; c < 3; ++c) {
      std::vector<double> noise = rng.normal_vector(big.voxels());
      gaussian_blur(noise.data(), big, spec.smooth_radius);
      for (std::size_t d = 0; d < e.d; ++d)
        for (std::size_t h = 0; h < e.h; ++h)
          for (std::size_t w = 0; w < e.w; ++w) field.at(c, d, h, w) = noise[big.index(d + pad, h + pad, w + pad)];
    }
    double max_norm = 0.0;
    for (std::size_t i = 0; i < V; ++i) {
      const double a = field.data[i], b = field.data[V + i], c = field.data[2 * V + i];
      max_norm = std::max(max_norm, std::sqrt(a * a + b * b + c * c));
    }
    if (max_norm == 0.0) continue;
    const double k = spec.amplitude / max_norm;
    for (double& v : field.data) v *= k;
    if (jacobian_stats(jacobian_determinant(field)).min > spec.min_jacobian) return field;
  }
  throw GenerationError("no displacement field with min Jacobian > " + std::to_string(spec.min_jacobian) +
                        " after " + std::to_string(spec.max_retries) + " attempts");
}

LabeledImage deform_sample(const ImageVolume& image, const LabelVolume& labels, const DisplacementField& field) {
  return {warp_trilinear(image, field), warp_nearest(labels, field)};
}

// ---------------------------------------------------------------------------
// augmentation

AugmentPlan draw_augment_plan(const Extent3& extent, const AugmentConfig& config, std::uint64_t seed) {
  if (config.crop.d > extent.d || config.crop.h > extent.h || config.crop.w > extent.w) {
    throw ConfigError("augment: crop larger than the volume");
  }
  if (config.crop.voxels() == 0) throw ConfigError("augment: crop must be non-empty");
  Rng rng(seed);
  AugmentPlan plan;
  plan.flip = config.flip && rng.uniform() < 0.5;
  const double max_rad = config.max_rotation_deg * std::numbers::pi / 180.0;
  plan.angle_rad = max_rad > 0.0 ? rng.uniform(-max_rad, max_rad) : 0.0;
  plan.origin = {rng.uniform_int(0, extent.d - config.crop.d), rng.uniform_int(0, extent.h - config.crop.h),
                 rng.uniform_int(0, extent.w - config.crop.w)};
  return plan;
}

LabeledImage apply_augment(const ImageVolume& image, const LabelVolume& labels, const AugmentPlan& plan,
                           const Extent3& crop) {
  require_same_extent(image, labels, "augment");
  const Extent3 e = image.extent;
  if (plan.origin.d + crop.d > e.d || plan.origin.h + crop.h > e.h || plan.origin.w + crop.w > e.w) {
    throw ConfigError("augment: crop window exceeds the volume");
  }
  LabeledImage cur{image, labels};
  if (plan.flip) {
    for (std::size_t d = 0; d < e.d; ++d)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w) {
          cur.image.at(d, h, w) = image.at(d, e.h - 1 - h, w);
          cur.labels.at(d, h, w) = labels.at(d, e.h - 1 - h, w);
        }
  }
  if (plan.angle_rad != 0.0) {
    // Pull from the inverse rotation of each output voxel about the centre.
    DisplacementField field(e);
    const double ch = (static_cast<double>(e.h) - 1.0) / 2.0, cw = (static_cast<double>(e.w) - 1.0) / 2.0;
    const double c = std::cos(plan.angle_rad), s = std::sin(plan.angle_rad);
    for (std::size_t d = 0; d < e.d; ++d)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w) {
          const double y = static_cast<double>(h) - ch, x = static_cast<double>(w) - cw;
          field.at(1, d, h, w) = (c * y + s * x) - y;
          field.at(2, d, h, w) = (-s * y + c * x) - x;
        }
    cur = deform_sample(cur.image, cur.labels, field);
  }
  LabeledImage out{ImageVolume(crop), LabelVolume(crop)};
  out.image.spacing = image.spacing;
  out.labels.spacing = labels.spacing;
  for (std::size_t d = 0; d < crop.d; ++d)
    for (std::size_t h = 0; h < crop.h; ++h)
      for (std::size_t w = 0; w < crop.w; ++w) {
        out.image.at(d, h, w) = cur.image.at(plan.origin.d + d, plan.origin.h + h, plan.origin.w + w);
        out.labels.at(d, h, w) = cur.labels.at(plan.origin.d + d, plan.origin.h + h, plan.origin.w + w);
      }
  return out;
}

LabeledImage augment(const ImageVolume& image, const LabelVolume& labels, const AugmentConfig& config,
                     std::uint64_t seed) {
  return apply_augment(image, labels, draw_augment_plan(image.extent, config, seed), config.crop);
}

// ---------------------------------------------------------------------------
// CLMV

namespace {

void write_header(ByteWriter& w, VolumeDType dtype, const Extent3& e, const std::array<float, 3>& spacing) {
  w.tag("CLMV");
  w.u16(kVolumeVersion);
  w.u8(static_cast<std::uint8_t>(dtype));
  w.u32(static_cast<std::uint32_t>(e.d));
  w.u32(static_cast<std::uint32_t>(e.h));
  w.u32(static_cast<std::uint32_t>(e.w));
  for (float s : spacing) w.f32(s);
}

struct Header {
  VolumeDType dtype;
  Extent3 extent;
  std::array<float, 3> spacing;
};

Header read_header(ByteReader& r, VolumeDType expected) {
  r.expect_tag("CLMV", "volume");
  const std::size_t version_at = r.offset();
  const auto version = r.u16();
  if (version != kVolumeVersion) throw FormatError("unsupported volume version " + std::to_string(version), version_at);
  const std::size_t dtype_at = r.offset();
  const auto code = r.u8();
  if (code > 2) throw FormatError("unknown volume dtype code " + std::to_string(code), dtype_at);
  Header h{static_cast<VolumeDType>(code), {}, {}};
  if (h.dtype != expected) {
    throw FormatError("volume dtype " + std::to_string(code) + " where " +
                          std::to_string(static_cast<int>(expected)) + " was expected",
                      dtype_at);
  }
  h.extent.d = r.u32();
  h.extent.h = r.u32();
  h.extent.w = r.u32();
  for (float& s : h.spacing) s = r.f32();
  return h;
}

void check_payload(ByteReader& r, std::size_t bytes) {
  if (r.remaining() < bytes) {
    r.fail("truncated volume payload: need " + std::to_string(bytes) + " bytes, have " + std::to_string(r.remaining()));
  }
}

void check_trailing(const ByteReader& r) {
  if (r.remaining() != 0) r.fail("trailing bytes after volume payload");
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const ImageVolume& vol) {
  ByteWriter w;
  write_header(w, VolumeDType::kImage, vol.extent, vol.spacing);
  for (double v : vol.data) w.f64(v);
  return w.take();
}

std::vector<std::uint8_t> encode_volume(const LabelVolume& vol) {
  ByteWriter w;
  write_header(w, VolumeDType::kLabels, vol.extent, vol.spacing);
  w.raw(vol.data);
  return w.take();
}

std::vector<std::uint8_t> encode_volume(const DisplacementField& field) {
  ByteWriter w;
  write_header(w, VolumeDType::kField, field.extent, {1.0f, 1.0f, 1.0f});
  for (double v : field.data) w.f64(v);
  return w.take();
}

ImageVolume decode_image(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const Header h = read_header(r, VolumeDType::kImage);
  ImageVolume vol(h.extent);
  vol.spacing = h.spacing;
  check_payload(r, vol.data.size() * 8);
  for (double& v : vol.data) v = r.f64();
  check_trailing(r);
  return vol;
}

LabelVolume decode_labels(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const Header h = read_header(r, VolumeDType::kLabels);
  LabelVolume vol(h.extent);
  vol.spacing = h.spacing;
  check_payload(r, vol.data.size());
  const auto raw = r.raw(vol.data.size(), "label payload");
  std::copy(raw.begin(), raw.end(), vol.data.begin());
  check_trailing(r);
  return vol;
}

DisplacementField decode_field(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const Header h = read_header(r, VolumeDType::kField);
  DisplacementField field(h.extent);
  check_payload(r, field.data.size() * 8);
  for (double& v : field.data) v = r.f64();
  check_trailing(r);
  return field;
}

void write_volume(const std::string& path, const ImageVolume& vol) { write_file_bytes(path, encode_volume(vol)); }
void write_volume(const std::string& path, const LabelVolume& vol) { write_file_bytes(path, encode_volume(vol)); }
void write_volume(const std::string& path, const DisplacementField& f) { write_file_bytes(path, encode_volume(f)); }
ImageVolume read_image(const std::string& path) { return decode_image(read_file_bytes(path)); }
LabelVolume read_labels(const std::string& path) { return decode_labels(read_file_bytes(path)); }
DisplacementField read_field(const std::string& path) { return decode_field(read_file_bytes(path)); }

VolumeDType peek_dtype(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  r.expect_tag("CLMV", "volume");
  r.u16();
  const std::size_t at = r.offset();
  const auto code = r.u8();
  if (code > 2) throw FormatError("unknown volume dtype code " + std::to_string(code), at);
  return static_cast<VolumeDType>(code);
}

// ---------------------------------------------------------------------------
// dataset layout

namespace {
std::string indexed(const std::string& root, std::size_t i, const char* suffix) {
  char name[64];
  std::snprintf(name, sizeof(name), "sample_%04zu%s.clmv", i, suffix);
  return (std::filesystem::path(root) / name).string();
}
}  // namespace

std::string atlas_path(const std::string& root) { return (std::filesystem::path(root) / "atlas.clmv").string(); }
std::string atlas_labels_path(const std::string& root) {
  return (std::filesystem::path(root) / "atlas_labels.clmv").string();
}
std::string sample_path(const std::string& root, std::size_t i) { return indexed(root, i, ""); }
std::string sample_labels_path(const std::string& root, std::size_t i) { return indexed(root, i, "_labels"); }
std::string sample_field_path(const std::string& root, std::size_t i) { return indexed(root, i, "_field"); }

void generate_dataset(const SyntheticSpec& spec, std::size_t count, const std::string& root) {
  std::filesystem::create_directories(root);
  const Atlas atlas = make_atlas(spec);
  write_volume(atlas_path(root), atlas.image);
  write_volume(atlas_labels_path(root), atlas.labels);
  for (std::size_t i = 0; i < count; ++i) {
    const DisplacementField field = make_smooth_field(spec, derive_seed(spec.seed, i));
    const LabeledImage sample = deform_sample(atlas.image, atlas.labels, field);
    write_volume(sample_path(root, i), sample.image);
    write_volume(sample_labels_path(root, i), sample.labels);
    write_volume(sample_field_path(root, i), field);
  }
}

Dataset load_dataset(const std::string& root) {
  Dataset ds;
  ds.atlas = {read_image(atlas_path(root)), read_labels(atlas_labels_path(root))};
  for (std::size_t i = 0; std::filesystem::exists(sample_path(root, i)); ++i) {
    ds.samples.push_back({read_image(sample_path(root, i)), read_labels(sample_labels_path(root, i))});
  }
  return ds;
}

}  // namespace clmorph
