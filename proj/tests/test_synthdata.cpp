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


#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "clmorph/binary_io.hpp"
#include "clmorph/errors.hpp"
#include "clmorph/synthdata.hpp"
#include "clmorph/warp.hpp"
#include "test_util.hpp"

namespace clmorph {
namespace {

using testing::TempDir;

SyntheticSpec clean_spec() {
  SyntheticSpec spec;
  spec.edge_blur = 0.0;
  spec.noise = 0.0;
  return spec;
}

double max_norm(const DisplacementField& f) {
  const std::size_t V = f.extent.voxels();
  double m = 0.0;
  for (std::size_t i = 0; i < V; ++i) {
    m = std::max(m, std::sqrt(f.data[i] * f.data[i] + f.data[V + i] * f.data[V + i] +
                              f.data[2 * V + i] * f.data[2 * V + i]));
  }
  return m;
}

std::size_t offset_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("expected FormatError");
  return 0;
}

TEST_CASE("spec validation") {
  SyntheticSpec spec;
  CHECK_NOTHROW(spec.validate());
  spec.shape = {3, 32, 32};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = SyntheticSpec{};
  spec.radius_max = 20.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = SyntheticSpec{};
  spec.structures = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = SyntheticSpec{};
  spec.noise = -0.1;
  CHECK_THROWS_AS(make_atlas(spec), ConfigError);
  spec = SyntheticSpec{};
  spec.edge_blur = -1.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("single sphere matches its analytic volume") {
  SyntheticSpec spec = clean_spec();
  spec.shape = {24, 24, 24};
  spec.structures = 1;
  spec.radius_min = spec.radius_max = 6.0;
  spec.body_intensity = 0.0;
  const Atlas atlas = make_atlas(spec);
  REQUIRE(atlas.structures.size() == 1);
  const Ellipsoid& s = atlas.structures[0];
  std::size_t count = 0, mismatches = 0;
  for (std::size_t d = 0; d < 24; ++d)
    for (std::size_t h = 0; h < 24; ++h)
      for (std::size_t w = 0; w < 24; ++w) {
        const bool in = s.contains(d, h, w);
        mismatches += (atlas.labels.at(d, h, w) == 1) != in;
        mismatches += atlas.image.at(d, h, w) != (in ? 1.0 : 0.0);
        count += in;
      }
  CHECK(mismatches == 0);
  const double analytic = 4.0 / 3.0 * std::numbers::pi * 216.0;
  CHECK(std::abs(static_cast<double>(count) - analytic) / analytic < 0.05);
}

TEST_CASE("atlas is a pure function of the spec") {
  const SyntheticSpec spec;
  const Atlas a = make_atlas(spec), b = make_atlas(spec);
  CHECK(a.image.data == b.image.data);
  CHECK(a.labels.data == b.labels.data);
  SyntheticSpec other = spec;
  other.seed = spec.seed + 1;
  CHECK(make_atlas(other).labels.data != a.labels.data);
}

TEST_CASE("atlas labels and intensities stay in range") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    const Atlas atlas = make_atlas(spec);
    const std::set<int> seen(atlas.labels.data.begin(), atlas.labels.data.end());
    CHECK(seen.size() == spec.structures + 1);
    CHECK(*seen.rbegin() == static_cast<int>(spec.structures));
    const auto [lo, hi] = std::minmax_element(atlas.image.data.begin(), atlas.image.data.end());
    CHECK(*lo >= 0.0);
    CHECK(*hi <= 1.0);
  }
}

TEST_CASE("distinct structures get distinct intensities") {
  SyntheticSpec spec = clean_spec();
  spec.structures = 5;
  const Atlas atlas = make_atlas(spec);
  std::set<double> levels;
  for (const auto& s : atlas.structures) levels.insert(s.intensity);
  CHECK(levels.size() == 5);
  CHECK(*levels.begin() == spec.intensity_min);
  CHECK(*levels.rbegin() == 1.0);
}

TEST_CASE("smooth field amplitude and invertibility") {
  SyntheticSpec spec;
  spec.amplitude = 0.0;
  CHECK(max_norm(make_smooth_field(spec, 1)) == 0.0);
  spec = SyntheticSpec{};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DisplacementField f = make_smooth_field(spec, seed);
    CHECK(max_norm(f) == doctest::Approx(spec.amplitude).epsilon(1e-12));
    CHECK(jacobian_stats(jacobian_determinant(f)).min > 0.1);
  }
  CHECK(make_smooth_field(spec, 3).data == make_smooth_field(spec, 3).data);
  CHECK(make_smooth_field(spec, 3).data != make_smooth_field(spec, 4).data);

  spec.amplitude = 40.0;
  spec.smooth_radius = 1.0;
  spec.max_retries = 2;
  CHECK_THROWS_AS(make_smooth_field(spec, 1), GenerationError);
}

TEST_CASE("deform_sample") {
  const SyntheticSpec spec;
  const Atlas atlas = make_atlas(spec);
  const LabeledImage same = deform_sample(atlas.image, atlas.labels, DisplacementField(spec.shape));
  CHECK(same.image.data == atlas.image.data);
  CHECK(same.labels.data == atlas.labels.data);

  DisplacementField shift(spec.shape);
  for (std::size_t i = 0; i < spec.shape.voxels(); ++i) shift.data[2 * spec.shape.voxels() + i] = 1.0;
  const LabeledImage moved = deform_sample(atlas.image, atlas.labels, shift);
  CHECK(moved.labels.at(10, 12, 5) == atlas.labels.at(10, 12, 6));
  CHECK(moved.image.at(10, 12, 5) == atlas.image.at(10, 12, 6));

  const LabeledImage warped = deform_sample(atlas.image, atlas.labels, make_smooth_field(spec, 9));
  CHECK(*std::max_element(warped.labels.data.begin(), warped.labels.data.end()) <= spec.structures);
}

TEST_CASE("augmentation") {
  SyntheticSpec spec;
  spec.shape = {8, 10, 12};
  spec.radius_min = 1.0;
  spec.radius_max = 2.0;
  const Atlas atlas = make_atlas(spec);

  SUBCASE("identity plan") {
    const LabeledImage out = apply_augment(atlas.image, atlas.labels, AugmentPlan{}, spec.shape);
    CHECK(out.image.data == atlas.image.data);
    CHECK(out.labels.data == atlas.labels.data);
  }
  SUBCASE("flip along h") {
    const LabeledImage out = apply_augment(atlas.image, atlas.labels, {.flip = true}, spec.shape);
    CHECK(out.image.at(3, 0, 4) == atlas.image.at(3, 9, 4));
    CHECK(out.labels.at(2, 7, 1) == atlas.labels.at(2, 2, 1));
    const LabeledImage back = apply_augment(out.image, out.labels, {.flip = true}, spec.shape);
    CHECK(back.image.data == atlas.image.data);
  }
  SUBCASE("crop window") {
    const LabeledImage out = apply_augment(atlas.image, atlas.labels, {.origin = {1, 2, 3}}, {4, 5, 6});
    CHECK(out.image.extent == Extent3{4, 5, 6});
    CHECK(out.image.at(0, 0, 0) == atlas.image.at(1, 2, 3));
    CHECK(out.labels.at(3, 4, 5) == atlas.labels.at(4, 6, 8));
    CHECK_THROWS_AS(apply_augment(atlas.image, atlas.labels, {.origin = {5, 0, 0}}, {4, 5, 6}), ConfigError);
  }
  SUBCASE("quarter turn in the h-w plane") {
    SyntheticSpec sq = spec;
    sq.shape = {4, 9, 9};
    sq.radius_max = 1.0;
    const Atlas a = make_atlas(sq);
    const LabeledImage out = apply_augment(a.image, a.labels, {.angle_rad = std::numbers::pi / 2}, sq.shape);
    // Output (h, w) pulls from (4 + (w - 4), 4 - (h - 4)).
    for (std::size_t h = 0; h < 9; ++h)
      for (std::size_t w = 0; w < 9; ++w) CHECK(out.labels.at(1, h, w) == a.labels.at(1, w, 8 - h));
  }
  SUBCASE("plans are seeded and bounded") {
    const AugmentConfig cfg{.flip = true, .max_rotation_deg = 10.0, .crop = {6, 6, 6}};
    const AugmentPlan p = draw_augment_plan(spec.shape, cfg, 4);
    const AugmentPlan q = draw_augment_plan(spec.shape, cfg, 4);
    CHECK(p.flip == q.flip);
    CHECK(p.angle_rad == q.angle_rad);
    CHECK(p.origin == q.origin);
    int flips = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
      const AugmentPlan r = draw_augment_plan(spec.shape, cfg, s);
      CHECK(std::abs(r.angle_rad) <= 10.0 * std::numbers::pi / 180.0);
      CHECK(r.origin.d <= 2);
      CHECK(r.origin.h <= 4);
      CHECK(r.origin.w <= 6);
      flips += r.flip;
    }
    CHECK(flips > 60);
    CHECK(flips < 140);
    const AugmentPlan still = draw_augment_plan(spec.shape, {.flip = false, .max_rotation_deg = 0.0, .crop = spec.shape}, 1);
    CHECK_FALSE(still.flip);
    CHECK(still.angle_rad == 0.0);
    CHECK_THROWS_AS(draw_augment_plan(spec.shape, {.crop = {9, 1, 1}}, 1), ConfigError);
    const LabeledImage out = augment(atlas.image, atlas.labels, cfg, 4);
    CHECK(out.image.extent == cfg.crop);
  }
}

TEST_CASE("CLMV round trip") {
  Rng rng(3);
  ImageVolume img({3, 4, 5});
  for (double& v : img.data) v = rng.normal();
  img.spacing = {1.0f, 1.5f, 2.0f};
  const ImageVolume img2 = decode_image(encode_volume(img));
  CHECK(img2.extent == img.extent);
  CHECK(img2.data == img.data);
  CHECK(img2.spacing == img.spacing);
  CHECK(encode_volume(img).size() == 31 + 60 * 8);

  LabelVolume lab({2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) lab.data[i] = static_cast<std::uint8_t>(i * 30);
  CHECK(decode_labels(encode_volume(lab)).data == lab.data);

  DisplacementField f({2, 3, 1});
  for (double& v : f.data) v = rng.normal();
  CHECK(decode_field(encode_volume(f)).data == f.data);

  ImageVolume one({1, 1, 1}, 0.25);
  CHECK(decode_image(encode_volume(one)).data == one.data);

  TempDir dir("clmv");
  write_volume(dir / "f.clmv", f);
  CHECK(peek_dtype(dir / "f.clmv") == VolumeDType::kField);
  CHECK(read_field(dir / "f.clmv").data == f.data);
  write_volume(dir / "l.clmv", lab);
  CHECK(peek_dtype(dir / "l.clmv") == VolumeDType::kLabels);
  CHECK_THROWS_AS(read_image(dir / "missing.clmv"), std::runtime_error);
}

TEST_CASE("CLMV corruption reports the failing offset") {
  ImageVolume img({2, 2, 2}, 0.5);
  const auto good = encode_volume(img);
  auto bytes = good;
  bytes[1] = 'X';
  CHECK(offset_of([&] { decode_image(bytes); }) == 0);
  bytes = good;
  bytes[4] = 2;
  CHECK(offset_of([&] { decode_image(bytes); }) == 4);
  bytes = good;
  bytes[6] = 7;
  CHECK(offset_of([&] { decode_image(bytes); }) == 6);
  CHECK(offset_of([&] { decode_labels(good); }) == 6);
  const std::span<const std::uint8_t> header_cut(good.data(), 20);
  CHECK(offset_of([&] { decode_image(header_cut); }) == 19);
  const std::span<const std::uint8_t> payload_cut(good.data(), good.size() - 3);
  CHECK(offset_of([&] { decode_image(payload_cut); }) == 31);
  bytes = good;
  bytes.push_back(0);
  CHECK(offset_of([&] { decode_image(bytes); }) == good.size());
}

TEST_CASE("generated dataset layout") {
  SyntheticSpec spec;
  spec.shape = {16, 16, 16};
  spec.radius_min = 2.0;
  spec.radius_max = 4.0;
  TempDir dir("dataset");
  generate_dataset(spec, 3, dir.str());
  CHECK(std::filesystem::exists(dir / "atlas.clmv"));
  CHECK(std::filesystem::exists(dir / "atlas_labels.clmv"));
  CHECK(sample_path(dir.str(), 2) == dir / "sample_0002.clmv");
  CHECK(sample_labels_path(dir.str(), 2) == dir / "sample_0002_labels.clmv");
  CHECK(sample_field_path(dir.str(), 2) == dir / "sample_0002_field.clmv");
  const Dataset ds = load_dataset(dir.str());
  REQUIRE(ds.samples.size() == 3);
  const Atlas atlas = make_atlas(spec);
  CHECK(ds.atlas.image.data == atlas.image.data);
  for (std::size_t i = 0; i < 3; ++i) {
    const DisplacementField f = read_field(sample_field_path(dir.str(), i));
    const LabeledImage expect = deform_sample(atlas.image, atlas.labels, f);
    CHECK(ds.samples[i].image.data == expect.image.data);
    CHECK(ds.samples[i].labels.data == expect.labels.data);
  }
  TempDir again("dataset");
  generate_dataset(spec, 3, again.str());
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(read_file_bytes(sample_path(dir.str(), i)) == read_file_bytes(sample_path(again.str(), i)));
  }
}

}  // namespace
}  // namespace clmorph
