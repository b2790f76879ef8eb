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

// Overlap and surface-distance metrics in voxel units. Surfaces are mask
// voxels with at least one of their six face neighbours outside the mask (the
// volume border counts as outside). Distances are exact brute force.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clmorph/volume.hpp"

namespace clmorph {

using Mask = Volume<std::uint8_t>;  // nonzero = inside

Mask label_mask(const LabelVolume& labels, std::uint8_t label);

// 2|P n G| / (|P| + |G|); 1 when both are empty, 0 when exactly one is.
double dice(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t label);
double dice(const Mask& pred, const Mask& gt);

struct Voxel {
  int d, h, w;
  bool operator==(const Voxel&) const = default;
};

std::vector<Voxel> surface_voxels(const Mask& mask);

// Symmetric Hausdorff distance between the two surfaces. Throws
// UndefinedMetric when either mask is empty.
double hausdorff(const Mask& pred, const Mask& gt);
// Mean of the two directed average surface distances.
double assd(const Mask& pred, const Mask& gt);

struct LabelScore {
  std::uint8_t label = 0;
  double dice = 0.0;
  std::optional<double> hd;    // missing when a mask is empty
  std::optional<double> assd;
};

struct SampleScore {
  std::string name;
  std::vector<LabelScore> labels;
  // Means over labels (HD/ASSD over the labels where defined).
  double dice = 0.0;
  std::optional<double> hd;
  std::optional<double> assd;
};

// Scores every nonzero label present in either volume.
SampleScore score_sample(const std::string& name, const LabelVolume& pred, const LabelVolume& gt);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};

Stat summarize(const std::vector<double>& values);

struct RegionReport {
  struct Row {
    std::string label;  // label number or "macro"
    Stat dice, hd, assd;
  };
  std::vector<SampleScore> samples;
  std::vector<Row> rows;  // one per label, then "macro"
};

RegionReport build_report(std::vector<SampleScore> samples);

// Line-oriented summary.
std::string format_report_text(const RegionReport& report);
// Header: label,dice_mean,dice_std,hd_mean,hd_std,hd_count,assd_mean,assd_std,assd_count,n
std::string format_report_csv(const RegionReport& report);
// Header: sample,label,dice,hd,assd (empty cell = undefined)
std::string format_samples_csv(const RegionReport& report);

}  // namespace clmorph
