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

#include "clmorph/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace clmorph {

Mask label_mask(const LabelVolume& labels, std::uint8_t label) {
  Mask m(labels.extent, 0);
  for (std::size_t i = 0; i < labels.data.size(); ++i) m.data[i] = labels.data[i] == label ? 1 : 0;
  return m;
}

double dice(const Mask& pred, const Mask& gt) {
  require_same_extent(pred, gt, "dice");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

double dice(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t label) {
  return dice(label_mask(pred, label), label_mask(gt, label));
}

std::vector<Voxel> surface_voxels(const Mask& mask) {
  const Extent3 e = mask.extent;
  std::vector<Voxel> out;
  auto inside = [&](long d, long h, long w) {
    if (d < 0 || h < 0 || w < 0 || d >= static_cast<long>(e.d) || h >= static_cast<long>(e.h) ||
        w >= static_cast<long>(e.w)) {
      return false;
    }
    return mask.at(d, h, w) != 0;
  };
  for (long d = 0; d < static_cast<long>(e.d); ++d)
    for (long h = 0; h < static_cast<long>(e.h); ++h)
      for (long w = 0; w < static_cast<long>(e.w); ++w) {
        if (!inside(d, h, w)) continue;
        if (!inside(d - 1, h, w) || !inside(d + 1, h, w) || !inside(d, h - 1, w) || !inside(d, h + 1, w) ||
            !inside(d, h, w - 1) || !inside(d, h, w + 1)) {
          out.push_back({static_cast<int>(d), static_cast<int>(h), static_cast<int>(w)});
        }
      }
  return out;
}

namespace {

// For each voxel of `from`, squared distance to the nearest voxel of `to`.
std::vector<double> nearest_sq(const std::vector<Voxel>& from, const std::vector<Voxel>& to) {
  std::vector<double> out(from.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < from.size(); ++i) {
    long best = std::numeric_limits<long>::max();
    for (const auto& q : to) {
      const long dd = from[i].d - q.d, dh = from[i].h - q.h, dw = from[i].w - q.w;
      best = std::min(best, dd * dd + dh * dh + dw * dw);
      if (best == 0) break;
    }
    out[i] = static_cast<double>(best);
  }
  return out;
}

std::pair<std::vector<Voxel>, std::vector<Voxel>> surfaces(const Mask& pred, const Mask& gt, const char* metric) {
  require_same_extent(pred, gt, metric);
  auto sp = surface_voxels(pred), sg = surface_voxels(gt);
  if (sp.empty() || sg.empty()) throw UndefinedMetric(std::string(metric) + " is undefined for an empty mask");
  return {std::move(sp), std::move(sg)};
}

}  // namespace

double hausdorff(const Mask& pred, const Mask& gt) {
  const auto [sp, sg] = surfaces(pred, gt, "hausdorff");
  double worst = 0.0;
  for (double v : nearest_sq(sp, sg)) worst = std::max(worst, v);
  for (double v : nearest_sq(sg, sp)) worst = std::max(worst, v);
  return std::sqrt(worst);
}

double assd(const Mask& pred, const Mask& gt) {
  const auto [sp, sg] = surfaces(pred, gt, "assd");
  auto mean_dist = [](const std::vector<double>& sq) {
    double acc = 0.0;
    for (double v : sq) acc += std::sqrt(v);
    return acc / static_cast<double>(sq.size());
  };
  return 0.5 * (mean_dist(nearest_sq(sp, sg)) + mean_dist(nearest_sq(sg, sp)));
}

SampleScore score_sample(const std::string& name, const LabelVolume& pred, const LabelVolume& gt) {
  require_same_extent(pred, gt, "score_sample");
  std::set<std::uint8_t> labels;
  for (auto v : pred.data)
    if (v) labels.insert(v);
  for (auto v : gt.data)
    if (v) labels.insert(v);
  SampleScore score;
  score.name = name;
  std::vector<double> hds, assds;
  double dice_sum = 0.0;
  for (auto label : labels) {
    const Mask p = label_mask(pred, label), g = label_mask(gt, label);
    LabelScore ls;
    ls.label = label;
    ls.dice = dice(p, g);
    try {
      ls.hd = hausdorff(p, g);
      ls.assd = assd(p, g);
      hds.push_back(*ls.hd);
      assds.push_back(*ls.assd);
    } catch (const UndefinedMetric&) {
    }
    dice_sum += ls.dice;
    score.labels.push_back(ls);
  }
  if (!labels.empty()) score.dice = dice_sum / static_cast<double>(labels.size());
  else score.dice = 1.0;
  if (!hds.empty()) {
    score.hd = summarize(hds).mean;
    score.assd = summarize(assds).mean;
  }
  return score;
}

Stat summarize(const std::vector<double>& values) {
  Stat s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

RegionReport build_report(std::vector<SampleScore> samples) {
  RegionReport report;
  report.samples = std::move(samples);
  struct Acc {
    std::vector<double> dice, hd, assd;
  };
  std::map<int, Acc> per_label;
  Acc macro;
  for (const auto& s : report.samples) {
    for (const auto& l : s.labels) {
      auto& acc = per_label[l.label];
      acc.dice.push_back(l.dice);
      if (l.hd) acc.hd.push_back(*l.hd);
      if (l.assd) acc.assd.push_back(*l.assd);
    }
    macro.dice.push_back(s.dice);
    if (s.hd) macro.hd.push_back(*s.hd);
    if (s.assd) macro.assd.push_back(*s.assd);
  }
  for (const auto& [label, acc] : per_label) {
    report.rows.push_back({std::to_string(label), summarize(acc.dice), summarize(acc.hd), summarize(acc.assd)});
  }
  report.rows.push_back({"macro", summarize(macro.dice), summarize(macro.hd), summarize(macro.assd)});
  return report;
}

std::string format_report_text(const RegionReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& s : report.samples) {
    for (const auto& l : s.labels) {
      os << s.name << " label " << int(l.label) << " dice " << l.dice;
      os << " hd " << (l.hd ? std::to_string(*l.hd) : std::string("missing"));
      os << " assd " << (l.assd ? std::to_string(*l.assd) : std::string("missing")) << "\n";
    }
  }
  for (const auto& r : report.rows) {
    os << (r.label == "macro" ? "macro" : "label " + r.label) << ": dice " << r.dice.mean << " +- " << r.dice.std
       << "  hd " << r.hd.mean << " +- " << r.hd.std << "  assd " << r.assd.mean << " +- " << r.assd.std
       << "  (n=" << r.dice.count << ")\n";
  }
  return os.str();
}

std::string format_report_csv(const RegionReport& report) {
  std::ostringstream os;
  os.precision(10);
  os << "label,dice_mean,dice_std,hd_mean,hd_std,hd_count,assd_mean,assd_std,assd_count,n\n";
  for (const auto& r : report.rows) {
    os << r.label << ',' << r.dice.mean << ',' << r.dice.std << ',' << r.hd.mean << ',' << r.hd.std << ','
       << r.hd.count << ',' << r.assd.mean << ',' << r.assd.std << ',' << r.assd.count << ',' << r.dice.count
       << "\n";
  }
  return os.str();
}

std::string format_samples_csv(const RegionReport& report) {
  std::ostringstream os;
  os.precision(10);
  os << "sample,label,dice,hd,assd\n";
  for (const auto& s : report.samples)
    for (const auto& l : s.labels) {
      os << s.name << ',' << int(l.label) << ',' << l.dice << ',';
      if (l.hd) os << *l.hd;
      os << ',';
      if (l.assd) os << *l.assd;
      os << "\n";
    }
  return os.str();
}

}  // namespace clmorph
