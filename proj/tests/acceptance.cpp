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


// Acceptance suite: one PASS/FAIL line per criterion. Long-running criteria
// (6-10) share one synthetic dataset and one ablation run under --workdir.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clmorph/binary_io.hpp"
#include "clmorph/cli.hpp"
#include "clmorph/errors.hpp"
#include "clmorph/inference.hpp"
#include "clmorph/losses.hpp"
#include "clmorph/metrics.hpp"
#include "clmorph/network.hpp"
#include "clmorph/synthdata.hpp"
#include "clmorph/trainer.hpp"
#include "clmorph/warp.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

namespace {

using namespace clmorph;
using namespace clmorph::testing;
namespace fs = std::filesystem;

// ---- pinned tolerances and limits ----
constexpr double kGradTol = 1e-4;
constexpr double kEndToEndTol = 1e-3;
constexpr double kGradSeconds = 120.0;
constexpr std::size_t kKlFields = 20;
constexpr std::size_t kKlSamples = 100000;
constexpr double kKlSigmas = 3.0;
constexpr double kKlSeconds = 60.0;
constexpr double kClosedFormTol = 1e-12;
constexpr double kRotationTol = 1e-9;
constexpr int kRotationBatches = 50;
constexpr double kAffineTol = 1e-12;
constexpr double kJacobianTol = 1e-12;
constexpr int kMetricPairs = 100;
constexpr int kOverfitSteps = 200;
constexpr double kOverfitDrop = 0.90;
constexpr double kOverfitSeconds = 600.0;
constexpr double kDiceFloor = 0.80;
constexpr double kDiceMargin = 0.10;
constexpr double kSuiteSeconds = 7200.0;
constexpr double kContrastSlack = 0.02;
constexpr double kMseRatio = 0.5;
const std::vector<std::uint64_t> kAblationSeeds{7, 8, 9};

// Synthetic suite: 32^3, amplitude 3, smoothing radius 4, seed 7, 20 training
// and 5 test samples, 60 epochs. Loss weights follow the README.
constexpr const char* kSuiteConfig = R"(shape = 32
count = 25
seed = 7
amplitude = 3
smooth_radius = 4
radius_min = 3
radius_max = 5
structures = 6
edge_blur = 1
noise = 0.02
train_count = 20
epochs = 60
batch_size = 4
train_seed = 7
sigma2 = 0.01
alpha = 0.001
beta = 0.01
tau = 0.1
gradient_weight = 3
)";

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. gradient suite

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCase {
  std::string name;
  Fn f;
  std::vector<Shape> shapes;
  double lo = -1.0, hi = 1.0;
};

std::vector<GradCase> grad_cases() {
  const std::array<PositivePair, 3> pairs{{{0, 3}, {1, 3}, {2, 3}}};
  return {
      {"conv3d k3 s1", [](auto& in) { return conv3d(in[0], in[1], in[2], 1, 1); }, {{2, 2, 4, 5, 3}, {3, 2, 3, 3, 3}, {3}}},
      {"conv3d k3 s2", [](auto& in) { return conv3d(in[0], in[1], in[2], 2, 1); }, {{1, 2, 5, 5, 5}, {2, 2, 3, 3, 3}, {2}}},
      {"conv3d k1", [](auto& in) { return conv3d(in[0], in[1], in[2], 1, 0); }, {{1, 3, 3, 4, 2}, {2, 3, 1, 1, 1}, {2}}},
      {"upsample_trilinear", [](auto& in) { return upsample_trilinear(in[0], 2); }, {{2, 2, 2, 3, 2}}},
      {"avg_pool3d", [](auto& in) { return avg_pool3d(in[0], 2); }, {{1, 2, 4, 4, 2}}},
      {"linear", [](auto& in) { return linear(in[0], in[1], in[2]); }, {{3, 4}, {5, 4}, {5}}},
      {"instance_norm", [](auto& in) { return instance_norm(in[0], in[1], in[2]); }, {{2, 3, 2, 3, 2}, {3}, {3}}},
      {"add", [](auto& in) { return add(in[0], in[1]); }, {{2, 3}, {2, 3}}},
      {"add scalar broadcast", [](auto& in) { return add(in[0], in[1]); }, {{2, 3}, {}}},
      {"sub", [](auto& in) { return sub(in[0], in[1]); }, {{2, 3}, {2, 3}}},
      {"mul", [](auto& in) { return mul(in[0], in[1]); }, {{2, 3}, {2, 3}}},
      {"div", [](auto& in) { return div(in[0], in[1]); }, {{2, 3}, {2, 3}}, 0.5, 2.0},
      {"scale", [](auto& in) { return scale(in[0], -1.7); }, {{4}}},
      {"add_scalar", [](auto& in) { return add_scalar(in[0], 0.3); }, {{4}}},
      {"negate", [](auto& in) { return negate(in[0]); }, {{4}}},
      {"exp", [](auto& in) { return exp(in[0]); }, {{5}}},
      {"log", [](auto& in) { return log(in[0]); }, {{5}}, 0.5, 2.0},
      {"square", [](auto& in) { return square(in[0]); }, {{5}}},
      {"leaky_relu", [](auto& in) { return leaky_relu(in[0], 0.2); }, {{6}}},
      {"reduce_sum", [](auto& in) { return reduce_sum(in[0]); }, {{2, 3}}},
      {"reduce_mean", [](auto& in) { return reduce_mean(in[0]); }, {{2, 3}}},
      {"reduce_sum axis", [](auto& in) { return reduce_sum(in[0], 1); }, {{2, 3, 2}}},
      {"reduce_mean axis", [](auto& in) { return reduce_mean(in[0], 2); }, {{2, 3, 2}}},
      {"l2_norm", [](auto& in) { return l2_norm(in[0]); }, {{7}}},
      {"l2_normalize_rows", [](auto& in) { return l2_normalize_rows(in[0]); }, {{3, 4}}},
      {"reshape", [](auto& in) { return reshape(in[0], {3, 2}); }, {{2, 3}}},
      {"concat", [](auto& in) { return concat({in[0], in[1]}, 1); }, {{2, 1, 2}, {2, 3, 2}}},
      {"repeat_batch", [](auto& in) { return repeat_batch(in[0], 3); }, {{1, 2, 2}}},
      {"slice_batch", [](auto& in) { return slice_batch(in[0], 1, 2); }, {{4, 2}}},
      {"warp_trilinear",
       [](auto& in) {
         // Offsets of k + 0.25 +- 0.1 keep samples away from cell boundaries.
         return warp_trilinear(in[0], add_scalar(in[1], 1.25));
       },
       {{2, 2, 4, 5, 4}, {2, 3, 4, 5, 4}}, -0.1, 0.1},
      {"reparam_sample",
       [](auto& in) { return reparam_sample(ProbabilisticField{in[0], in[1]}, in[2]); },
       {{1, 3, 2, 2, 1}, {1, 3, 2, 2, 1}, {1, 3, 2, 2, 1}}},
      {"spatial_gradient_penalty", [](auto& in) { return spatial_gradient_penalty(in[0]); }, {{1, 3, 3, 2, 3}}},
      {"recon_loss", [](auto& in) { return recon_loss(in[0], in[1], 0.3); }, {{1, 1, 3, 3, 2}, {1, 1, 3, 3, 2}}},
      {"kl_smooth_loss", [](auto& in) { return kl_smooth_loss(ProbabilisticField{in[0], in[1]}); },
       {{1, 3, 2, 2, 2}, {1, 3, 2, 2, 2}}},
      {"contrastive_loss", [pairs](auto& in) { return contrastive_loss(in[0], pairs, 0.1); }, {{4, 6}}},
      {"contrastive_loss symmetric", [pairs](auto& in) { return contrastive_loss(in[0], pairs, 0.1, true); }, {{4, 6}}},
  };
}

double end_to_end_error() {
  Network net(NetworkConfig{});
  init_parameters(net, 12);
  // Lift the mean head off its near-zero initialisation so the warp moves voxels.
  for (double& v : net.parameter("head_mu.weight").tensor.mutable_data()) v *= 3e3;
  Rng rng(13);
  const Tensor x = random_tensor({1, 1, 16, 16, 16}, rng, 0, 1, false);
  const Tensor y = random_tensor({1, 1, 16, 16, 16}, rng, 0, 1, false);
  const Tensor noise = Tensor::from_data({1, 3, 16, 16, 16}, rng.normal_vector(3 * 4096));
  const LossConfig cfg;
  auto loss_fn = [&]() {
    const Encoding ex = net.encode(x), ey = net.encode(y);
    const ProbabilisticField f = net.decode(ex.pyramid, ey.pyramid);
    const Tensor warped = warp_trilinear(x, reparam_sample(f, noise));
    const std::array<PositivePair, 1> pair{{{0, 1}}};
    const Tensor contrast = contrastive_loss(concat({ex.projection, ey.projection, ey.projection}, 0), pair, 0.1);
    return total_loss({recon_loss(y, warped, cfg.sigma2), kl_smooth_loss(f), contrast, {}}, cfg).total;
  };
  net.zero_grad();
  loss_fn().backward();
  // Five random weights across the parameter list.
  std::vector<std::size_t> param_ids;
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const auto kind = net.parameters()[i].kind;
    if (kind == ParamKind::kConvWeight || kind == ParamKind::kLinearWeight || kind == ParamKind::kMuHeadWeight) {
      param_ids.push_back(i);
    }
  }
  double worst = 0.0;
  for (int k = 0; k < 5; ++k) {
    Parameter& p = net.parameters()[param_ids[rng.uniform_int(0, param_ids.size() - 1)]];
    const std::size_t idx = rng.uniform_int(0, p.tensor.numel() - 1);
    const double analytic = p.tensor.grad()[idx];
    const double orig = p.tensor.data()[idx], h = 1e-5;
    p.tensor.mutable_data()[idx] = orig + h;
    const double up = loss_fn().item();
    p.tensor.mutable_data()[idx] = orig - h;
    const double down = loss_fn().item();
    p.tensor.mutable_data()[idx] = orig;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name, failed;
  std::uint64_t seed = 100;
  for (const GradCase& c : grad_cases()) {
    Rng rng(seed++);
    std::vector<Tensor> inputs;
    for (const Shape& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.lo, c.hi));
    const GradCheckResult r = grad_check(c.f, inputs, seed, 12);
    if (r.worst > worst) {
      worst = r.worst;
      worst_name = c.name;
    }
    if (r.worst > kGradTol) failed += " " + c.name;
  }
  const double e2e = end_to_end_error();
  const double secs = seconds_since(t0);
  const bool pass = failed.empty() && e2e <= kEndToEndTol && secs < kGradSeconds;
  return {pass, fmt("%zu ops, worst rel err %.2e (%s, tol %.0e); end-to-end %.2e (tol %.0e); %.1f s (limit %.0f s)%s",
                    grad_cases().size(), worst, worst_name.c_str(), kGradTol, e2e, kEndToEndTol, secs, kGradSeconds,
                    failed.empty() ? "" : (" failing:" + failed).c_str())};
}

// ---------------------------------------------------------------------------
// 2. KL oracle

Outcome criterion_kl() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst_z = 0.0;
  for (std::size_t i = 0; i < kKlFields; ++i) {
    const Tensor mu = random_tensor({1, 3, 2, 2, 2}, rng, -1.5, 1.5, false);
    const Tensor logvar = random_tensor({1, 3, 2, 2, 2}, rng, -1.0, 1.0, false);
    const ProbabilisticField f{mu, logvar};
    const double closed = kl_smooth_loss(f).item() - 0.5 * static_cast<double>(mu.numel());
    const MonteCarloEstimate mc = kl_monte_carlo(f, kKlSamples, rng);
    worst_z = std::max(worst_z, std::abs(closed - mc.mean) / mc.std_error);
  }
  const double secs = seconds_since(t0);
  return {worst_z <= kKlSigmas && secs < kKlSeconds,
          fmt("%zu fields x 24 components, worst |closed - MC| = %.2f standard errors (limit %.0f); %.1f s", kKlFields,
              worst_z, kKlSigmas, secs)};
}

// ---------------------------------------------------------------------------
// 3. contrastive closed forms

Outcome criterion_contrastive() {
  const std::array<PositivePair, 1> pair{{{0, 1}}};
  const double orth = contrastive_loss(Tensor::from_data({3, 2}, {1, 0, 1, 0, 0, 1}), pair, 1.0).item();
  const double closed_err = std::abs(orth - std::log1p(std::exp(-1.0)));

  Rng rng(33);
  const std::array<PositivePair, 4> pairs{{{0, 4}, {1, 4}, {2, 4}, {3, 4}}};
  double worst = 0.0;
  for (int t = 0; t < kRotationBatches; ++t) {
    const std::size_t K = 6;
    const Tensor p = random_tensor({5, K}, rng, -1, 1, false);
    // Random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
    std::vector<std::vector<double>> q(K, std::vector<double>(K));
    for (auto& row : q)
      for (double& v : row) v = rng.normal();
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < K; ++k) dot += q[i][k] * q[j][k];
        for (std::size_t k = 0; k < K; ++k) q[i][k] -= dot * q[j][k];
      }
      double n = 0.0;
      for (double v : q[i]) n += v * v;
      for (double& v : q[i]) v /= std::sqrt(n);
    }
    std::vector<double> rotated(5 * K, 0.0);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t i = 0; i < K; ++i)
        for (std::size_t k = 0; k < K; ++k) rotated[r * K + i] += q[i][k] * p.data()[r * K + k];
    const double a = contrastive_loss(p, pairs, 0.1).item();
    const double b = contrastive_loss(Tensor::from_data({5, K}, rotated), pairs, 0.1).item();
    worst = std::max(worst, std::abs(a - b));
  }
  return {closed_err <= kClosedFormTol && worst <= kRotationTol,
          fmt("tau=1 orthogonal negative: |L - log(1+e^-1)| = %.2e (tol %.0e); rotation invariance over %d batches: "
              "max diff %.2e (tol %.0e)",
              closed_err, kClosedFormTol, kRotationBatches, worst, kRotationTol)};
}

// ---------------------------------------------------------------------------
// 4. warp invariants

Outcome criterion_warp() {
  Rng rng(44);
  const Extent3 e{9, 10, 11};
  ImageVolume img(e);
  for (double& v : img.data) v = rng.uniform(-1, 1);

  const bool identity = warp_trilinear(img, DisplacementField(e)).data == img.data;

  bool shifts = true;
  for (int sd = -2; sd <= 2; ++sd)
    for (int sh = -2; sh <= 2; ++sh)
      for (int sw = -2; sw <= 2; ++sw) {
        DisplacementField f(e);
        const std::size_t V = e.voxels();
        for (std::size_t i = 0; i < V; ++i) {
          f.data[i] = sd;
          f.data[V + i] = sh;
          f.data[2 * V + i] = sw;
        }
        const ImageVolume out = warp_trilinear(img, f);
        for (std::size_t d = 2; d + 2 < e.d; ++d)
          for (std::size_t h = 2; h + 2 < e.h; ++h)
            for (std::size_t w = 2; w + 2 < e.w; ++w)
              shifts = shifts && out.at(d, h, w) == img.at(d + sd, h + sh, w + sw);
      }

  double affine_err = 0.0;
  for (int t = 0; t < 10; ++t) {
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2), c = rng.uniform(-2, 2), k = rng.uniform(-1, 1);
    ImageVolume ramp(e);
    for (std::size_t d = 0; d < e.d; ++d)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w) ramp.at(d, h, w) = a * d + b * h + c * w + k;
    // Displacements that keep every sample point inside the grid.
    DisplacementField f(e);
    for (int comp = 0; comp < 3; ++comp)
      for (std::size_t d = 0; d < e.d; ++d)
        for (std::size_t h = 0; h < e.h; ++h)
          for (std::size_t w = 0; w < e.w; ++w) {
            const double pos[3] = {double(d), double(h), double(w)};
            const double ext[3] = {double(e.d), double(e.h), double(e.w)};
            const double target = std::clamp(pos[comp] + rng.uniform(-1.5, 1.5), 0.0, ext[comp] - 1.0);
            f.at(comp, d, h, w) = target - pos[comp];
          }
    const ImageVolume out = warp_trilinear(ramp, f);
    for (std::size_t d = 0; d < e.d; ++d)
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w) {
          const double expect = a * (d + f.at(0, d, h, w)) + b * (h + f.at(1, d, h, w)) + c * (w + f.at(2, d, h, w)) + k;
          affine_err = std::max(affine_err, std::abs(out.at(d, h, w) - expect));
        }
  }

  double jac_err = 0.0;
  for (int t = 0; t < 5; ++t) {
    DisplacementField f(e);
    const std::size_t V = e.voxels();
    const double s[3] = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    for (int comp = 0; comp < 3; ++comp)
      for (std::size_t i = 0; i < V; ++i) f.data[comp * V + i] = s[comp];
    for (double j : jacobian_determinant(f).data) jac_err = std::max(jac_err, std::abs(j - 1.0));
  }
  return {identity && shifts && affine_err <= kAffineTol && jac_err <= kJacobianTol,
          fmt("zero field bit-exact: %s; integer shifts exact on interior: %s; affine ramp max err %.2e (tol %.0e); "
              "translation Jacobian max |J-1| %.2e (tol %.0e)",
              identity ? "yes" : "no", shifts ? "yes" : "no", affine_err, kAffineTol, jac_err, kJacobianTol)};
}

// ---------------------------------------------------------------------------
// 5. metric oracles

Outcome criterion_metrics() {
  Rng rng(55);
  int mismatches = 0;
  for (int t = 0; t < kMetricPairs; ++t) {
    const Extent3 e{rng.uniform_int(1, 16), rng.uniform_int(1, 16), rng.uniform_int(1, 16)};
    const Mask a = random_mask(e, rng), b = random_mask(e, rng);
    mismatches += dice(a, b) != oracle_dice(a, b);
    mismatches += hausdorff(a, b) != oracle_hausdorff(a, b);
    mismatches += assd(a, b) != oracle_assd(a, b);
  }
  return {mismatches == 0, fmt("%d random mask pairs up to 16^3, %d exact mismatches in dice/hd/assd", kMetricPairs,
                               mismatches)};
}

// ---------------------------------------------------------------------------
// Shared synthetic suite for criteria 6-10.

class Suite {
 public:
  explicit Suite(std::string workdir) : root_(std::move(workdir)) {}

  std::string data_dir() const { return join("data"); }
  std::string join(const std::string& name) const { return (fs::path(root_) / name).string(); }

  ConfigSources config() const { return {join("suite.cfg"), {}}; }

  const Dataset& dataset() {
    if (!dataset_) {
      fs::create_directories(root_);
      write_file(join("suite.cfg"), kSuiteConfig);
      std::ostringstream sink;
      cmd_gen({config(), data_dir()}, sink);
      dataset_ = load_dataset(data_dir());
    }
    return *dataset_;
  }

  RunConfig run_config() const { return resolve_config(config()); }

  // Overfit log for the single pair (sample 0 against the atlas).
  std::vector<StepRecord> overfit() {
    const Dataset& ds = dataset();
    Dataset pair;
    pair.atlas = ds.atlas;
    pair.samples = {ds.samples[0]};
    TrainConfig cfg = run_config().train;
    cfg.toggles.contrast = false;  // one pair per step leaves no negatives
    cfg.batch_size = 1;
    cfg.train_count = 0;
    const TrainingData data = make_training_data(pair, 0);
    Network net(cfg.network);
    init_parameters(net, cfg.seed);
    TrainState state = make_train_state(net, cfg);
    std::vector<StepRecord> out;
    for (int s = 0; s < kOverfitSteps; ++s) out.push_back(train_step(data, {{0}, {}}, net, state, cfg));
    return out;
  }

  // Runs the 4-row ablation once; per-run directories hold logs and checkpoints.
  void ablation() {
    if (ablation_done_) return;
    dataset();
    const auto t0 = std::chrono::steady_clock::now();
    cmd_ablate({config(), data_dir(), join("ablation"), kAblationSeeds}, std::cerr);
    ablation_seconds_ = seconds_since(t0);
    ablation_done_ = true;
  }
  double ablation_seconds() const { return ablation_seconds_; }

  std::string run_dir(const std::string& row, std::uint64_t seed) const {
    return join("ablation/" + row + "_seed" + std::to_string(seed));
  }

  // Segments the test samples through cmd_segment and scores them.
  double segmentation_dice(const std::optional<std::string>& checkpoint, const std::string& tag) {
    const Dataset& ds = dataset();
    const std::size_t first = run_config().train.train_count;
    std::ostringstream sink;
    std::vector<SampleScore> scores;
    for (std::size_t i = first; i < ds.samples.size(); ++i) {
      const std::string out = join("segment/" + tag + "/" + fs::path(sample_path(data_dir(), i)).filename().string());
      SegmentOptions opt{checkpoint.value_or(""), sample_path(data_dir(), i), atlas_path(data_dir()),
                         atlas_labels_path(data_dir()), out, !checkpoint.has_value()};
      cmd_segment(opt, sink);
      scores.push_back(score_sample(std::to_string(i), read_labels(out), ds.samples[i].labels));
    }
    const RegionReport report = build_report(std::move(scores));
    write_file(join("segment/" + tag + "/report.csv"), format_report_csv(report));
    return macro_dice(report);
  }

 private:
  static void write_file(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream(path, std::ios::binary) << text;
  }

  std::string root_;
  std::optional<Dataset> dataset_;
  bool ablation_done_ = false;
  double ablation_seconds_ = 0.0;
};

// ---------------------------------------------------------------------------
// 6. single-pair overfit

Outcome criterion_overfit(Suite& suite) {
  suite.dataset();
  const auto t0 = std::chrono::steady_clock::now();
  const auto log = suite.overfit();
  const double secs = seconds_since(t0);
  const double first = log.front().recon, last = log.back().recon;
  const double drop = 1.0 - last / first;
  return {drop >= kOverfitDrop && secs < kOverfitSeconds,
          fmt("recon %.2f at step 0 -> %.2f at step %d: drop %.1f%% (need %.0f%%); %.1f s (limit %.0f s)", first, last,
              kOverfitSteps - 1, 100 * drop, 100 * kOverfitDrop, secs, kOverfitSeconds)};
}

// ---------------------------------------------------------------------------
// 7. synthetic end-to-end segmentation

Outcome criterion_end_to_end(Suite& suite) {
  suite.ablation();
  const double baseline = suite.segmentation_dice(std::nullopt, "baseline");
  const double full = suite.segmentation_dice(suite.run_dir("recon+smooth+contrast", 7) + "/checkpoint.clmp", "full");
  const double floor = suite.segmentation_dice(suite.run_dir("recon+smooth", 7) + "/checkpoint.clmp", "recon+smooth");
  const double per_run = suite.ablation_seconds() / (4.0 * static_cast<double>(kAblationSeeds.size()));
  std::ofstream(suite.join("criterion7.txt"))
      << fmt("baseline_dice %.6f\nfull_dice %.6f\nrecon_smooth_floor_dice %.6f\n", baseline, full, floor);
  const bool pass = full >= kDiceFloor && full - baseline >= kDiceMargin && 2 * per_run <= kSuiteSeconds;
  return {pass, fmt("test Dice full %.4f (need >= %.2f), baseline %.4f, gain %+.4f (need >= %.2f); "
                    "recon+smooth floor %.4f; ~%.0f s per 60-epoch run",
                    full, kDiceFloor, baseline, full - baseline, kDiceMargin, floor, per_run)};
}

// ---------------------------------------------------------------------------
// 8. ablation ordering

Outcome criterion_ablation(Suite& suite) {
  suite.ablation();
  const std::string table = slurp(suite.join("ablation/ablation.csv"));
  std::map<std::string, double> dice;
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string name, seeds, mean;
    std::getline(row, name, ',');
    std::getline(row, seeds, ',');
    std::getline(row, mean, ',');
    dice[name] = std::stod(mean);
  }
  const double recon = dice["recon"], full = dice["recon+smooth+contrast"], rc = dice["recon+contrast"];
  const bool pass = full >= recon && rc >= recon - kContrastSlack;
  std::string detail = fmt("mean Dice over seeds 7,8,9: full %.4f vs recon-only %.4f; recon+contrast %.4f (need >= "
                           "recon-only - %.2f)\n",
                           full, recon, rc, kContrastSlack);
  for (std::istringstream t(table); std::getline(t, line);) detail += "    " + line + "\n";
  detail.pop_back();
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 9. determinism

Outcome criterion_determinism(Suite& suite) {
  suite.ablation();
  auto csv = [](const std::vector<StepRecord>& log) {
    std::string s;
    for (const auto& r : log) s += format_step_csv(r) + "\n";
    return s;
  };
  const bool overfit_same = csv(suite.overfit()) == csv(suite.overfit());

  // Retrain the full seed-7 run through cmd_train and compare with the ablation's log.
  RunConfig cfg = suite.run_config();
  std::ostringstream sink;
  const std::string rerun = suite.join("rerun_full_seed7");
  cmd_train({suite.config(), suite.data_dir(), rerun, std::nullopt}, sink);
  const std::string a = slurp(rerun + "/train_log.csv");
  const std::string b = slurp(suite.run_dir("recon+smooth+contrast", 7) + "/train_log.csv");
  const bool train_same = !a.empty() && a == b;
  const bool ckpt_same = read_file_bytes(rerun + "/checkpoint.clmp") ==
                         read_file_bytes(suite.run_dir("recon+smooth+contrast", 7) + "/checkpoint.clmp");
  const std::size_t steps = static_cast<std::size_t>(std::count(a.begin(), a.end(), '\n')) - 1;
  return {overfit_same && train_same && ckpt_same,
          fmt("overfit log repeat identical: %s; full seed-7 retrain: %zu-step log identical: %s, checkpoint "
              "identical: %s",
              overfit_same ? "yes" : "no", steps, train_same ? "yes" : "no", ckpt_same ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 10. registration by-product

Outcome criterion_registration(Suite& suite) {
  suite.ablation();
  const Dataset& ds = suite.dataset();
  const std::size_t first = suite.run_config().train.train_count;
  std::ostringstream sink;
  double before = 0.0, after = 0.0;
  for (std::size_t i = first; i < ds.samples.size(); ++i) {
    const std::string out = suite.join("register/" + std::to_string(i));
    cmd_register({suite.run_dir("recon+smooth+contrast", 7) + "/checkpoint.clmp", sample_path(suite.data_dir(), i),
                  atlas_path(suite.data_dir()), out},
                 sink);
    const ImageVolume warped = read_image(out + "/warped.clmv");
    before += mean_squared_error(ds.samples[i].image, ds.atlas.image);
    after += mean_squared_error(warped, ds.atlas.image);
  }
  const double n = static_cast<double>(ds.samples.size() - first);
  before /= n;
  after /= n;
  return {after <= kMseRatio * before,
          fmt("test-set MSE to atlas %.3e before, %.3e after: ratio %.3f (need <= %.1f)", before, after, after / before,
              kMseRatio)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clmorph acceptance suite"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  std::vector<int> expected_failures;
  app.add_option("--workdir", workdir, "directory for the synthetic suite artifacts");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  app.add_option("--expect-fail", expected_failures,
                 "criteria known to be out of reach; their FAIL lines do not fail the run")
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  Suite suite(workdir);
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion_gradients},
      {2, criterion_kl},
      {3, criterion_contrastive},
      {4, criterion_warp},
      {5, criterion_metrics},
      {6, [&] { return criterion_overfit(suite); }},
      {7, [&] { return criterion_end_to_end(suite); }},
      {8, [&] { return criterion_ablation(suite); }},
      {9, [&] { return criterion_determinism(suite); }},
      {10, [&] { return criterion_registration(suite); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> waived(expected_failures.begin(), expected_failures.end());
  int unexpected = 0;
  std::string summary;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::string line = std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + ": " + o.detail;
    if (!o.pass && waived.count(id)) line += "\n    (expected failure, see README)";
    if (!o.pass && !waived.count(id)) ++unexpected;
    std::cout << line << "\n" << std::flush;
    summary += line + "\n";
  }
  fs::create_directories(workdir);
  std::ofstream(fs::path(workdir) / "acceptance_results.txt") << summary;
  return unexpected == 0 ? 0 : 1;
}
