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


#include "clmorph/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "clmorph/binary_io.hpp"
#include "clmorph/errors.hpp"
#include "clmorph/volume.hpp"
#include "clmorph/warp.hpp"

namespace clmorph {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must lie in (0, 1]");
  if (lr_decay_every == 0) throw ConfigError("lr_decay_every must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (toggles.contrast && batch_size < 2) throw ConfigError("batch_size must be >= 2 when the contrastive term is on");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  if (augment) {
    if (augment_config.max_rotation_deg < 0.0) throw ConfigError("augment max rotation must be >= 0");
  }
  loss.validate();
  network.validate();
}

void init_parameters(Network& net, std::uint64_t seed) {
  Rng rng(seed);
  for (Parameter& p : net.parameters()) {
    auto data = p.tensor.mutable_data();
    switch (p.kind) {
      case ParamKind::kConvWeight:
      case ParamKind::kLinearWeight: {
        const double std = std::sqrt(2.0 / static_cast<double>(p.fan_in));
        for (double& v : data) v = rng.normal(0.0, std);
        break;
      }
      case ParamKind::kBias:
        std::fill(data.begin(), data.end(), 0.0);
        break;
      case ParamKind::kNormScale:
        for (double& v : data) v = 1.0 + rng.normal(0.0, 0.1);
        break;
      case ParamKind::kNormShift:
        for (double& v : data) v = rng.normal(0.0, 0.1);
        break;
      case ParamKind::kMuHeadWeight:
      case ParamKind::kLogvarHeadWeight:
        for (double& v : data) v = rng.normal(0.0, 1e-5);
        break;
      case ParamKind::kLogvarHeadBias:
        std::fill(data.begin(), data.end(), -10.0);
        break;
    }
  }
}

AdamState make_adam_state(const Network& net) {
  AdamState s;
  for (const Parameter& p : net.parameters()) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_update(std::span<double> params, std::span<const double> grads, std::vector<double>& m,
                 std::vector<double>& v, std::uint64_t t, double lr, const AdamHyper& hyper) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw DimensionError("adam_update: parameter, gradient and moment sizes differ");
  }
  if (t == 0) throw UsageError("adam_update: step counter starts at 1");
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

void adam_step(Network& net, AdamState& state, double lr, const AdamHyper& hyper) {
  auto& params = net.parameters();
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state does not match the network");
  }
  ++state.t;
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].tensor;
    std::span<const double> g;
    if (t.has_grad()) {
      g = t.grad();
    } else {
      zeros.assign(t.numel(), 0.0);
      g = zeros;
    }
    adam_update(t.mutable_data(), g, state.m[i], state.v[i], state.t, lr, hyper);
  }
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  const std::size_t decays = epoch / config.lr_decay_every;
  return config.lr0 * std::pow(config.lr_decay, static_cast<double>(decays));
}

TrainState make_train_state(const Network& net, const TrainConfig& config) {
  TrainState s;
  s.adam = make_adam_state(net);
  s.rng = Rng(derive_seed(config.seed, 0x7EA1));
  return s;
}

TrainingData make_training_data(const Dataset& dataset, std::size_t train_count) {
  const std::size_t n = train_count == 0 ? dataset.samples.size() : train_count;
  if (n > dataset.samples.size()) {
    throw ConfigError("train_count " + std::to_string(n) + " exceeds the " +
                      std::to_string(dataset.samples.size()) + " available samples");
  }
  TrainingData data;
  data.atlas = normalize_intensity(dataset.atlas.image);
  for (std::size_t i = 0; i < n; ++i) {
    require_same_extent(dataset.samples[i].image, dataset.atlas.image, "training data");
    data.images.push_back(normalize_intensity(dataset.samples[i].image));
  }
  return data;
}

namespace {

Tensor stack_images(const std::vector<const ImageVolume*>& images) {
  std::vector<Tensor> parts;
  parts.reserve(images.size());
  for (const ImageVolume* v : images) parts.push_back(to_tensor(*v));
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

[[noreturn]] void non_finite(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "non-finite loss at epoch %zu step %llu: total=%g recon=%g smooth=%g contrast=%g grad_norm=%g",
                r.epoch, static_cast<unsigned long long>(r.step), r.total, r.recon, r.smooth, r.contrast,
                r.grad_norm);
  throw NumericalError(buf);
}

}  // namespace

StepRecord train_step(const TrainingData& data, const Batch& batch, Network& net, TrainState& state,
                      const TrainConfig& config) {
  const std::size_t b = batch.moving.size();
  if (b == 0) throw UsageError("train_step: empty batch");
  const bool atlas_mode = config.pair_mode == PairMode::kAtlas;
  if (!atlas_mode && batch.fixed.size() != b) throw UsageError("train_step: random mode needs one fixed index per pair");
  if (config.toggles.contrast && b < 2) throw ConfigError("train_step: the contrastive term needs >= 2 pairs");

  std::vector<ImageVolume> augmented;
  std::vector<const ImageVolume*> moving;
  if (config.augment) augmented.reserve(b);
  for (std::size_t i : batch.moving) {
    if (i >= data.images.size()) throw UsageError("train_step: image index out of range");
    if (config.augment) {
      const ImageVolume& img = data.images[i];
      const LabelVolume none(img.extent);
      AugmentConfig ac = config.augment_config;
      ac.crop = img.extent;
      augmented.push_back(augment(img, none, ac, state.rng.fork_seed()).image);
      moving.push_back(&augmented.back());
    } else {
      moving.push_back(&data.images[i]);
    }
  }
  const Tensor x = stack_images(moving);
  const Encoding ex = net.encode(x);

  Tensor y;
  std::vector<Tensor> fixed_pyramid;
  Tensor projections;
  std::vector<PositivePair> pairs;
  if (atlas_mode) {
    const Tensor y1 = to_tensor(data.atlas);
    const Encoding ey = net.encode(y1);
    y = repeat_batch(y1, b);
    for (const Tensor& level : ey.pyramid) fixed_pyramid.push_back(repeat_batch(level, b));
    projections = concat({ex.projection, ey.projection}, 0);
    for (std::size_t i = 0; i < b; ++i) pairs.push_back({i, b});
  } else {
    std::vector<const ImageVolume*> fixed;
    for (std::size_t i : batch.fixed) {
      if (i >= data.images.size()) throw UsageError("train_step: image index out of range");
      fixed.push_back(&data.images[i]);
    }
    y = stack_images(fixed);
    const Encoding ey = net.encode(y);
    fixed_pyramid = ey.pyramid;
    projections = concat({ex.projection, ey.projection}, 0);
    for (std::size_t i = 0; i < b; ++i) pairs.push_back({i, b + i});
  }

  const ProbabilisticField field = net.decode(ex.pyramid, fixed_pyramid);
  const Tensor noise = sample_noise(field, state.rng);
  const Tensor z = reparam_sample(field, noise);
  const Tensor warped = warp_trilinear(x, z);

  const double inv_b = 1.0 / static_cast<double>(b);
  LossComponents parts;
  if (config.toggles.recon) parts.recon = scale(recon_loss(y, warped, config.loss.sigma2), inv_b);
  if (config.toggles.smooth) parts.smooth = scale(kl_smooth_loss(field), inv_b);
  if (config.toggles.contrast) {
    parts.contrast = contrastive_loss(projections, pairs, config.loss.tau, config.loss.symmetric);
  }
  if (config.loss.gradient_weight > 0.0) parts.gradient = scale(spatial_gradient_penalty(field.mu), inv_b);
  const LossBreakdown loss = total_loss(parts, config.loss);

  StepRecord rec;
  rec.epoch = state.epoch;
  rec.step = state.step;
  rec.lr = lr_at(state.epoch, config);
  rec.total = loss.total.item();
  rec.recon = loss.recon;
  rec.smooth = loss.smooth;
  rec.contrast = loss.contrast;
  if (!std::isfinite(rec.total)) non_finite(rec);

  net.zero_grad();
  if (loss.total.requires_grad()) loss.total.backward();
  double sq = 0.0;
  for (const Parameter& p : net.parameters()) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  rec.grad_norm = std::sqrt(sq);
  if (!std::isfinite(rec.grad_norm)) non_finite(rec);
  if (config.grad_clip > 0.0 && rec.grad_norm > config.grad_clip) {
    rec.clipped = true;
    const double f = config.grad_clip / rec.grad_norm;
    for (Parameter& p : net.parameters()) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= f;
    }
  }
  adam_step(net, state.adam, rec.lr, AdamHyper{config.adam_beta1, config.adam_beta2, config.adam_eps});
  ++state.step;
  state.history.push_back(rec);
  return rec;
}

std::vector<StepRecord> train_epoch(const TrainingData& data, Network& net, TrainState& state,
                                    const TrainConfig& config, const StepLogger& log) {
  config.validate();
  const std::size_t n = data.images.size();
  if (n == 0) throw ConfigError("train_epoch: no training images");
  if (config.pair_mode == PairMode::kRandom && n < 2) throw ConfigError("train_epoch: random pairs need >= 2 images");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  state.rng.shuffle(order);

  const std::size_t min_batch = config.toggles.contrast ? 2 : 1;
  std::vector<StepRecord> out;
  for (std::size_t start = 0; start < n; start += config.batch_size) {
    const std::size_t end = std::min(n, start + config.batch_size);
    if (end - start < min_batch) break;
    Batch batch;
    batch.moving.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
    if (config.pair_mode == PairMode::kRandom) {
      for (std::size_t i : batch.moving) {
        std::size_t j = static_cast<std::size_t>(state.rng.uniform_int(0, n - 2));
        if (j >= i) ++j;
        batch.fixed.push_back(j);
      }
    }
    out.push_back(train_step(data, batch, net, state, config));
    if (log) log(out.back());
  }
  ++state.epoch;
  return out;
}

std::string format_step_record(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu %llu %.3e %.6f %.6f %.6f %.6f %.6f%s", r.epoch,
                static_cast<unsigned long long>(r.step), r.lr, r.total, r.recon, r.smooth, r.contrast, r.grad_norm,
                r.clipped ? " clipped" : "");
  return buf;
}

std::string format_step_csv(const StepRecord& r) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%zu,%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d", r.epoch,
                static_cast<unsigned long long>(r.step), r.lr, r.total, r.recon, r.smooth, r.contrast, r.grad_norm,
                r.clipped ? 1 : 0);
  return buf;
}

std::vector<std::uint8_t> encode_train_state(const TrainState& state) {
  ByteWriter w;
  w.tag("CLMS");
  w.u64(state.step);
  w.u64(state.epoch);
  w.str(state.rng.state());
  w.u64(state.adam.t);
  w.u32(static_cast<std::uint32_t>(state.adam.m.size()));
  for (std::size_t i = 0; i < state.adam.m.size(); ++i) {
    w.u64(state.adam.m[i].size());
    for (double v : state.adam.m[i]) w.f64(v);
    for (double v : state.adam.v[i]) w.f64(v);
  }
  w.u64(state.history.size());
  for (const StepRecord& r : state.history) {
    w.u64(r.epoch);
    w.u64(r.step);
    for (double v : {r.lr, r.total, r.recon, r.smooth, r.contrast, r.grad_norm}) w.f64(v);
    w.u8(r.clipped ? 1 : 0);
  }
  return w.take();
}

TrainState decode_train_state(std::span<const std::uint8_t> bytes, const Network& net, std::size_t base) {
  ByteReader r(bytes, base);
  r.expect_tag("CLMS", "trainer state");
  TrainState s;
  s.step = r.u64();
  s.epoch = r.u64();
  const std::size_t rng_at = r.offset();
  const std::string rng = r.str("rng state");
  s.rng.set_state(rng);
  if (s.rng.state() != rng) throw FormatError("unreadable rng state", rng_at);
  s.adam.t = r.u64();
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32();
  const auto& params = net.parameters();
  if (count != params.size()) {
    throw FormatError("optimizer state has " + std::to_string(count) + " tensors, network has " +
                          std::to_string(params.size()),
                      count_at);
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t n_at = r.offset();
    const std::uint64_t n = r.u64();
    if (n != params[i].tensor.numel()) {
      throw FormatError("optimizer moments for " + params[i].name + " have the wrong size", n_at);
    }
    std::vector<double> m(n), v(n);
    for (double& x : m) x = r.f64();
    for (double& x : v) x = r.f64();
    s.adam.m.push_back(std::move(m));
    s.adam.v.push_back(std::move(v));
  }
  const std::uint64_t hist = r.u64();
  if (hist > r.remaining()) r.fail("history length exceeds the remaining bytes");
  for (std::uint64_t i = 0; i < hist; ++i) {
    StepRecord rec;
    rec.epoch = r.u64();
    rec.step = r.u64();
    rec.lr = r.f64();
    rec.total = r.f64();
    rec.recon = r.f64();
    rec.smooth = r.f64();
    rec.contrast = r.f64();
    rec.grad_norm = r.f64();
    rec.clipped = r.u8() != 0;
    s.history.push_back(rec);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after trainer state");
  return s;
}

void save_checkpoint(const std::string& path, const Network& net, const TrainState& state) {
  const auto blob = encode_train_state(state);
  write_file_bytes(path, encode_checkpoint(net, &blob));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  const CheckpointFile file = decode_checkpoint(bytes);
  LoadedCheckpoint out{Network(file.config), std::nullopt};
  load_parameters(out.network, file);
  if (file.state) out.state = decode_train_state(*file.state, out.network, file.state_offset);
  return out;
}

}  // namespace clmorph
