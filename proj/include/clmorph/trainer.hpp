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

// Optimisation loop: initialisation, Adam, step-decay learning rate, in-batch
// contrastive pairing, resumable state and checkpoints.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clmorph/losses.hpp"
#include "clmorph/network.hpp"
#include "clmorph/rng.hpp"
#include "clmorph/synthdata.hpp"

namespace clmorph {

enum class PairMode : std::uint8_t { kAtlas, kRandom };

struct TrainConfig {
  double lr0 = 3e-3;
  double lr_decay = 0.1;
  std::size_t lr_decay_every = 20;
  std::size_t epochs = 60;
  std::size_t batch_size = 4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 7;
  LossToggles toggles;
  LossConfig loss;
  // Global gradient-norm ceiling; 0 disables clipping.
  double grad_clip = 10.0;
  PairMode pair_mode = PairMode::kAtlas;
  bool augment = false;
  AugmentConfig augment_config;
  // Number of leading samples used for training; 0 means all.
  std::size_t train_count = 0;
  NetworkConfig network;

  void validate() const;
};

// One record per optimiser step.
struct StepRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double recon = 0.0;
  double smooth = 0.0;
  double contrast = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
};

struct AdamState {
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

struct TrainState {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  AdamState adam;
  Rng rng;
  std::vector<StepRecord> history;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void init_parameters(Network& net, std::uint64_t seed);

AdamState make_adam_state(const Network& net);
// One bias-corrected Adam update of `params` from `grads` (same layout).
void adam_update(std::span<double> params, std::span<const double> grads, std::vector<double>& m,
                 std::vector<double>& v, std::uint64_t t, double lr, const AdamHyper& hyper);
// Advances state.t and updates every parameter from its gradient (missing
// gradients count as zero).
void adam_step(Network& net, AdamState& state, double lr, const AdamHyper& hyper);

double lr_at(std::size_t epoch, const TrainConfig& config);

TrainState make_train_state(const Network& net, const TrainConfig& config);

// Normalised training images and the reference they are registered to.
struct TrainingData {
  ImageVolume atlas;
  std::vector<ImageVolume> images;
};
TrainingData make_training_data(const Dataset& dataset, std::size_t train_count);

// One pair per batch element: images[moving[i]] registered to the atlas
// (atlas mode) or to images[fixed[i]] (random mode).
struct Batch {
  std::vector<std::size_t> moving;
  std::vector<std::size_t> fixed;
};

using StepLogger = std::function<void(const StepRecord&)>;

// Forward, backward, clip and Adam update for one batch.
StepRecord train_step(const TrainingData& data, const Batch& batch, Network& net, TrainState& state,
                      const TrainConfig& config);

// Shuffled pass over the training images. Throws NumericalError on a
// non-finite loss.
std::vector<StepRecord> train_epoch(const TrainingData& data, Network& net, TrainState& state,
                                    const TrainConfig& config, const StepLogger& log = {});

std::string format_step_record(const StepRecord& r);
inline constexpr const char* kTrainLogCsvHeader = "epoch,step,lr,total,recon,smooth,contrast,grad_norm,clipped";
std::string format_step_csv(const StepRecord& r);

std::vector<std::uint8_t> encode_train_state(const TrainState& state);
TrainState decode_train_state(std::span<const std::uint8_t> bytes, const Network& net, std::size_t base = 0);

void save_checkpoint(const std::string& path, const Network& net, const TrainState& state);
struct LoadedCheckpoint {
  Network network;
  std::optional<TrainState> state;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace clmorph
