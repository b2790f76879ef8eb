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

// Siamese registration network: one encoder applied to both the unaligned and
// the reference image (same parameter tensors), a projection head on the
// deepest features, and a single decoder that fuses both pyramids into the
// mean and log-variance of a per-voxel displacement.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clmorph/rng.hpp"
#include "clmorph/tensor.hpp"
#include "clmorph/volume.hpp"

namespace clmorph {

struct NetworkConfig {
  // Encoder channels per level, finest first. Level l runs at 1/2^l resolution
  // (2x average pooling between levels).
  std::vector<std::size_t> enc_channels{8, 16, 32};
  // Decoder channels per level, finest first; same length as enc_channels.
  std::vector<std::size_t> dec_channels{8, 8, 16};
  std::size_t proj_dim = 64;
  double leaky_slope = 0.2;

  void validate() const;
  std::size_t levels() const { return enc_channels.size(); }
  std::string serialize() const;
  static NetworkConfig deserialize(const std::string& text);
};

enum class ParamKind : std::uint8_t {
  kConvWeight,
  kLinearWeight,
  kBias,
  kNormScale,
  kNormShift,
  kMuHeadWeight,
  kLogvarHeadWeight,
  kLogvarHeadBias,
};

struct Parameter {
  std::string name;
  ParamKind kind;
  std::size_t fan_in = 0;
  Tensor tensor;
};

// Mean and log-variance of the displacement, each [N,3,D,H,W].
struct ProbabilisticField {
  Tensor mu;
  Tensor logvar;
};

struct Encoding {
  std::vector<Tensor> pyramid;  // finest first, [N,C_l,D/2^l,H/2^l,W/2^l]
  Tensor projection;            // [N,P], unit rows
};

class Network {
 public:
  explicit Network(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  std::size_t parameter_count() const;

  // images [N,1,D,H,W]; each extent divisible by 2^(levels-1).
  Encoding encode(const Tensor& images) const;
  Encoding encode(const ImageVolume& image) const;

  // Roles are asymmetric: `moving` is the unaligned image, `fixed` the reference.
  ProbabilisticField decode(const std::vector<Tensor>& moving, const std::vector<Tensor>& fixed) const;

  void zero_grad();

 private:
  struct ConvRef {
    std::size_t weight, bias;
  };
  struct NormRef {
    std::size_t scale, shift;
  };
  struct EncoderLevel {
    ConvRef down;
    NormRef down_norm;
    std::optional<ConvRef> refine;
    std::optional<NormRef> refine_norm;
  };

  ConvRef add_conv(const std::string& name, std::size_t in, std::size_t out, ParamKind weight_kind,
                   ParamKind bias_kind);
  NormRef add_norm(const std::string& name, std::size_t channels);
  Tensor apply_conv(const Tensor& x, const ConvRef& c, int stride) const;
  Tensor apply_norm(const Tensor& x, const NormRef& n) const;

  NetworkConfig config_;
  std::vector<Parameter> params_;
  std::vector<EncoderLevel> encoder_;
  std::vector<ConvRef> decoder_;  // finest first
  std::size_t proj_weight_ = 0, proj_bias_ = 0;
  ConvRef mu_head_{}, logvar_head_{};
};

// z = mu + exp(logvar / 2) * noise. Differentiable w.r.t. mu and logvar.
Tensor reparam_sample(const ProbabilisticField& field, const Tensor& noise);
// Standard normal noise shaped like field.mu.
Tensor sample_noise(const ProbabilisticField& field, Rng& rng);

// Parameter checkpoint ("CLMP"). `state` is an opaque trailing section used
// by the trainer; parameter-only files carry none.
struct CheckpointFile {
  NetworkConfig config;
  std::vector<std::pair<std::string, Tensor>> params;
  std::optional<std::vector<std::uint8_t>> state;
  std::size_t state_offset = 0;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Network& net, const std::vector<std::uint8_t>* state);
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);
// Copies checkpoint values into `net`; rejects missing names or shape mismatches.
void load_parameters(Network& net, const CheckpointFile& file);

void save_network(const std::string& path, const Network& net);
Network load_network(const std::string& path);

}  // namespace clmorph
