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

#include "clmorph/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "clmorph/binary_io.hpp"
#include "clmorph/errors.hpp"

namespace clmorph {

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw ConfigError("bad integer list: " + text);
    }
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void NetworkConfig::validate() const {
  if (enc_channels.empty()) throw ConfigError("enc_channels must not be empty");
  if (dec_channels.size() != enc_channels.size()) {
    throw ConfigError("dec_channels must have one entry per encoder level");
  }
  for (auto c : enc_channels)
    if (c == 0) throw ConfigError("enc_channels entries must be positive");
  for (auto c : dec_channels)
    if (c == 0) throw ConfigError("dec_channels entries must be positive");
  if (proj_dim == 0) throw ConfigError("proj_dim must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must be in [0,1)");
}

std::string NetworkConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "enc_channels = " << join(enc_channels) << "\n"
     << "dec_channels = " << join(dec_channels) << "\n"
     << "proj_dim = " << proj_dim << "\n"
     << "leaky_slope = " << leaky_slope << "\n";
  return os.str();
}

NetworkConfig NetworkConfig::deserialize(const std::string& text) {
  NetworkConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "enc_channels") cfg.enc_channels = parse_list(value);
    else if (key == "dec_channels") cfg.dec_channels = parse_list(value);
    else if (key == "proj_dim") cfg.proj_dim = std::stoul(value);
    else if (key == "leaky_slope") cfg.leaky_slope = std::stod(value);
    else throw ConfigError("unknown network key in checkpoint: " + key);
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

Network::ConvRef Network::add_conv(const std::string& name, std::size_t in, std::size_t out,
                                   ParamKind weight_kind, ParamKind bias_kind) {
  ConvRef ref{params_.size(), params_.size() + 1};
  params_.push_back({name + ".weight", weight_kind, in * 27, Tensor::zeros({out, in, 3, 3, 3}, true)});
  params_.push_back({name + ".bias", bias_kind, in * 27, Tensor::zeros({out}, true)});
  return ref;
}

Network::NormRef Network::add_norm(const std::string& name, std::size_t channels) {
  NormRef ref{params_.size(), params_.size() + 1};
  params_.push_back({name + ".scale", ParamKind::kNormScale, channels, Tensor::full({channels}, 1.0, true)});
  params_.push_back({name + ".shift", ParamKind::kNormShift, channels, Tensor::zeros({channels}, true)});
  return ref;
}

Network::Network(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& enc = config_.enc_channels;
  const auto& dec = config_.dec_channels;
  const std::size_t L = enc.size();
  for (std::size_t l = 0; l < L; ++l) {
    const std::string name = "enc" + std::to_string(l);
    EncoderLevel level;
    const std::size_t in = l == 0 ? 1 : enc[l - 1];
    level.down = add_conv(name + ".conv", in, enc[l], ParamKind::kConvWeight, ParamKind::kBias);
    level.down_norm = add_norm(name + ".norm", enc[l]);
    if (l > 0) {
      level.refine = add_conv(name + ".conv2", enc[l], enc[l], ParamKind::kConvWeight, ParamKind::kBias);
      level.refine_norm = add_norm(name + ".norm2", enc[l]);
    }
    encoder_.push_back(level);
  }
  proj_weight_ = params_.size();
  params_.push_back({"proj.weight", ParamKind::kLinearWeight, enc.back(),
                     Tensor::zeros({config_.proj_dim, enc.back()}, true)});
  proj_bias_ = params_.size();
  params_.push_back({"proj.bias", ParamKind::kBias, enc.back(), Tensor::zeros({config_.proj_dim}, true)});

  decoder_.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = 2 * enc[l] + (l + 1 < L ? dec[l + 1] : 0);
    decoder_[l] = add_conv("dec" + std::to_string(l) + ".conv", in, dec[l], ParamKind::kConvWeight, ParamKind::kBias);
  }
  mu_head_ = add_conv("head_mu", dec[0], 3, ParamKind::kMuHeadWeight, ParamKind::kBias);
  logvar_head_ = add_conv("head_logvar", dec[0], 3, ParamKind::kLogvarHeadWeight, ParamKind::kLogvarHeadBias);
}

Parameter& Network::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("no parameter named " + name);
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Network::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor Network::apply_conv(const Tensor& x, const ConvRef& c, int stride) const {
  return conv3d(x, params_[c.weight].tensor, params_[c.bias].tensor, stride, 1);
}

Tensor Network::apply_norm(const Tensor& x, const NormRef& n) const {
  return instance_norm(x, params_[n.scale].tensor, params_[n.shift].tensor);
}

Encoding Network::encode(const Tensor& images) const {
  if (images.rank() != 5 || images.dim(1) != 1) {
    throw DimensionError("encode: expected [N,1,D,H,W], got " + shape_str(images.shape()));
  }
  const std::size_t div = std::size_t{1} << (config_.levels() - 1);
  for (std::size_t a = 2; a < 5; ++a) {
    if (images.dim(a) % div != 0 || images.dim(a) < div) {
      throw ConfigError("encode: extent " + std::to_string(images.dim(a)) + " is not divisible by " +
                        std::to_string(div) + " (" + std::to_string(config_.levels()) + " levels)");
    }
  }
  Encoding enc;
  Tensor h = images;
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    const auto& level = encoder_[l];
    if (l > 0) h = avg_pool3d(h, 2);
    h = leaky_relu(apply_norm(apply_conv(h, level.down, 1), level.down_norm), config_.leaky_slope);
    if (level.refine) {
      h = leaky_relu(apply_norm(apply_conv(h, *level.refine, 1), *level.refine_norm), config_.leaky_slope);
    }
    enc.pyramid.push_back(h);
  }
  const Tensor& deep = enc.pyramid.back();
  const std::size_t N = deep.dim(0), C = deep.dim(1);
  Tensor pooled = reduce_mean(reshape(deep, {N, C, deep.numel() / (N * C)}), 2);
  enc.projection = l2_normalize_rows(linear(pooled, params_[proj_weight_].tensor, params_[proj_bias_].tensor));
  return enc;
}

Encoding Network::encode(const ImageVolume& image) const { return encode(to_tensor(image)); }

ProbabilisticField Network::decode(const std::vector<Tensor>& moving, const std::vector<Tensor>& fixed) const {
  const std::size_t L = config_.levels();
  if (moving.size() != L || fixed.size() != L) {
    throw DimensionError("decode: expected " + std::to_string(L) + " pyramid levels");
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (moving[l].shape() != fixed[l].shape()) {
      throw DimensionError("decode: level " + std::to_string(l) + " shapes " + shape_str(moving[l].shape()) +
                           " and " + shape_str(fixed[l].shape()) + " differ");
    }
  }
  Tensor h = leaky_relu(apply_conv(concat({moving[L - 1], fixed[L - 1]}, 1), decoder_[L - 1], 1), config_.leaky_slope);
  for (std::size_t l = L - 1; l-- > 0;) {
    Tensor up = upsample_trilinear(h, 2);
    h = leaky_relu(apply_conv(concat({up, moving[l], fixed[l]}, 1), decoder_[l], 1), config_.leaky_slope);
  }
  return {apply_conv(h, mu_head_, 1), apply_conv(h, logvar_head_, 1)};
}

// ---------------------------------------------------------------------------

Tensor reparam_sample(const ProbabilisticField& field, const Tensor& noise) {
  if (field.mu.shape() != field.logvar.shape() || noise.shape() != field.mu.shape()) {
    throw DimensionError("reparam_sample: mu " + shape_str(field.mu.shape()) + ", logvar " +
                         shape_str(field.logvar.shape()) + ", noise " + shape_str(noise.shape()) +
                         " must share one shape");
  }
  return add(field.mu, mul(exp(scale(field.logvar, 0.5)), noise));
}

Tensor sample_noise(const ProbabilisticField& field, Rng& rng) {
  return Tensor::from_data(field.mu.shape(), rng.normal_vector(field.mu.numel()));
}

// ---------------------------------------------------------------------------
// CLMP checkpoint:
//   "CLMP" u16 version, str network-config, u32 count,
//   count x { str name, u32 rank, rank x u32 extent, f64 values },
//   u8 has_state, [u64 length, state bytes]

std::vector<std::uint8_t> encode_checkpoint(const Network& net, const std::vector<std::uint8_t>* state) {
  ByteWriter w;
  w.tag("CLMP");
  w.u16(kCheckpointVersion);
  w.str(net.config().serialize());
  w.u32(static_cast<std::uint32_t>(net.parameters().size()));
  for (const auto& p : net.parameters()) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : p.tensor.data()) w.f64(v);
  }
  w.u8(state ? 1 : 0);
  if (state) {
    w.u64(state->size());
    w.raw(*state);
  }
  return w.take();
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("CLMP", "checkpoint");
  const std::size_t version_at = r.offset();
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  CheckpointFile file;
  const std::size_t cfg_at = r.offset();
  try {
    file.config = NetworkConfig::deserialize(r.str("network config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad network config: ") + e.what(), cfg_at);
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("parameter name");
    const auto rank = r.u32();
    if (rank > 8) r.fail("implausible parameter rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    std::vector<double> values(shape_numel(shape));
    if (r.remaining() < values.size() * 8) r.fail("truncated values of parameter " + name);
    for (double& v : values) v = r.f64();
    file.params.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(values)));
  }
  if (r.u8() != 0) {
    const auto n = r.u64();
    if (r.remaining() < n) r.fail("truncated trainer state");
    file.state_offset = r.offset();
    auto raw = r.raw(n, "trainer state");
    file.state.emplace(raw.begin(), raw.end());
  }
  if (r.remaining() != 0) r.fail("trailing bytes after checkpoint");
  return file;
}

void load_parameters(Network& net, const CheckpointFile& file) {
  if (file.params.size() != net.parameters().size()) {
    throw DimensionError("checkpoint holds " + std::to_string(file.params.size()) + " parameters, network has " +
                         std::to_string(net.parameters().size()));
  }
  for (auto& p : net.parameters()) {
    auto it = std::find_if(file.params.begin(), file.params.end(), [&](const auto& e) { return e.first == p.name; });
    if (it == file.params.end()) throw DimensionError("checkpoint lacks parameter " + p.name);
    if (it->second.shape() != p.tensor.shape()) {
      throw DimensionError("checkpoint parameter " + p.name + " has shape " + shape_str(it->second.shape()) +
                           ", network expects " + shape_str(p.tensor.shape()));
    }
    std::copy(it->second.data().begin(), it->second.data().end(), p.tensor.mutable_data().begin());
  }
}

void save_network(const std::string& path, const Network& net) {
  write_file_bytes(path, encode_checkpoint(net, nullptr));
}

Network load_network(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  CheckpointFile file = decode_checkpoint(bytes);
  Network net(file.config);
  load_parameters(net, file);
  return net;
}

}  // namespace clmorph
