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

#include "clmorph/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "clmorph/errors.hpp"

namespace clmorph {

void LossConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (!(sigma2 > 0.0)) throw ConfigError("sigma2 must be > 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(gradient_weight >= 0.0)) throw ConfigError("gradient_weight must be >= 0");
}

Tensor recon_loss(const Tensor& reference, const Tensor& warped, double sigma2) {
  if (reference.shape() != warped.shape()) {
    throw DimensionError("recon_loss: reference " + shape_str(reference.shape()) + " and warped " +
                         shape_str(warped.shape()) + " differ");
  }
  if (!(sigma2 > 0.0)) throw ConfigError("recon_loss: sigma2 must be > 0");
  return scale(reduce_sum(square(sub(reference, warped))), 1.0 / (2.0 * sigma2));
}

Tensor kl_smooth_loss(const ProbabilisticField& field) {
  if (field.mu.shape() != field.logvar.shape()) {
    throw DimensionError("kl_smooth_loss: mu " + shape_str(field.mu.shape()) + " and logvar " +
                         shape_str(field.logvar.shape()) + " differ");
  }
  for (double v : field.logvar.data()) {
    if (!std::isfinite(v)) throw DomainError("kl_smooth_loss: non-finite logvar");
  }
  return scale(reduce_sum(sub(add(exp(field.logvar), square(field.mu)), field.logvar)), 0.5);
}

MonteCarloEstimate kl_monte_carlo(const ProbabilisticField& field, std::size_t samples, Rng& rng) {
  if (field.mu.shape() != field.logvar.shape()) throw DimensionError("kl_monte_carlo: mu/logvar shapes differ");
  if (samples == 0) throw ConfigError("kl_monte_carlo: samples must be >= 1");
  const auto mu = field.mu.data(), lv = field.logvar.data();
  // log q(z) - log p(z) = sum_k [ -lv/2 - eps^2/2 + z^2/2 ]; the 2*pi terms cancel.
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
      const double eps = rng.normal();
      const double z = mu[k] + std::exp(0.5 * lv[k]) * eps;
      log_ratio += -0.5 * lv[k] - 0.5 * eps * eps + 0.5 * z * z;
    }
    sum += log_ratio;
    sum_sq += log_ratio * log_ratio;
  }
  const double n = static_cast<double>(samples);
  MonteCarloEstimate est;
  est.mean = sum / n;
  const double var = samples > 1 ? std::max(0.0, (sum_sq - n * est.mean * est.mean) / (n - 1.0)) : 0.0;
  est.std_error = std::sqrt(var / n);
  return est;
}

Tensor contrastive_loss(const Tensor& projections, std::span<const PositivePair> pairs, double tau, bool symmetric) {
  if (projections.rank() != 2) {
    throw DimensionError("contrastive_loss: projections must be [n,P], got " + shape_str(projections.shape()));
  }
  const std::size_t n = projections.dim(0);
  if (n < 2) throw ConfigError("contrastive_loss: needs at least 2 projections (batch of 1 with contrast enabled)");
  if (pairs.empty()) throw ConfigError("contrastive_loss: no positive pairs");
  if (!(tau > 0.0)) throw ConfigError("contrastive_loss: tau must be > 0");

  std::vector<PositivePair> anchors;
  std::set<std::size_t> seen;
  for (const auto& p : pairs) {
    if (p.anchor >= n || p.positive >= n || p.anchor == p.positive) {
      throw ConfigError("contrastive_loss: invalid pair (" + std::to_string(p.anchor) + ", " +
                        std::to_string(p.positive) + ")");
    }
    if (!seen.insert(p.anchor).second) {
      throw ConfigError("contrastive_loss: anchor " + std::to_string(p.anchor) + " has more than one positive");
    }
    anchors.push_back(p);
  }
  if (symmetric) {
    for (const auto& p : pairs) {
      // A shared positive (one reference for many anchors) is only added once
      // as an anchor, paired with the first sample that named it.
      if (seen.insert(p.positive).second) anchors.push_back({p.positive, p.anchor});
    }
  }

  Tensor unit = l2_normalize_rows(projections);
  const std::size_t P = unit.dim(1);
  const auto u = unit.data();
  auto sim = [&](std::size_t a, std::size_t b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < P; ++k) acc += u[a * P + k] * u[b * P + k];
    return acc;
  };

  // Softmax weights over the denominator set {i != anchor}, kept for backward.
  std::vector<std::vector<double>> weights(anchors.size(), std::vector<double>(n, 0.0));
  double total = 0.0;
  for (std::size_t j = 0; j < anchors.size(); ++j) {
    const auto [a, pos] = anchors[j];
    double max_logit = -INFINITY;
    std::vector<double> logits(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (i == a) continue;
      logits[i] = sim(a, i) / tau;
      max_logit = std::max(max_logit, logits[i]);
    }
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (i != a) denom += std::exp(logits[i] - max_logit);
    for (std::size_t i = 0; i < n; ++i)
      if (i != a) weights[j][i] = std::exp(logits[i] - max_logit) / denom;
    total += -(logits[pos] - max_logit - std::log(denom));
  }
  const double inv_count = 1.0 / static_cast<double>(anchors.size());
  total *= inv_count;

  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    const auto uv = unit.data();
    double* gu = g[0].data();
    for (std::size_t j = 0; j < anchors.size(); ++j) {
      const auto [a, pos] = anchors[j];
      for (std::size_t i = 0; i < n; ++i) {
        if (i == a) continue;
        // dL/ds(a,i) = (w_i - [i == pos]) / tau
        const double ds = gout[0] * inv_count * (weights[j][i] - (i == pos ? 1.0 : 0.0)) / tau;
        if (ds == 0.0) continue;
        for (std::size_t k = 0; k < P; ++k) {
          gu[a * P + k] += ds * uv[i * P + k];
          gu[i * P + k] += ds * uv[a * P + k];
        }
      }
    }
  };
  return OpBuilder::make({}, {total}, {unit}, backward);
}

Tensor spatial_gradient_penalty(const Tensor& mu) {
  if (mu.rank() != 5) throw DimensionError("spatial_gradient_penalty: expected [N,C,D,H,W], got " + shape_str(mu.shape()));
  const std::size_t NC = mu.dim(0) * mu.dim(1);
  const std::size_t D = mu.dim(2), H = mu.dim(3), W = mu.dim(4);
  const std::size_t strides[3] = {H * W, W, 1};
  const std::size_t extents[3] = {D, H, W};
  // Calls fn(i, j) for each forward-difference pair (j = i + stride).
  auto for_each_pair = [=](auto&& fn) {
    for (std::size_t nc = 0; nc < NC; ++nc) {
      const std::size_t base = nc * D * H * W;
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            const std::size_t idx[3] = {d, h, w};
            const std::size_t i = base + (d * H + h) * W + w;
            for (int ax = 0; ax < 3; ++ax)
              if (idx[ax] + 1 < extents[ax]) fn(i, i + strides[ax]);
          }
    }
  };
  const auto v = mu.data();
  double total = 0.0;
  for_each_pair([&](std::size_t i, std::size_t j) { total += (v[j] - v[i]) * (v[j] - v[i]); });
  auto backward = [=](std::span<const double> gout, GradSpans& g) {
    const auto x = mu.data();
    for_each_pair([&](std::size_t i, std::size_t j) {
      const double diff = 2.0 * gout[0] * (x[j] - x[i]);
      g[0][j] += diff;
      g[0][i] -= diff;
    });
  };
  return OpBuilder::make({}, {total}, {mu}, backward);
}

LossBreakdown total_loss(const LossComponents& parts, const LossConfig& config) {
  config.validate();
  LossBreakdown out;
  std::vector<Tensor> terms;
  if (parts.recon.defined()) {
    out.recon = parts.recon.item();
    terms.push_back(parts.recon);
  }
  if (parts.smooth.defined()) {
    out.smooth = parts.smooth.item();
    terms.push_back(scale(parts.smooth, config.alpha));
  }
  if (parts.contrast.defined()) {
    out.contrast = parts.contrast.item();
    terms.push_back(scale(parts.contrast, config.beta));
  }
  if (parts.gradient.defined()) {
    out.gradient = parts.gradient.item();
    terms.push_back(scale(parts.gradient, config.gradient_weight));
  }
  if (terms.empty()) {
    out.total = Tensor::scalar(0.0);
    return out;
  }
  out.total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) out.total = add(out.total, terms[i]);
  return out;
}

}  // namespace clmorph
