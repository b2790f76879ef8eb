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

// Training objective:
//   total = recon + alpha * smooth + beta * contrast
// recon    = 1/(2 sigma2) * sum (y - x o phi_z)^2
// smooth   = 1/2 * sum (sigma^2 + mu^2 - log sigma^2)   (no -1 constant)
// contrast = mean over anchors of -log( e^{s(a,p)/tau} / sum_{i != a} e^{s(a,i)/tau} )
// Sums run over every voxel and displacement component.

#include <span>
#include <vector>

#include "clmorph/network.hpp"
#include "clmorph/rng.hpp"
#include "clmorph/tensor.hpp"

namespace clmorph {

struct LossConfig {
  double alpha = 1.0;
  double beta = 0.01;
  double sigma2 = 1.0;
  double tau = 0.1;
  // Also score each pair with the positive as anchor.
  bool symmetric = false;
  // Optional squared finite-difference penalty on mu; 0 disables it.
  double gradient_weight = 0.0;

  void validate() const;
};

struct LossToggles {
  bool recon = true;
  bool smooth = true;
  bool contrast = true;
};

Tensor recon_loss(const Tensor& reference, const Tensor& warped, double sigma2);

Tensor kl_smooth_loss(const ProbabilisticField& field);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

// Sample estimate of KL(q || N(0, I)) with q = N(mu, exp(logvar)).
MonteCarloEstimate kl_monte_carlo(const ProbabilisticField& field, std::size_t samples, Rng& rng);

struct PositivePair {
  std::size_t anchor = 0;
  std::size_t positive = 0;
};

// projections [n,P]; cosine similarity is taken on the rows as given.
Tensor contrastive_loss(const Tensor& projections, std::span<const PositivePair> pairs, double tau,
                        bool symmetric = false);

// sum over axes of (mu[i+1] - mu[i])^2 for a [N,3,D,H,W] field.
Tensor spatial_gradient_penalty(const Tensor& mu);

// Per-term inputs; an undefined tensor means the term is disabled.
struct LossComponents {
  Tensor recon;
  Tensor smooth;
  Tensor contrast;
  Tensor gradient;
};

struct LossBreakdown {
  Tensor total;
  double recon = 0.0;
  double smooth = 0.0;
  double contrast = 0.0;
  double gradient = 0.0;
};

LossBreakdown total_loss(const LossComponents& parts, const LossConfig& config);

}  // namespace clmorph
