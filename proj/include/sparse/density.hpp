// Copyright 2026 The Sparse Sampler Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <vector>

#include "sparse/image.hpp"

namespace sparse {

/// Per-pixel continuous samples-per-pixel. A map produced by
/// normalize_density() sums to budget * W * H and never drops below
/// budget / 8; maps perturbed for finite differences need not.
struct DensityMap {
  ScalarField spp;
  double budget = 0.0;

  int width() const noexcept { return spp.width(); }
  int height() const noexcept { return spp.height(); }
};

/// Fraction of the budget spread uniformly before the adaptive part.
inline constexpr double kUniformBudgetShare = 1.0 / 8.0;

/// s_i = budget/8 + (7/8) * budget * N * softmax(scores)_i, with the softmax
/// taken over the whole frame. +inf scores act as the dominant limit and
/// share the adaptive budget equally; NaN is rejected.
DensityMap normalize_density(const ScalarField& scores, double budget);

/// Pulls dL/ds back to dL/dscores.
ScalarField normalize_density_backward(const DensityMap& density,
                                       const ScalarField& grad_spp);

/// Separable Gaussian blur, taps truncated at 3 sigma, clamp-to-edge.
/// sigma <= 0 returns the input unchanged.
ScalarField gaussian_blur(const ScalarField& field, double sigma);

/// Adjoint of gaussian_blur: <blur(a), b> == <a, blur_adjoint(b)>.
ScalarField gaussian_blur_adjoint(const ScalarField& field, double sigma);

/// Relative error of sum(s) against budget * W * H.
double budget_error(const DensityMap& density);

/// Void-and-cluster rank mask: thresholding rank < k selects exactly k texels
/// whose arrangement has a blue-noise spectrum.
struct DitherMask {
  int tile = 0;
  std::vector<std::uint32_t> rank;  // tile * tile entries, row-major

  std::uint32_t at(int x, int y) const noexcept {
    return rank[static_cast<std::size_t>(y) * tile + x];
  }
};

/// Gaussian energy width used by void_cluster_mask, in texels.
inline constexpr double kVoidClusterSigma = 1.5;

/// T must be 16, 32, 64 or 128.
DitherMask void_cluster_mask(int tile, std::uint64_t seed);

/// Toroidal offset of the mask for a given frame. Any tile * tile consecutive
/// frames cover every offset exactly once.
struct MaskShift {
  int dx = 0;
  int dy = 0;
};
MaskShift mask_shift(int tile, std::uint64_t frame) noexcept;

enum class AllocationMode { kStochastic, kDithered };

/// Which side of the unit interval takes the extra sample.
enum class TakeRule {
  /// u < p (stochastic rounding).
  kBelowFraction,
  /// u >= 1 - p (ramp-based estimators; no sample when u < 1 - p).
  kAboveComplement,
};

struct AllocationRequest {
  AllocationMode mode = AllocationMode::kStochastic;
  const DitherMask* mask = nullptr;
  std::uint64_t frame = 0;
  std::uint64_t seed = 0;
  TakeRule rule = TakeRule::kBelowFraction;
};

struct SampleAllocation {
  int width = 0;
  int height = 0;
  std::vector<int> base;          // floor(s_i)
  std::vector<double> fraction;   // p_i = s_i - floor(s_i)
  std::vector<double> variate;    // u_i in [0,1)
  std::vector<std::uint8_t> holdout;

  std::size_t pixel_count() const noexcept { return base.size(); }
  /// Sum of base counts plus holdouts.
  std::size_t total_samples() const noexcept;
};

bool takes_holdout(TakeRule rule, double u, double p) noexcept;

SampleAllocation allocate(const DensityMap& density,
                          const AllocationRequest& request);

}  // namespace sparse
