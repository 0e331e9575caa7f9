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

#include "sparse/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparse/rng.hpp"

namespace sparse {

DensityMap normalize_density(const ScalarField& scores, double budget) {
  if (!(budget > 0.0) || !std::isfinite(budget)) {
    throw std::invalid_argument("budget must be positive and finite");
  }
  const std::size_t n = scores.pixel_count();
  if (n == 0) throw std::invalid_argument("empty score map");
  const auto z = scores.values();

  std::size_t dominant = 0;
  double zmax = -std::numeric_limits<double>::infinity();
  for (double v : z) {
    if (std::isnan(v)) throw std::invalid_argument("non-finite scores (NaN)");
    if (v == std::numeric_limits<double>::infinity()) ++dominant;
    zmax = std::max(zmax, v);
  }
  if (zmax == -std::numeric_limits<double>::infinity()) {
    throw std::invalid_argument("non-finite scores (all -inf)");
  }

  std::vector<double> weight(n);
  if (dominant > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      weight[i] = std::isinf(z[i]) && z[i] > 0 ? 1.0 / dominant : 0.0;
    }
  } else {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      weight[i] = std::exp(z[i] - zmax);
      total += weight[i];
    }
    for (double& w : weight) w /= total;
  }

  DensityMap out{ScalarField(scores.width(), scores.height()), budget};
  const double floor_spp = kUniformBudgetShare * budget;
  const double adaptive = (1.0 - kUniformBudgetShare) * budget *
                          static_cast<double>(n);
  auto s = out.spp.values();
  for (std::size_t i = 0; i < n; ++i) s[i] = floor_spp + adaptive * weight[i];
  return out;
}

ScalarField normalize_density_backward(const DensityMap& density,
                                       const ScalarField& grad_spp) {
  require_same_shape(density.spp, grad_spp, "normalize_density_backward");
  const std::size_t n = density.spp.pixel_count();
  const double floor_spp = kUniformBudgetShare * density.budget;
  const double adaptive = (1.0 - kUniformBudgetShare) * density.budget *
                          static_cast<double>(n);
  const auto s = density.spp.values();
  const auto g = grad_spp.values();
  std::vector<double> sigma(n);
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sigma[i] = (s[i] - floor_spp) / adaptive;
    dot += sigma[i] * g[i];
  }
  ScalarField out(density.spp.width(), density.spp.height());
  auto o = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    o[i] = adaptive * sigma[i] * (g[i] - dot);
  }
  return out;
}

namespace {

std::vector<double> gaussian_taps(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += taps[k + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// One separable pass along x (horizontal) or y. `adjoint` scatters instead of
// gathering, which transposes the clamp-to-edge operator.
ScalarField blur_pass(const ScalarField& in, const std::vector<double>& taps,
                      bool horizontal, bool adjoint) {
  const int w = in.width();
  const int h = in.height();
  const int radius = static_cast<int>(taps.size() / 2);
  ScalarField out(w, h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = -radius; k <= radius; ++k) {
        const int sx = horizontal ? std::clamp(x + k, 0, w - 1) : x;
        const int sy = horizontal ? y : std::clamp(y + k, 0, h - 1);
        const double t = taps[k + radius];
        if (adjoint) {
          out.at(sx, sy) += t * in.at(x, y);
        } else {
          out.at(x, y) += t * in.at(sx, sy);
        }
      }
    }
  }
  return out;
}

}  // namespace

ScalarField gaussian_blur(const ScalarField& field, double sigma) {
  if (!(sigma > 0.0)) return field;
  const auto taps = gaussian_taps(sigma);
  return blur_pass(blur_pass(field, taps, true, false), taps, false, false);
}

ScalarField gaussian_blur_adjoint(const ScalarField& field, double sigma) {
  if (!(sigma > 0.0)) return field;
  const auto taps = gaussian_taps(sigma);
  return blur_pass(blur_pass(field, taps, false, true), taps, true, true);
}

double budget_error(const DensityMap& density) {
  const auto s = density.spp.values();
  const double sum = std::accumulate(s.begin(), s.end(), 0.0);
  const double target =
      density.budget * static_cast<double>(density.spp.pixel_count());
  return std::abs(sum - target) / target;
}

namespace {

class EnergyField {
 public:
  explicit EnergyField(int tile) : tile_(tile) {
    const std::size_t n = static_cast<std::size_t>(tile) * tile;
    kernel_.resize(n);
    energy_.assign(n, 0.0);
    const double inv = 1.0 / (2.0 * kVoidClusterSigma * kVoidClusterSigma);
    for (int dy = 0; dy < tile; ++dy) {
      for (int dx = 0; dx < tile; ++dx) {
        const int wx = std::min(dx, tile - dx);
        const int wy = std::min(dy, tile - dy);
        kernel_[static_cast<std::size_t>(dy) * tile + dx] =
            std::exp(-(wx * wx + wy * wy) * inv);
      }
    }
  }

  void splat(std::size_t p, double sign) {
    const int px = static_cast<int>(p % tile_);
    const int py = static_cast<int>(p / tile_);
    for (int y = 0; y < tile_; ++y) {
      const int dy = (y - py + tile_) % tile_;
      const double* krow = kernel_.data() + static_cast<std::size_t>(dy) * tile_;
      double* erow = energy_.data() + static_cast<std::size_t>(y) * tile_;
      for (int x = 0; x < tile_; ++x) {
        const int dx = (x - px + tile_) % tile_;
        erow[x] += sign * krow[dx];
      }
    }
  }

  // Highest energy among set texels.
  std::size_t tightest_cluster(const std::vector<std::uint8_t>& on) const {
    std::size_t best = 0;
    double best_e = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < on.size(); ++i) {
      if (on[i] && energy_[i] > best_e) {
        best_e = energy_[i];
        best = i;
      }
    }
    return best;
  }

  // Lowest energy among empty texels.
  std::size_t largest_void(const std::vector<std::uint8_t>& on) const {
    std::size_t best = 0;
    double best_e = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < on.size(); ++i) {
      if (!on[i] && energy_[i] < best_e) {
        best_e = energy_[i];
        best = i;
      }
    }
    return best;
  }

 private:
  int tile_;
  std::vector<double> kernel_;
  std::vector<double> energy_;
};

}  // namespace

DitherMask void_cluster_mask(int tile, std::uint64_t seed) {
  if (tile != 16 && tile != 32 && tile != 64 && tile != 128) {
    throw std::invalid_argument("unsupported dither tile size " +
                                std::to_string(tile) +
                                " (expected 16, 32, 64 or 128)");
  }
  const std::size_t n = static_cast<std::size_t>(tile) * tile;
  const std::size_t initial_ones = n / 10;

  // Seeded Fisher-Yates picks the initial 10% pattern.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) {
    const double u = pixel_uniform(
        {seed, 0, static_cast<std::uint32_t>(i), 0, streams::kMaskInit});
    const auto j = static_cast<std::size_t>(u * static_cast<double>(i + 1));
    std::swap(order[i], order[std::min(j, i)]);
  }
  std::vector<std::uint8_t> pattern(n, 0);
  EnergyField energy(tile);
  for (std::size_t k = 0; k < initial_ones; ++k) {
    pattern[order[k]] = 1;
    energy.splat(order[k], 1.0);
  }

  // Relax: move the tightest cluster into the largest void until stable.
  for (std::size_t iter = 0; iter < 4 * n; ++iter) {
    const std::size_t cluster = energy.tightest_cluster(pattern);
    pattern[cluster] = 0;
    energy.splat(cluster, -1.0);
    const std::size_t hole = energy.largest_void(pattern);
    pattern[hole] = 1;
    energy.splat(hole, 1.0);
    if (hole == cluster) break;
  }

  DitherMask mask{tile, std::vector<std::uint32_t>(n, 0)};

  // Ranks below the prototype count: remove tightest clusters.
  {
    std::vector<std::uint8_t> on = pattern;
    EnergyField e = energy;
    for (std::size_t ones = initial_ones; ones > 0; --ones) {
      const std::size_t cluster = e.tightest_cluster(on);
      mask.rank[cluster] = static_cast<std::uint32_t>(ones - 1);
      on[cluster] = 0;
      e.splat(cluster, -1.0);
    }
  }
  // Remaining ranks: fill the largest voids.
  {
    std::vector<std::uint8_t> on = pattern;
    EnergyField e = energy;
    for (std::size_t ones = initial_ones; ones < n; ++ones) {
      const std::size_t hole = e.largest_void(on);
      mask.rank[hole] = static_cast<std::uint32_t>(ones);
      on[hole] = 1;
      e.splat(hole, 1.0);
    }
  }
  return mask;
}

MaskShift mask_shift(int tile, std::uint64_t frame) noexcept {
  // Odd strides are coprime with power-of-two tiles. The extra frame / tile
  // term on y makes every tile * tile run of frames visit each offset once.
  const auto sx = static_cast<std::uint64_t>(0.7548776662466927 * tile) | 1u;
  const auto sy = static_cast<std::uint64_t>(0.5698402909980532 * tile) | 1u;
  const auto t = static_cast<std::uint64_t>(tile);
  return {static_cast<int>((frame * sx) % t),
          static_cast<int>((frame * sy + frame / t) % t)};
}

bool takes_holdout(TakeRule rule, double u, double p) noexcept {
  if (p <= 0.0) return false;
  return rule == TakeRule::kBelowFraction ? u < p : u >= 1.0 - p;
}

std::size_t SampleAllocation::total_samples() const noexcept {
  std::size_t total = 0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    total += static_cast<std::size_t>(base[i]) + holdout[i];
  }
  return total;
}

SampleAllocation allocate(const DensityMap& density,
                          const AllocationRequest& request) {
  if (request.mode == AllocationMode::kDithered && request.mask == nullptr) {
    throw std::invalid_argument("dithered allocation requires a dither mask");
  }
  const int w = density.width();
  const int h = density.height();
  const std::size_t n = density.spp.pixel_count();
  SampleAllocation out;
  out.width = w;
  out.height = h;
  out.base.resize(n);
  out.fraction.resize(n);
  out.variate.resize(n);
  out.holdout.resize(n);

  MaskShift shift;
  int tile = 0;
  double inv_area = 0.0;
  if (request.mode == AllocationMode::kDithered) {
    tile = request.mask->tile;
    shift = mask_shift(tile, request.frame);
    inv_area = 1.0 / (static_cast<double>(tile) * tile);
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = density.spp.index(x, y);
      const double s = density.spp.pixel(i)[0];
      if (!(s >= 0.0) || !std::isfinite(s)) {
        throw std::invalid_argument("density must be finite and >= 0");
      }
      const double fl = std::floor(s);
      out.base[i] = static_cast<int>(fl);
      out.fraction[i] = s - fl;
      if (request.mode == AllocationMode::kStochastic) {
        out.variate[i] = pixel_uniform(
            {request.seed, request.frame, static_cast<std::uint32_t>(x),
             static_cast<std::uint32_t>(y), streams::kAllocation});
      } else {
        const int mx = (x + shift.dx) % tile;
        const int my = (y + shift.dy) % tile;
        out.variate[i] = (request.mask->at(mx, my) + 0.5) * inv_area;
      }
      out.holdout[i] =
          takes_holdout(request.rule, out.variate[i], out.fraction[i]) ? 1 : 0;
    }
  }
  return out;
}

}  // namespace sparse
