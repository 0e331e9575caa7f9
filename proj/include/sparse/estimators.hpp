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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sparse/density.hpp"
#include "sparse/image.hpp"
#include "sparse/sample_bank.hpp"

namespace sparse {

enum class EstimatorVariant {
  kDeterministic,
  kStochasticExact,
  kRelaxed,
  kStraightThrough,
  kGumbelBinary,
};

const char* to_string(EstimatorVariant v) noexcept;
/// Accepts deterministic, stochastic-exact, relaxed, straight-through,
/// gumbel-binary.
EstimatorVariant parse_estimator_variant(const std::string& name);

struct EstimatorConfig {
  EstimatorVariant variant = EstimatorVariant::kRelaxed;
  /// Ramp temperature, >= 1.
  double lambda = 10.0;
  /// Gumbel-softmax (binary concrete) temperature, > 0.
  double gumbel_temp = 0.5;
  /// Floor for the 1/s normalization.
  double epsilon_s = 1e-8;
  /// Evaluation forward: hard take/skip decisions, no gradient.
  bool eval_mode = false;

  /// Take rule matching the variant's forward pass.
  TakeRule take_rule() const noexcept;
  void validate() const;
};

/// Soft gates below this value skip the holdout sample.
inline constexpr double kGumbelGateFloor = 1e-4;

struct EstimatorResult {
  RadianceImage noisy;
  /// dL^noisy/ds per channel.
  RgbField grad_s;
  RadianceImage holdout_contrib;
  /// Bank samples the forward pass consumed per pixel.
  std::vector<int> samples_used;
};

/// h = 2 lambda / (2 lambda - 1).
double ramp_gain(double lambda) noexcept;

/// Clipped linear ramp clamp(lambda/p * (u + p - 1), 0, 1); 0 when p = 0.
double relaxed_ramp(double u, double p, double lambda) noexcept;

/// Closed form of the integral of relaxed_ramp over u in [0, 1].
double ramp_integral(double p, double lambda) noexcept;

/// Rounds half up; zero below 0.5. Gradient is the reference-based
/// surrogate, so `reference` is required.
EstimatorResult estimate_deterministic(const DensityMap& density,
                                       const SampleBank& bank,
                                       const RadianceImage& reference);

/// Hard stochastic rounding; the gradient treats the indicator as constant.
EstimatorResult estimate_stochastic(const DensityMap& density,
                                    const SampleAllocation& allocation,
                                    const SampleBank& bank,
                                    const EstimatorConfig& cfg);

/// Ramp-relaxed holdout with gain h; no sample is drawn when u <= 1 - p.
EstimatorResult estimate_relaxed(const DensityMap& density,
                                 const SampleAllocation& allocation,
                                 const SampleBank& bank,
                                 const EstimatorConfig& cfg);

/// Forward of estimate_stochastic; the indicator's derivative is taken as 1.
EstimatorResult estimate_straight_through(const DensityMap& density,
                                          const SampleAllocation& allocation,
                                          const SampleBank& bank,
                                          const EstimatorConfig& cfg);

/// Binary-concrete gate g = sigmoid((logit p + logit(1-u)) / temp).
EstimatorResult estimate_gumbel(const DensityMap& density,
                                const SampleAllocation& allocation,
                                const SampleBank& bank,
                                const EstimatorConfig& cfg);

/// Dispatches on cfg.variant. In eval mode every variant uses hard decisions
/// under its own take rule and returns a zero gradient.
EstimatorResult estimate(const DensityMap& density,
                         const SampleAllocation& allocation,
                         const SampleBank& bank, const EstimatorConfig& cfg,
                         const RadianceImage* reference);

/// Highest bank index any variant may read for this density (floor + 1).
int required_bank_samples(const DensityMap& density) noexcept;

/// A stochastic scalar objective of the density map. Each draw fixes all
/// random numbers, so repeated evaluations of one draw are common random
/// numbers.
class DensityObjective {
 public:
  class Draw {
   public:
    virtual ~Draw() = default;
    virtual double loss(const DensityMap& density) const = 0;
    /// Returns the loss and writes dL/ds into `grad`.
    virtual double loss_and_gradient(const DensityMap& density,
                                     ScalarField& grad) const = 0;
  };

  virtual ~DensityObjective() = default;
  virtual std::unique_ptr<Draw> draw(std::uint64_t seed) const = 0;
};

/// Seed of the k-th draw used by the Monte Carlo gradient routines.
std::uint64_t objective_seed(std::uint64_t base, std::uint64_t k) noexcept;

/// Mean over K draws of the backpropagated analytic gradient.
ScalarField expected_gradient_mc(const DensityObjective& objective,
                                 const DensityMap& density, int draws,
                                 std::uint64_t base_seed = 0);

struct FiniteDifferenceResult {
  ScalarField gradient;
  /// Pixels whose +eps and -eps evaluations agreed in every draw.
  std::size_t coincident = 0;
};

/// Central differences of the expected loss, sharing each draw between the
/// +eps and -eps evaluations.
FiniteDifferenceResult finite_difference_gradient(
    const DensityObjective& objective, const DensityMap& density, double eps,
    int draws, std::uint64_t base_seed = 0);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace sparse
