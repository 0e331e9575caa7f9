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

#include "sparse/image.hpp"

namespace sparse {

/// Parameters of the differentiable tone mapper. `toe` and `shoulder` are
/// the filmic s and h; the shoulder is unrelated to the estimator ramp gain.
struct TmoParams {
  double k = 0.0;
  double alpha = 1.0;
  double beta = 1.0;
  double toe = 0.5;
  double shoulder = 0.5;

  void validate() const;
};

struct TmoParamGradient {
  double k = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double toe = 0.0;
  double shoulder = 0.0;
};

/// Radiance is clamped to this value before the logarithm.
inline constexpr double kLogFloor = 1e-8;

/// x = alpha * (m + beta * (c - m) + k), c = log(max(L, 1e-8)), m the
/// per-pixel channel mean of c.
RgbField log_augment(const RadianceImage& radiance, const TmoParams& p);

/// Exponential toe below s-1, line (1+x)/2 up to 1-h, exponential shoulder.
double filmic(double x, double toe, double shoulder) noexcept;
double filmic_derivative(double x, double toe, double shoulder) noexcept;

struct FilmicShapeDerivative {
  double toe = 0.0;
  double shoulder = 0.0;
};
FilmicShapeDerivative filmic_shape_derivative(double x, double toe,
                                              double shoulder) noexcept;

/// IEC 61966-2-1 OETF on [0,1].
double srgb_encode(double v) noexcept;
double srgb_encode_derivative(double v) noexcept;

LdrImage tonemap(const RadianceImage& radiance, const TmoParams& p);

struct TonemapGradient {
  RgbField radiance;
  TmoParamGradient params;
};

/// Gradient of sum(upstream * tonemap(L, p)) with respect to L and p.
/// Channels clamped by the log floor receive zero radiance gradient.
TonemapGradient tonemap_backward(const RadianceImage& radiance,
                                 const TmoParams& p, const RgbField& upstream);

/// Uniform draws: k in [-2,2], alpha in [0.7,1.4], beta in [0.7,1.3],
/// toe and shoulder in [0.1,0.9].
TmoParams sample_tmo(std::uint64_t seed);

}  // namespace sparse
