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

#include "sparse/tonemap.hpp"

#include <cmath>
#include <algorithm>
#include <stdexcept>
#include <vector>

#include "sparse/parallel.hpp"
#include "sparse/rng.hpp"

namespace sparse {

void TmoParams::validate() const {
  if (!std::isfinite(k)) throw std::invalid_argument("tmo: k must be finite");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("tmo: alpha must be > 0");
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("tmo: beta must be > 0");
  }
  if (!(toe > 0.0 && toe < 1.0)) {
    throw std::invalid_argument("tmo: toe must lie in (0,1)");
  }
  if (!(shoulder > 0.0 && shoulder < 1.0)) {
    throw std::invalid_argument("tmo: shoulder must lie in (0,1)");
  }
}

namespace {

struct LogPixel {
  double c[3];
  double m;
  double x[3];
};

inline LogPixel log_pixel(std::span<const double, 3> l, const TmoParams& p) {
  LogPixel out{};
  for (int i = 0; i < 3; ++i) out.c[i] = std::log(std::max(l[i], kLogFloor));
  out.m = (out.c[0] + out.c[1] + out.c[2]) / 3.0;
  for (int i = 0; i < 3; ++i) {
    out.x[i] = p.alpha * (out.m + p.beta * (out.c[i] - out.m) + p.k);
  }
  return out;
}

}  // namespace

RgbField log_augment(const RadianceImage& radiance, const TmoParams& p) {
  RgbField out(radiance.width(), radiance.height());
  parallel_for(static_cast<std::ptrdiff_t>(radiance.pixel_count()),
               [&](std::ptrdiff_t i) {
                 const LogPixel lp = log_pixel(radiance.pixel(i), p);
                 auto o = out.pixel(i);
                 for (int c = 0; c < 3; ++c) o[c] = lp.x[c];
               });
  return out;
}

double filmic(double x, double s, double h) noexcept {
  if (x < s - 1.0) return 0.5 * s * std::exp((x + 1.0 - s) / s);
  if (x < 1.0 - h) return 0.5 * (1.0 + x);
  return 1.0 - 0.5 * h * std::exp(-(x + h - 1.0) / h);
}

double filmic_derivative(double x, double s, double h) noexcept {
  if (x < s - 1.0) return 0.5 * std::exp((x + 1.0 - s) / s);
  if (x < 1.0 - h) return 0.5;
  return 0.5 * std::exp(-(x + h - 1.0) / h);
}

FilmicShapeDerivative filmic_shape_derivative(double x, double s,
                                              double h) noexcept {
  FilmicShapeDerivative d;
  if (x < s - 1.0) {
    const double e = std::exp((x + 1.0 - s) / s);
    d.toe = 0.5 * e * (1.0 - (x + 1.0) / s);
  } else if (x >= 1.0 - h) {
    const double e = std::exp(-(x + h - 1.0) / h);
    d.shoulder = -0.5 * e * (1.0 - (1.0 - x) / h);
  }
  return d;
}

double srgb_encode(double v) noexcept {
  v = std::clamp(v, 0.0, 1.0);
  if (v <= 0.0031308) return 12.92 * v;
  return 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double srgb_encode_derivative(double v) noexcept {
  if (v < 0.0 || v > 1.0) return 0.0;
  if (v <= 0.0031308) return 12.92;
  return 1.055 / 2.4 * std::pow(v, 1.0 / 2.4 - 1.0);
}

LdrImage tonemap(const RadianceImage& radiance, const TmoParams& p) {
  p.validate();
  LdrImage out(radiance.width(), radiance.height());
  parallel_for(static_cast<std::ptrdiff_t>(radiance.pixel_count()),
               [&](std::ptrdiff_t i) {
                 const LogPixel lp = log_pixel(radiance.pixel(i), p);
                 auto o = out.pixel(i);
                 for (int c = 0; c < 3; ++c) {
                   o[c] = srgb_encode(filmic(lp.x[c], p.toe, p.shoulder));
                 }
               });
  return out;
}

TonemapGradient tonemap_backward(const RadianceImage& radiance,
                                 const TmoParams& p, const RgbField& upstream) {
  p.validate();
  require_same_shape(radiance, upstream, "tonemap_backward");
  TonemapGradient g;
  g.radiance = RgbField(radiance.width(), radiance.height());
  const std::size_t n = radiance.pixel_count();
  // Per-pixel parameter partials, reduced serially for a fixed summation order.
  std::vector<double> partial(n * 5, 0.0);
  parallel_for(static_cast<std::ptrdiff_t>(n), [&](std::ptrdiff_t pi) {
    const std::size_t i = static_cast<std::size_t>(pi);
    const auto l = radiance.pixel(i);
    const auto up = upstream.pixel(i);
    const LogPixel lp = log_pixel(l, p);
    double gx[3];
    double* pp = partial.data() + i * 5;
    for (int c = 0; c < 3; ++c) {
      const double t = filmic(lp.x[c], p.toe, p.shoulder);
      const double ds = srgb_encode_derivative(t) * up[c];
      gx[c] = ds * filmic_derivative(lp.x[c], p.toe, p.shoulder);
      const FilmicShapeDerivative sd =
          filmic_shape_derivative(lp.x[c], p.toe, p.shoulder);
      pp[3] += ds * sd.toe;
      pp[4] += ds * sd.shoulder;
      pp[0] += gx[c] * p.alpha;
      pp[1] += gx[c] * (lp.m + p.beta * (lp.c[c] - lp.m) + p.k);
      pp[2] += gx[c] * p.alpha * (lp.c[c] - lp.m);
    }
    // dx_c/dc_j = alpha * (beta * [c == j] + (1 - beta) / 3).
    const double sum = gx[0] + gx[1] + gx[2];
    auto out = g.radiance.pixel(i);
    for (int j = 0; j < 3; ++j) {
      const double gc = p.alpha * (p.beta * gx[j] + (1.0 - p.beta) / 3.0 * sum);
      out[j] = l[j] > kLogFloor ? gc / l[j] : 0.0;
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    const double* pp = partial.data() + i * 5;
    g.params.k += pp[0];
    g.params.alpha += pp[1];
    g.params.beta += pp[2];
    g.params.toe += pp[3];
    g.params.shoulder += pp[4];
  }
  return g;
}

TmoParams sample_tmo(std::uint64_t seed) {
  auto draw = [&](std::uint64_t label, double lo, double hi) {
    const double u = pixel_uniform({seed, 0, 0, 0, streams::kTmo * 16 + label});
    return lo + (hi - lo) * u;
  };
  TmoParams p;
  p.k = draw(0, -2.0, 2.0);
  p.alpha = draw(1, 0.7, 1.4);
  p.beta = draw(2, 0.7, 1.3);
  p.toe = draw(3, 0.1, 0.9);
  p.shoulder = draw(4, 0.1, 0.9);
  return p;
}

}  // namespace sparse
