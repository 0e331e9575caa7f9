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

#include <cmath>
#include <limits>

#include "doctest.h"
#include "sparse/tonemap.hpp"
#include "test_util.hpp"

using namespace sparse;
using sparse::test::random_image;
using sparse::test::uniform;

namespace {

// Toe and shoulder pieces evaluated directly, for one-sided checks.
double toe_piece(double x, double s) { return 0.5 * s * std::exp((x + 1.0 - s) / s); }
double toe_slope(double x, double s) { return 0.5 * std::exp((x + 1.0 - s) / s); }
double shoulder_piece(double x, double h) { return 1.0 - 0.5 * h * std::exp(-(x + h - 1.0) / h); }
double shoulder_slope(double x, double h) { return 0.5 * std::exp(-(x + h - 1.0) / h); }

double grid(int i) { return 0.05 + 0.05 * i; }  // 0.05 .. 0.95, 19 values

}  // namespace

TEST_CASE("log_augment") {
  const RadianceImage img = random_image<3, RadianceTag>(5, 4, 1, 0.01, 10.0);
  SUBCASE("identity parameters give log L") {
    const RgbField x = log_augment(img, {});
    for (std::size_t i = 0; i < img.values().size(); ++i)
      CHECK(x.values()[i] == doctest::Approx(std::log(img.values()[i])).epsilon(1e-14));
  }
  SUBCASE("beta does not affect gray pixels") {
    RadianceImage gray(3, 3, 0.7);
    TmoParams p;
    p.beta = 1.3;
    const RgbField x = log_augment(gray, p);
    for (double v : x.values()) CHECK(v == doctest::Approx(std::log(0.7)).epsilon(1e-14));
  }
  SUBCASE("k shifts by alpha * k") {
    TmoParams a, b;
    a.alpha = b.alpha = 1.2;
    b.k = 1.0;
    const RgbField xa = log_augment(img, a), xb = log_augment(img, b);
    for (std::size_t i = 0; i < xa.values().size(); ++i)
      CHECK(xb.values()[i] - xa.values()[i] == doctest::Approx(1.2).epsilon(1e-12));
  }
  SUBCASE("zero radiance is clamped") {
    const RgbField x = log_augment(RadianceImage(1, 1, 0.0), {});
    CHECK(x.values()[0] == doctest::Approx(std::log(1e-8)));
  }
}

TEST_CASE("filmic curve") {
  CHECK(filmic(0.0, 0.5, 0.5) == 0.5);
  CHECK(filmic_derivative(0.1, 0.5, 0.5) == 0.5);
  for (int i = 0; i < 19; ++i) {
    for (int j = 0; j < 19; ++j) {
      const double s = grid(i), h = grid(j);
      CAPTURE(s);
      CAPTURE(h);
      const double b0 = s - 1.0, b1 = 1.0 - h;
      // Continuity and C1 at both breakpoints.
      CHECK(std::abs(toe_piece(b0, s) - (1.0 + b0) / 2.0) < 1e-12);
      CHECK(std::abs(filmic(b0, s, h) - s / 2.0) < 1e-12);
      CHECK(std::abs(toe_slope(b0, s) - 0.5) < 1e-12);
      CHECK(std::abs(shoulder_piece(b1, h) - (1.0 + b1) / 2.0) < 1e-12);
      CHECK(std::abs(filmic(b1, s, h) - (1.0 - h / 2.0)) < 1e-12);
      CHECK(std::abs(shoulder_slope(b1, h) - 0.5) < 1e-12);
      CHECK(std::abs(filmic(std::nextafter(b0, -1e9), s, h) - filmic(b0, s, h)) < 1e-12);
      CHECK(std::abs(filmic(std::nextafter(b1, -1e9), s, h) - filmic(b1, s, h)) < 1e-12);
      CHECK(std::abs(filmic_derivative(std::nextafter(b0, -1e9), s, h) -
                     filmic_derivative(b0, s, h)) < 1e-12);
      CHECK(std::abs(filmic_derivative(std::nextafter(b1, -1e9), s, h) -
                     filmic_derivative(b1, s, h)) < 1e-12);
      // Range, monotonicity, derivative bounds and FD agreement, from three
      // e-folds into the toe to three e-folds into the shoulder (beyond that
      // 1 - y drops below double resolution).
      double prev = -1.0;
      const double lo = b0 - 3.0 * s, hi = b1 + 3.0 * h;
      for (int k = 0; k <= 400; ++k) {
        const double x = lo + (hi - lo) * k / 400.0;
        const double y = filmic(x, s, h);
        const double d = filmic_derivative(x, s, h);
        CHECK(y > 0.0);
        CHECK(y < 1.0);
        CHECK(y > prev);
        prev = y;
        CHECK(d > 0.0);
        CHECK(d <= 0.5);
        if (std::abs(x - b0) > 1e-3 && std::abs(x - b1) > 1e-3) {
          const double e = 1e-5;
          const double fd = (filmic(x + e, s, h) - filmic(x - e, s, h)) / (2 * e);
          CHECK(std::abs(fd - d) / d < 1e-6);
        }
      }
    }
  }
  // Far tails: bounded, non-decreasing, derivative decays towards 0.
  double prev = 0.0;
  for (int k = 0; k <= 1000; ++k) {
    const double y = filmic(-50.0 + 0.1 * k, 0.3, 0.2);
    CHECK(y >= prev);
    CHECK(y <= 1.0);
    prev = y;
  }
  CHECK(filmic_derivative(-200.0, 0.5, 0.5) > 0.0);
  CHECK(filmic_derivative(-200.0, 0.5, 0.5) < 1e-100);
}

TEST_CASE("filmic shape derivatives") {
  for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    const double s = 0.35, h = 0.6, e = 1e-6;
    const FilmicShapeDerivative d = filmic_shape_derivative(x, s, h);
    CHECK(d.toe == doctest::Approx((filmic(x, s + e, h) - filmic(x, s - e, h)) / (2 * e)).epsilon(1e-6));
    CHECK(d.shoulder ==
          doctest::Approx((filmic(x, s, h + e) - filmic(x, s, h - e)) / (2 * e)).epsilon(1e-6));
  }
}

TEST_CASE("sigmoid shape limit") {
  // Against the photographic operator L / (1 + L), i.e. sigmoid(x) in log space.
  auto deviation = [](double sh) {
    double worst = 0.0;
    for (int k = 0; k <= 2000; ++k) {
      const double x = -10.0 + 0.01 * k;
      worst = std::max(worst, std::abs(filmic(x, sh, sh) - 1.0 / (1.0 + std::exp(-x))));
    }
    return worst;
  };
  CHECK(deviation(0.99) < deviation(0.9));
  CHECK(deviation(0.9) < deviation(0.5));
}

TEST_CASE("sRGB encoding") {
  CHECK(srgb_encode(0.5) == doctest::Approx(0.735356983).epsilon(1e-8));
  CHECK(srgb_encode(0.0) == 0.0);
  CHECK(srgb_encode(1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(srgb_encode(0.002) == doctest::Approx(12.92 * 0.002));
  CHECK(srgb_encode(-1.0) == 0.0);
  CHECK(srgb_encode(2.0) == srgb_encode(1.0));
  for (double v : {0.001, 0.01, 0.2, 0.6, 0.95}) {
    const double e = 1e-7;
    CHECK(srgb_encode_derivative(v) ==
          doctest::Approx((srgb_encode(v + e) - srgb_encode(v - e)) / (2 * e)).epsilon(1e-6));
  }
}

TEST_CASE("tonemap") {
  SUBCASE("unit radiance with identity parameters") {
    const LdrImage out = tonemap(RadianceImage(2, 2, 1.0), {});
    for (double v : out.values()) CHECK(v == doctest::Approx(0.735356983).epsilon(1e-8));
  }
  SUBCASE("zero radiance maps near zero") {
    const LdrImage out = tonemap(RadianceImage(2, 2, 0.0), {});
    for (double v : out.values()) CHECK(v < 1e-6);
  }
  SUBCASE("monotone with beta = 1") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      TmoParams p = sample_tmo(seed);
      p.beta = 1.0;
      const RadianceImage a = random_image<3, RadianceTag>(6, 6, seed, 0.0, 5.0);
      RadianceImage b = a;
      for (std::size_t i = 0; i < b.values().size(); ++i) b.values()[i] += uniform(seed + 50, i, 0.0, 1.0);
      const LdrImage ta = tonemap(a, p), tb = tonemap(b, p);
      for (std::size_t i = 0; i < ta.values().size(); ++i) CHECK(ta.values()[i] <= tb.values()[i]);
    }
  }
  SUBCASE("output stays in [0,1] and is valid LDR") {
    const RadianceImage img = random_image<3, RadianceTag>(8, 8, 3, 0.0, 1e4);
    CHECK(is_valid_ldr(tonemap(img, sample_tmo(3))));
  }
  SUBCASE("invalid parameters") {
    TmoParams p;
    p.toe = 1.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = TmoParams{};
    p.alpha = 0.0;
    CHECK_THROWS_AS(tonemap(RadianceImage(1, 1), p), std::invalid_argument);
  }
}

TEST_CASE("tonemap_backward") {
  SUBCASE("zero upstream") {
    const RadianceImage img = random_image<3, RadianceTag>(4, 4, 2, 0.1, 3.0);
    const TonemapGradient g = tonemap_backward(img, sample_tmo(4), RgbField(4, 4, 0.0));
    for (double v : g.radiance.values()) CHECK(v == 0.0);
    CHECK(g.params.k == 0.0);
    CHECK(g.params.alpha == 0.0);
  }
  SUBCASE("matches log-domain finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const TmoParams p = sample_tmo(seed + 100);
      const RadianceImage img = random_image<3, RadianceTag>(5, 4, seed, 0.02, 8.0);
      const RgbField up = random_image<3, GenericTag>(5, 4, seed + 7, -1.0, 1.0);
      const TonemapGradient g = tonemap_backward(img, p, up);
      auto objective = [&](const RadianceImage& l, const TmoParams& q) {
        const LdrImage t = tonemap(l, q);
        double acc = 0.0;
        for (std::size_t i = 0; i < t.values().size(); ++i) acc += t.values()[i] * up.values()[i];
        return acc;
      };
      // Only pixel i / 3 changes, so difference just its channels.
      auto pixel_objective = [&](const RadianceImage& l, std::size_t px) {
        RadianceImage one(1, 1);
        for (int c = 0; c < 3; ++c) one.pixel(0)[c] = l.pixel(px)[c];
        const LdrImage t = tonemap(one, p);
        double acc = 0.0;
        for (int c = 0; c < 3; ++c) acc += t.pixel(0)[c] * up.pixel(px)[c];
        return acc;
      };
      const double eps = 1e-4;
      // Deep in the toe or shoulder the gradient falls below FD resolution
      // (about 1e-12 at this step); compare against a small absolute floor.
      double scale = 0.0;
      for (std::size_t i = 0; i < img.values().size(); ++i)
        scale = std::max(scale, std::abs(img.values()[i] * g.radiance.values()[i]));
      for (std::size_t i = 0; i < img.values().size(); ++i) {
        RadianceImage a = img, b = img;
        const double l = img.values()[i];
        a.values()[i] = l * std::exp(eps);
        b.values()[i] = l * std::exp(-eps);
        // d/d(log L) = L * d/dL.
        const double fd = (pixel_objective(a, i / 3) - pixel_objective(b, i / 3)) / (2 * eps);
        const double an = l * g.radiance.values()[i];
        CAPTURE(an);
        CAPTURE(fd);
        CHECK(sparse::test::rel_err(an, fd, std::max(1e-6 * scale, 1e-7)) < 1e-4);
      }
      const double e = 1e-6;
      auto pfd = [&](double TmoParams::*field) {
        TmoParams a = p, b = p;
        a.*field += e;
        b.*field -= e;
        return (objective(img, a) - objective(img, b)) / (2 * e);
      };
      CHECK(sparse::test::rel_err(g.params.k, pfd(&TmoParams::k), 1e-8) < 1e-4);
      CHECK(sparse::test::rel_err(g.params.alpha, pfd(&TmoParams::alpha), 1e-8) < 1e-4);
      CHECK(sparse::test::rel_err(g.params.beta, pfd(&TmoParams::beta), 1e-8) < 1e-4);
      CHECK(sparse::test::rel_err(g.params.toe, pfd(&TmoParams::toe), 1e-8) < 1e-4);
      CHECK(sparse::test::rel_err(g.params.shoulder, pfd(&TmoParams::shoulder), 1e-8) < 1e-4);
    }
  }
  SUBCASE("clamped channels get no gradient") {
    RadianceImage img(1, 1, 0.5);
    img.at(0, 0, 1) = 0.0;
    const TonemapGradient g = tonemap_backward(img, {}, RgbField(1, 1, 1.0));
    CHECK(g.radiance.at(0, 0, 1) == 0.0);
    CHECK(g.radiance.at(0, 0, 0) > 0.0);
  }
}

TEST_CASE("sample_tmo") {
  CHECK(sample_tmo(11).alpha == sample_tmo(11).alpha);
  CHECK(sample_tmo(11).k != sample_tmo(12).k);
  const int n = 10000;
  double mk = 0, ma = 0, mb = 0, ms = 0, mh = 0;
  for (int i = 0; i < n; ++i) {
    const TmoParams p = sample_tmo(static_cast<std::uint64_t>(i));
    CHECK(p.k >= -2.0);
    CHECK(p.k <= 2.0);
    CHECK(p.alpha >= 0.7);
    CHECK(p.alpha <= 1.4);
    CHECK(p.beta >= 0.7);
    CHECK(p.beta <= 1.3);
    CHECK(p.toe >= 0.1);
    CHECK(p.toe <= 0.9);
    CHECK(p.shoulder >= 0.1);
    CHECK(p.shoulder <= 0.9);
    mk += p.k / n;
    ma += p.alpha / n;
    mb += p.beta / n;
    ms += p.toe / n;
    mh += p.shoulder / n;
  }
  // Within 2% of each range's width around its midpoint (k's midpoint is 0).
  CHECK(std::abs(mk) < 0.02 * 4.0);
  CHECK(std::abs(ma - 1.05) < 0.02 * 1.05);
  CHECK(std::abs(mb - 1.0) < 0.02);
  CHECK(std::abs(ms - 0.5) < 0.02 * 0.5);
  CHECK(std::abs(mh - 0.5) < 0.02 * 0.5);
}
