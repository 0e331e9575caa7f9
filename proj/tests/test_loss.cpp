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
#include "sparse/loss.hpp"
#include "test_util.hpp"

using namespace sparse;
using sparse::test::random_image;
using sparse::test::uniform;

namespace {

double mean_of(const ScalarField& f) {
  double acc = 0.0;
  for (double v : f.values()) acc += v;
  return acc / static_cast<double>(f.pixel_count());
}

LossMap map_of(const ScalarField& f) { return {f, mean_of(f)}; }

}  // namespace

TEST_CASE("masks") {
  const LdrImage ref = random_image<3, LdrTag>(9, 7, 1, 0.0, 1.0);
  SUBCASE("uniform") {
    const MaskImage m = make_mask(MaskKind::kUniform, ref);
    for (double v : m.values()) CHECK(v == 1.0);
  }
  SUBCASE("gradmag on a constant image is all ones") {
    const MaskImage m = make_mask(MaskKind::kGradMag, LdrImage(5, 5, 0.3));
    for (double v : m.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("mean is one and textured pixels weigh less") {
    const MaskImage m = make_mask(MaskKind::kGradMag, ref);
    CHECK(mean_of(m) == doctest::Approx(1.0).epsilon(1e-6));
    for (double v : m.values()) CHECK(v > 0.0);
    LdrImage edge(8, 8, 0.0);
    for (int y = 0; y < 8; ++y)
      for (int x = 4; x < 8; ++x)
        for (int c = 0; c < 3; ++c) edge.at(x, y, c) = 1.0;
    const MaskImage e = make_mask(MaskKind::kGradMag, edge);
    CHECK(e.at(0, 3) > e.at(4, 3));
    CHECK(e.at(0, 3) == doctest::Approx(e.at(7, 3)));
  }
  SUBCASE("names") {
    CHECK(parse_mask_kind("gradmag") == MaskKind::kGradMag);
    CHECK(parse_mask_kind(to_string(MaskKind::kUniform)) == MaskKind::kUniform);
    CHECK_THROWS_AS(parse_mask_kind("milo"), std::invalid_argument);
  }
}

TEST_CASE("spatial loss") {
  const LdrImage ref = random_image<3, LdrTag>(6, 5, 2, 0.2, 0.8);
  const MaskImage ones = make_mask(MaskKind::kUniform, ref);
  CHECK(spatial_loss(ref, ref, ones).value == 0.0);
  LdrImage out = ref;
  for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] += (i % 2 ? 0.1 : -0.1);
  CHECK(spatial_loss(out, ref, ones).value == doctest::Approx(0.1).epsilon(1e-12));
  MaskImage m = ones;
  m.at(2, 3) = 2.0;
  const LossMap a = spatial_loss(out, ref, ones), b = spatial_loss(out, ref, m);
  CHECK(b.per_pixel.at(2, 3) == doctest::Approx(2.0 * a.per_pixel.at(2, 3)));
  CHECK(b.per_pixel.at(1, 1) == a.per_pixel.at(1, 1));
  CHECK_THROWS_AS(spatial_loss(out, LdrImage(5, 5), ones), std::invalid_argument);
  SUBCASE("1-Lipschitz per pixel with a unit mask") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const LdrImage o1 = random_image<3, LdrTag>(6, 5, seed + 10, 0.0, 1.0);
      const LdrImage o2 = random_image<3, LdrTag>(6, 5, seed + 40, 0.0, 1.0);
      const LossMap l1 = spatial_loss(o1, ref, ones), l2 = spatial_loss(o2, ref, ones);
      for (std::size_t i = 0; i < o1.pixel_count(); ++i) {
        double dist = 0.0;
        for (int c = 0; c < 3; ++c) dist += std::abs(o1.pixel(i)[c] - o2.pixel(i)[c]) / 3.0;
        CHECK(std::abs(l1.per_pixel.pixel(i)[0] - l2.per_pixel.pixel(i)[0]) <= dist + 1e-15);
      }
    }
  }
  SUBCASE("backward matches finite differences") {
    const MaskImage gm = make_mask(MaskKind::kGradMag, ref);
    const LdrImage o = random_image<3, LdrTag>(6, 5, 77, 0.0, 1.0);
    const RgbField g = spatial_loss_backward(o, ref, gm);
    for (std::size_t i = 0; i < o.values().size(); ++i) {
      LdrImage p = o, q = o;
      p.values()[i] += 1e-7;
      q.values()[i] -= 1e-7;
      const double fd = (spatial_loss(p, ref, gm).value - spatial_loss(q, ref, gm).value) / 2e-7;
      CHECK(g.values()[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("temporal loss") {
  const LdrImage ref = random_image<3, LdrTag>(5, 4, 3, 0.2, 0.8);
  CHECK(temporal_loss(ref, ref, ref, ref, nullptr).value == 0.0);
  LdrImage flicker = ref;
  for (double& v : flicker.values()) v += 0.05;
  CHECK(temporal_loss(flicker, ref, ref, ref, nullptr).value == doctest::Approx(0.05).epsilon(1e-12));
  // A static bias cancels.
  CHECK(temporal_loss(flicker, flicker, ref, ref, nullptr).value == doctest::Approx(0.0).epsilon(1e-12));
  SUBCASE("invalid pixels are excluded from the mean") {
    ScalarField valid(5, 4, 1.0);
    LdrImage out = ref;
    out.at(0, 0, 0) += 0.9;
    valid.at(0, 0) = 0.0;
    const LossMap l = temporal_loss(out, ref, ref, ref, &valid);
    CHECK(l.value == 0.0);
    CHECK(l.per_pixel.at(0, 0) == 0.0);
    out.at(1, 0, 0) += 0.3;
    CHECK(temporal_loss(out, ref, ref, ref, &valid).value == doctest::Approx(0.1 / 19.0));
  }
  SUBCASE("backward matches finite differences") {
    const LdrImage o = random_image<3, LdrTag>(5, 4, 4, 0.0, 1.0);
    const LdrImage op = random_image<3, LdrTag>(5, 4, 5, 0.0, 1.0);
    const LdrImage rp = random_image<3, LdrTag>(5, 4, 6, 0.0, 1.0);
    ScalarField valid(5, 4, 1.0);
    valid.at(2, 2) = 0.0;
    const TemporalLossGradient g = temporal_loss_backward(o, op, ref, rp, &valid);
    for (std::size_t i = 0; i < o.values().size(); ++i) {
      LdrImage p = o, q = o;
      p.values()[i] += 1e-7;
      q.values()[i] -= 1e-7;
      const double fd = (temporal_loss(p, op, ref, rp, &valid).value -
                         temporal_loss(q, op, ref, rp, &valid).value) / 2e-7;
      CHECK(g.out.values()[i] == doctest::Approx(fd).epsilon(1e-6));
      LdrImage pp = op, qq = op;
      pp.values()[i] += 1e-7;
      qq.values()[i] -= 1e-7;
      const double fd2 = (temporal_loss(o, pp, ref, rp, &valid).value -
                          temporal_loss(o, qq, ref, rp, &valid).value) / 2e-7;
      CHECK(g.out_prev.values()[i] == doctest::Approx(fd2).epsilon(1e-6));
    }
  }
}

TEST_CASE("combined loss") {
  ScalarField s(3, 1), t(3, 1);
  s.at(0, 0) = 0.3;
  t.at(0, 0) = 0.0;
  s.at(1, 0) = 0.0;
  t.at(1, 0) = 0.2;
  s.at(2, 0) = 0.3;
  t.at(2, 0) = 0.2;
  const CombinedLoss c = combined_loss(map_of(s), map_of(t));
  CHECK(c.loss.per_pixel.at(0, 0) == 0.3);
  CHECK(c.loss.per_pixel.at(1, 0) == doctest::Approx(0.25));
  CHECK(c.loss.per_pixel.at(2, 0) == 0.3);
  CHECK(c.loss.value == doctest::Approx((0.3 + 0.25 + 0.3) / 3.0));
  CHECK(c.temporal_selected[1] == 1);
  CHECK(c.temporal_selected[2] == 0);
  // Zero temporal gives the spatial loss back.
  const CombinedLoss z = combined_loss(map_of(s), map_of(ScalarField(3, 1, 0.0)));
  CHECK(z.loss.value == doctest::Approx(map_of(s).value));
  SUBCASE("pointwise max on random maps, with chain weights") {
    ScalarField a(10, 10), b(10, 10);
    for (std::size_t i = 0; i < 100; ++i) {
      a.pixel(i)[0] = uniform(1, i, 0, 1);
      b.pixel(i)[0] = uniform(2, i, 0, 1);
    }
    const CombinedLoss r = combined_loss(map_of(a), map_of(b));
    const CombinedLossWeights w = combined_loss_weights(r);
    for (std::size_t i = 0; i < 100; ++i) {
      CHECK(r.loss.per_pixel.pixel(i)[0] == std::max(1.25 * b.pixel(i)[0], a.pixel(i)[0]));
      CHECK(r.loss.per_pixel.pixel(i)[0] >= 0.0);
      const double ws = w.spatial.pixel(i)[0], wt = w.temporal.pixel(i)[0];
      if (r.temporal_selected[i]) {
        CHECK(ws == 0.0);
        CHECK(wt == doctest::Approx(1.25 / 100));
      } else {
        CHECK(ws == doctest::Approx(1.0 / 100));
        CHECK(wt == 0.0);
      }
    }
  }
  CHECK_THROWS_AS(combined_loss(map_of(s), map_of(ScalarField(2, 1))), std::invalid_argument);
}

TEST_CASE("metrics") {
  const LdrImage ref = random_image<3, LdrTag>(4, 4, 9, 0.2, 0.8);
  CHECK(mae(ref, ref) == 0.0);
  CHECK(psnr(ref, ref) == std::numeric_limits<double>::infinity());
  LdrImage out = ref;
  for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] += (i % 3 ? 0.1 : -0.1);
  CHECK(mae(out, ref) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(psnr(out, ref) == doctest::Approx(20.0).epsilon(1e-9));
  LdrImage black(4, 4, 0.0), half(4, 4, 0.5);
  CHECK(psnr(black, half) == doctest::Approx(6.0206).epsilon(1e-4));
  const ScalarField e = absolute_error_map(out, ref);
  for (double v : e.values()) CHECK(v == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("error vs density") {
  const LdrImage ref(8, 8, 0.5);
  LdrImage out = ref;
  for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] += 0.01 * static_cast<double>(i % 5);
  SUBCASE("uniform density occupies the ratio-1 bin only") {
    const auto t = error_vs_density(out, ref, ScalarField(8, 8, 0.25), 0.25, 12);
    REQUIRE(t.size() == 12);
    int occupied = 0;
    for (const DensityBin& b : t) {
      if (b.pixel_count == 0) {
        CHECK(b.mae == 0.0);
        continue;
      }
      ++occupied;
      CHECK(b.lo <= 1.0);
      CHECK(b.hi > 1.0);
      CHECK(b.pixel_count == 64);
      CHECK(b.mae == doctest::Approx(mae(out, ref)));
    }
    CHECK(occupied == 1);
  }
  SUBCASE("doubling the left half splits into two bins") {
    ScalarField d(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) d.at(x, y) = x < 4 ? 2.0 : 1.0;
    // Normalized to budget 1: ratios 4/3 and 2/3.
    for (double& v : d.values()) v /= 1.5;
    const auto t = error_vs_density(out, ref, d, 1.0, 12);
    int occupied = 0;
    for (const DensityBin& b : t) {
      if (b.pixel_count == 0) continue;
      ++occupied;
      CHECK(b.pixel_count == 32);
      const bool holds_low = b.lo <= 2.0 / 3.0 && b.hi > 2.0 / 3.0;
      const bool holds_high = b.lo <= 4.0 / 3.0 && b.hi > 4.0 / 3.0;
      CHECK((holds_low || holds_high));
    }
    CHECK(occupied == 2);
  }
  SUBCASE("bin layout") {
    CHECK(density_bin_index(1.0, 12) == 6);
    CHECK(density_bin_index(1e-6, 12) == 0);
    CHECK(density_bin_index(1e6, 12) == 11);
    CHECK(density_bin_index(0.0, 12) == 0);
    CHECK_THROWS_AS(error_vs_density(out, ref, ScalarField(8, 8, 1.0), 1.0, 1), std::invalid_argument);
  }
  SUBCASE("CSV schema") {
    const auto t = error_vs_density(out, ref, ScalarField(8, 8, 1.0), 1.0, 4);
    const std::string csv = density_table_csv(t);
    CHECK(csv.rfind("bin_lo,bin_hi,pixel_count,mae\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  }
}

TEST_CASE("paired density report") {
  // Adaptive run: high ratio on the left half, low on the right.
  ScalarField d(8, 8), ea(8, 8), eb(8, 8, 0.1);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      d.at(x, y) = x < 4 ? 1.75 : 0.25;
      ea.at(x, y) = x < 4 ? 0.04 : 0.11;
    }
  }
  const PairedDensityReport r = compare_error_by_density(ea, eb, d, 1.0, 12);
  CHECK(r.adaptive_mae == doctest::Approx(0.075));
  CHECK(r.baseline_mae == doctest::Approx(0.1));
  CHECK(r.relative_gain() == doctest::Approx(0.25));
  CHECK(r.low_ratio_increase == doctest::Approx(0.01));
  CHECK(r.low_ratio_pixels == 32);
  CHECK(r.high_ratio_decrease == doctest::Approx(0.06));
  CHECK(r.high_ratio_pixels == 32);
  CHECK(r.high_bins_improved);
  ScalarField worse = ea;
  for (int y = 0; y < 8; ++y) worse.at(0, y) = 0.5;
  CHECK_FALSE(compare_error_by_density(worse, eb, d, 1.0, 12).high_bins_improved);
  const std::string csv = paired_report_csv(r);
  CHECK(csv.find("relative_gain,0.25") != std::string::npos);
}
