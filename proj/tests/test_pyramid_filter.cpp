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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <utility>

#include "doctest.h"
#include "sparse/image_io.hpp"
#include "sparse/pyramid_filter.hpp"
#include "test_util.hpp"

using namespace sparse;
using sparse::test::random_image;
using sparse::test::uniform;

namespace {

KernelField random_logits(int w, int h, bool temporal, std::uint64_t seed,
                          double scale = 1.5) {
  KernelField kf = make_kernel_field(w, h, temporal);
  std::uint64_t k = 0;
  for (KernelLevel& lv : kf.levels) {
    for (double& v : lv.values) v = uniform(seed, k++, -scale, scale);
  }
  return kf;
}

// Logits that reproduce the input: level-0 centre tap dominates, every
// other group masked.
KernelField identity_logits(int w, int h, bool temporal) {
  const double ninf = -std::numeric_limits<double>::infinity();
  KernelField kf = make_kernel_field(w, h, temporal, ninf);
  for (KernelLevel& lv : kf.levels) {
    for (std::size_t i = 0; i < lv.pixel_count(); ++i) lv.pixel(i)[12] = 0.0;
  }
  return kf;
}

double dot(const RgbField& a, const RadianceImage& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

struct Instance {
  RadianceImage noisy;
  RadianceImage prev;
  DemodMap demod;
  KernelField logits;
  RgbField upstream;
};

Instance make_instance(int w, int h, std::uint64_t seed) {
  Instance in;
  in.noisy = random_image<3, RadianceTag>(w, h, seed * 7 + 1, 0.0, 2.0);
  in.prev = random_image<3, RadianceTag>(w, h, seed * 7 + 2, 0.0, 2.0);
  in.demod = random_image<3, DemodTag>(w, h, seed * 7 + 3, 0.2, 1.5);
  in.logits = random_logits(w, h, true, seed * 7 + 4);
  in.upstream = random_image<3, GenericTag>(w, h, seed * 7 + 5, -1.0, 1.0);
  return in;
}

double objective(const Instance& in) {
  const KernelField wts = normalize_kernels(in.logits);
  return dot(in.upstream, reconstruct(in.noisy, wts, &in.prev, &in.demod));
}

// |a - b| against max(|a|, |b|, floor), floor tied to the gradient scale.
struct ErrorTracker {
  double floor = 0.0;
  double worst = 0.0;
  void add(double analytic, double numeric) {
    const double d = std::max({std::abs(analytic), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic - numeric) / d);
  }
};

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

template <typename Values>
void check_fd(Instance& in, Values&& values, std::span<const double> analytic,
              double eps, ErrorTracker& err) {
  std::span<double> v = values(in);
  REQUIRE(v.size() == analytic.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x0 = v[i];
    v[i] = x0 + eps;
    const double up = objective(in);
    v[i] = x0 - eps;
    const double down = objective(in);
    v[i] = x0;
    err.add(analytic[i], (up - down) / (2 * eps));
  }
}

}  // namespace

TEST_CASE("build_pyramid averages true contributors") {
  SUBCASE("constant image stays constant") {
    RadianceImage img(13, 7, 0.75);
    const PyramidStack p = build_pyramid(img);
    for (int l = 0; l < kPyramidLevels; ++l) {
      const LevelDims d = level_dims(13, 7, l);
      CHECK(p.levels[l].width() == d.width);
      CHECK(p.levels[l].height() == d.height);
      for (double v : p.levels[l].values()) CHECK(v == doctest::Approx(0.75).epsilon(1e-15));
    }
  }
  SUBCASE("2x2 image") {
    RadianceImage img(2, 2);
    const double vals[4] = {1.0, 2.0, 3.0, 6.0};
    for (int i = 0; i < 4; ++i) img.pixel(i)[0] = vals[i];
    const PyramidStack p = build_pyramid(img);
    CHECK(p.levels[1].at(0, 0, 0) == doctest::Approx(3.0));
  }
  SUBCASE("4x4 level 2 equals brute-force mean") {
    const auto img = random_image<3, RadianceTag>(4, 4, 11, 0.0, 5.0);
    const PyramidStack p = build_pyramid(img);
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) s += img.at(x, y, c);
      CHECK(std::abs(p.levels[2].at(0, 0, c) - s / 16) < 1e-7);
    }
  }
  SUBCASE("level means are conserved for power-of-two sizes") {
    const auto img = random_image<3, RadianceTag>(32, 16, 12, 0.0, 3.0);
    const PyramidStack p = build_pyramid(img);
    auto mean = [](const RadianceImage& im) {
      double s = 0;
      for (double v : im.values()) s += v;
      return s / im.values().size();
    };
    const double m0 = mean(p.levels[0]);
    for (int l = 1; l < kPyramidLevels; ++l) {
      CHECK(std::abs(mean(p.levels[l]) - m0) / m0 < 1e-5);
    }
  }
  SUBCASE("odd sizes divide by the contributor count") {
    RadianceImage img(3, 1);
    img.at(0, 0, 0) = 1.0;
    img.at(1, 0, 0) = 3.0;
    img.at(2, 0, 0) = 8.0;
    const PyramidStack p = build_pyramid(img);
    CHECK(p.levels[1].width() == 2);
    CHECK(p.levels[1].at(0, 0, 0) == doctest::Approx(2.0));
    CHECK(p.levels[1].at(1, 0, 0) == doctest::Approx(8.0));
  }
}

TEST_CASE("normalize_kernels is a joint per-pixel softmax") {
  SUBCASE("zero logits give 1/54, 1/29 and 1/25") {
    const KernelField w = normalize_kernels(make_kernel_field(8, 8, true));
    CHECK(w.levels[0].stride == 54);
    CHECK(w.levels[1].stride == 29);
    CHECK(w.levels[4].stride == 25);
    CHECK(w.levels[0].values[0] == doctest::Approx(1.0 / 54));
    CHECK(w.levels[2].values[3] == doctest::Approx(1.0 / 29));
    CHECK(w.levels[4].values[7] == doctest::Approx(1.0 / 25));
    const KernelField nt = normalize_kernels(make_kernel_field(8, 8, false));
    CHECK(nt.levels[0].stride == 29);
  }
  SUBCASE("a dominant logit saturates") {
    KernelField kf = make_kernel_field(4, 4, true);
    kf.levels[0].pixel(5)[30] = 20.0;
    const KernelField w = normalize_kernels(kf);
    CHECK(w.levels[0].pixel(5)[30] > 0.9999);
    CHECK(w.levels[0].pixel(5)[0] < 1e-8);
  }
  SUBCASE("group sums equal one") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const KernelField w = normalize_kernels(random_logits(9, 7, true, seed, 30.0));
      CHECK(max_normalization_error(w) < 1e-6);
    }
  }
  SUBCASE("rejects NaN and all -inf groups") {
    KernelField kf = make_kernel_field(4, 4, false);
    kf.levels[1].values[3] = std::nan("");
    CHECK_THROWS_AS(normalize_kernels(kf), std::invalid_argument);
    KernelField masked = make_kernel_field(2, 2, false,
                                           -std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(normalize_kernels(masked), std::invalid_argument);
  }
}

TEST_CASE("gather5") {
  const auto img = random_image<3, RadianceTag>(9, 6, 21, 0.0, 4.0);
  SUBCASE("one-hot centre is the identity") {
    std::vector<double> w(img.pixel_count() * 25, 0.0);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) w[i * 25 + 12] = 1.0;
    const RadianceImage out = gather5(img, w);
    for (std::size_t i = 0; i < out.values().size(); ++i) {
      CHECK(out.values()[i] == img.values()[i]);
    }
  }
  SUBCASE("uniform weights keep a constant image") {
    RadianceImage c(9, 6, 0.4);
    std::vector<double> w(c.pixel_count() * 25, 1.0 / 25);
    const RadianceImage out = gather5(c, w);
    for (double v : out.values()) CHECK(v == doctest::Approx(0.4));
  }
  SUBCASE("clamp-to-edge tap at the corner") {
    std::vector<double> w(img.pixel_count() * 25, 0.0);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) w[i * 25 + 0] = 1.0;  // (-2,-2)
    const RadianceImage out = gather5(img, w);
    CHECK(out.at(0, 0, 1) == img.at(0, 0, 1));
    CHECK(out.at(3, 4, 2) == img.at(1, 2, 2));
  }
  SUBCASE("convex combination stays inside the neighbourhood") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto im = random_image<3, RadianceTag>(7, 7, seed + 100, 0.0, 1.0);
      std::vector<double> w(im.pixel_count() * 25);
      for (std::size_t i = 0; i < im.pixel_count(); ++i) {
        double s = 0;
        for (int k = 0; k < 25; ++k) s += (w[i * 25 + k] = uniform(seed + 200, i * 25 + k));
        for (int k = 0; k < 25; ++k) w[i * 25 + k] /= s;
      }
      const RadianceImage out = gather5(im, w);
      for (int y = 0; y < 7; ++y) {
        for (int x = 0; x < 7; ++x) {
          for (int c = 0; c < 3; ++c) {
            double lo = 1e9, hi = -1e9;
            for (int j = -2; j <= 2; ++j) {
              for (int i = -2; i <= 2; ++i) {
                const double v = im.at(std::clamp(x + i, 0, 6), std::clamp(y + j, 0, 6), c);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
              }
            }
            CHECK(out.at(x, y, c) >= lo - 1e-12);
            CHECK(out.at(x, y, c) <= hi + 1e-12);
          }
        }
      }
    }
  }
}

TEST_CASE("upsample2") {
  const auto coarse = random_image<3, RadianceTag>(4, 3, 31, 0.0, 1.0);
  SUBCASE("one-hot (0,0) is nearest neighbour") {
    std::vector<double> w(8 * 5 * 4, 0.0);
    for (int i = 0; i < 40; ++i) w[i * 4] = 1.0;
    const RadianceImage out = upsample2(coarse, 8, 5, w);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c) CHECK(out.at(x, y, c) == coarse.at(x / 2, y / 2, c));
  }
  SUBCASE("uniform weights on a constant image") {
    RadianceImage c(4, 3, 2.5);
    std::vector<double> w(8 * 6 * 4, 0.25);
    const RadianceImage out = upsample2(c, 8, 6, w);
    for (double v : out.values()) CHECK(v == doctest::Approx(2.5));
  }
  SUBCASE("random normalized weights stay within the parents") {
    std::vector<double> w(8 * 6 * 4);
    for (int i = 0; i < 48; ++i) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += (w[i * 4 + k] = uniform(32, i * 4 + k));
      for (int k = 0; k < 4; ++k) w[i * 4 + k] /= s;
    }
    const RadianceImage out = upsample2(coarse, 8, 6, w);
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 8; ++x) {
        for (int c = 0; c < 3; ++c) {
          double lo = 1e9, hi = -1e9;
          for (int j = 0; j < 2; ++j) {
            for (int i = 0; i < 2; ++i) {
              const double v = coarse.at(std::min((x + i) / 2, 3), std::min((y + j) / 2, 2), c);
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
          }
          CHECK(out.at(x, y, c) >= lo - 1e-12);
          CHECK(out.at(x, y, c) <= hi + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("reconstruct") {
  SUBCASE("identity configuration reproduces the input") {
    const auto noisy = random_image<3, RadianceTag>(12, 10, 41, 0.0, 3.0);
    const auto prev = random_image<3, RadianceTag>(12, 10, 42, 0.0, 3.0);
    const KernelField w = normalize_kernels(identity_logits(12, 10, true));
    const RadianceImage out = reconstruct(noisy, w, &prev, nullptr);
    for (std::size_t i = 0; i < out.values().size(); ++i) {
      CHECK(std::abs(out.values()[i] - noisy.values()[i]) <= 1e-6);
    }
  }
  SUBCASE("demodulation round trip is exact on the identity path") {
    const auto noisy = random_image<3, RadianceTag>(12, 10, 43, 0.0, 3.0);
    const auto demod = random_image<3, DemodTag>(12, 10, 44, 0.01, 2.0);
    const KernelField w = normalize_kernels(identity_logits(12, 10, false));
    const RadianceImage out = reconstruct(noisy, w, nullptr, &demod);
    for (std::size_t i = 0; i < out.values().size(); ++i) {
      CHECK(sparse::test::rel_err(out.values()[i], noisy.values()[i]) <= 1e-6);
    }
  }
  SUBCASE("constant input and history give a constant output") {
    RadianceImage c(9, 9, 1.7);
    const KernelField w = normalize_kernels(random_logits(9, 9, true, 45, 4.0));
    const RadianceImage out = reconstruct(c, w, &c, nullptr);
    for (double v : out.values()) {
      CHECK(v == doctest::Approx(1.7).epsilon(1e-12));
    }
  }
  SUBCASE("temporal kernels need history") {
    RadianceImage c(8, 8, 1.0);
    const KernelField w = normalize_kernels(make_kernel_field(8, 8, true));
    CHECK_THROWS_AS(reconstruct(c, w, nullptr, nullptr), std::invalid_argument);
    RadianceImage wrong(4, 4);
    CHECK_THROWS_AS(reconstruct(wrong, w, &c, nullptr), std::invalid_argument);
  }
  SUBCASE("convex hull over 100 random instances") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const int w = 5 + static_cast<int>(seed % 7);
      const int h = 4 + static_cast<int>(seed % 5);
      const auto noisy = random_image<3, RadianceTag>(w, h, seed * 3 + 500, 0.0, 10.0);
      const auto prev = random_image<3, RadianceTag>(w, h, seed * 3 + 501, 0.0, 10.0);
      const KernelField kw = normalize_kernels(random_logits(w, h, true, seed * 3 + 502, 5.0));
      const RadianceImage out = reconstruct(noisy, kw, &prev, nullptr);
      // The multi-level footprint at these sizes covers the whole frame, so
      // the bound is the union of both inputs' ranges.
      for (int c = 0; c < 3; ++c) {
        double lo = 1e9, hi = -1e9;
        for (std::size_t i = 0; i < noisy.pixel_count(); ++i) {
          lo = std::min({lo, noisy.pixel(i)[c], prev.pixel(i)[c]});
          hi = std::max({hi, noisy.pixel(i)[c], prev.pixel(i)[c]});
        }
        for (std::size_t i = 0; i < out.pixel_count(); ++i) {
          CHECK(out.pixel(i)[c] >= lo - 1e-9);
          CHECK(out.pixel(i)[c] <= hi + 1e-9);
        }
      }
    }
  }
  SUBCASE("demodulation preserves albedo texture") {
    const int w = 32, h = 32;
    RadianceImage albedo_img(w, h);
    DemodMap albedo(w, h);
    RadianceImage noisy(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double a = ((x / 4 + y / 4) % 2) ? 0.8 : 0.2;
        const double n = 1.0 + 0.3 * (uniform(46, y * w + x) - 0.5);
        for (int c = 0; c < 3; ++c) {
          albedo.at(x, y, c) = a;
          albedo_img.at(x, y, c) = a;
          noisy.at(x, y, c) = a * 0.9 * n;
        }
      }
    }
    const KernelField kw = normalize_kernels(make_kernel_field(w, h, false));
    const RadianceImage with = reconstruct(noisy, kw, nullptr, &albedo);
    const RadianceImage without = reconstruct(noisy, kw, nullptr, nullptr);
    auto corr = [&](const RadianceImage& o) {
      const auto a = albedo_img.values();
      const auto b = o.values();
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < a.size(); ++i) { ma += a[i]; mb += b[i]; }
      ma /= a.size();
      mb /= b.size();
      double sab = 0, saa = 0, sbb = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
      }
      return sab / std::sqrt(saa * sbb);
    };
    CHECK(corr(with) >= corr(without));
    CHECK(corr(with) > 0.9);
  }
}

TEST_CASE("reconstruct_backward matches finite differences") {
  const double eps = 1e-3;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Instance in = make_instance(8, 8, seed);
    FilterTape tape;
    const KernelField wts = normalize_kernels(in.logits);
    reconstruct(in.noisy, wts, &in.prev, &in.demod, &tape);
    const FilterGradients g = reconstruct_backward(tape, in.upstream);

    double scale = max_abs(g.demod.values());
    for (const KernelLevel& l : g.logits.levels) scale = std::max(scale, max_abs(l.values));
    ErrorTracker err{1e-6 * scale, 0.0};
    for (int l = 0; l < kPyramidLevels; ++l) {
      check_fd(in, [l](Instance& x) { return std::span<double>(x.logits.levels[l].values); },
               g.logits.levels[l].values, eps, err);
    }
    // 1/d curvature near d = 0.2 needs a smaller step for the central
    // difference to resolve 1e-3.
    check_fd(in, [](Instance& x) { return x.demod.values(); }, g.demod.values(), 1e-4, err);
    check_fd(in, [](Instance& x) { return x.noisy.values(); }, g.noisy.values(), eps, err);
    check_fd(in, [](Instance& x) { return x.prev.values(); }, g.prev.values(), eps, err);
    CHECK(err.worst < 1e-3);
  }
}

TEST_CASE("reconstruct_backward structure") {
  SUBCASE("zero upstream gives zero gradients") {
    Instance in = make_instance(8, 8, 3);
    FilterTape tape;
    reconstruct(in.noisy, normalize_kernels(in.logits), &in.prev, &in.demod, &tape);
    const FilterGradients g = reconstruct_backward(tape, RgbField(8, 8));
    for (const KernelLevel& l : g.logits.levels) CHECK(max_abs(l.values) == 0.0);
    CHECK(max_abs(g.demod.values()) == 0.0);
  }
  SUBCASE("single-pixel impulse stays inside the gather footprint") {
    const int w = 16, h = 16;
    Instance in = make_instance(w, h, 4);
    FilterTape tape;
    reconstruct(in.noisy, normalize_kernels(in.logits), &in.prev, nullptr, &tape);
    RgbField up(w, h);
    const int px = 5, py = 9;
    up.at(px, py, 0) = 1.0;
    const FilterGradients g = reconstruct_backward(tape, up);
    std::set<std::pair<int, int>> fp = {{px, py}};
    for (int l = 0; l < kPyramidLevels; ++l) {
      const KernelLevel& gl = g.logits.levels[l];
      std::size_t nonzero = 0;
      for (int y = 0; y < gl.height; ++y) {
        for (int x = 0; x < gl.width; ++x) {
          const double m = max_abs(gl.pixel(y * gl.width + x));
          if (fp.count({x, y})) {
            nonzero += m > 0.0;
          } else {
            CHECK(m == 0.0);
          }
        }
      }
      CHECK(nonzero > 0);
      if (l + 1 < kPyramidLevels) {
        const LevelDims d = level_dims(w, h, l + 1);
        std::set<std::pair<int, int>> next;
        for (auto [x, y] : fp) {
          for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i)
              next.insert({std::min((x + i) / 2, d.width - 1), std::min((y + j) / 2, d.height - 1)});
        }
        fp = next;
      }
    }
  }
}

TEST_CASE("sparse input: optimized weights reduce the error monotonically") {
  const int w = 16, h = 16;
  RadianceImage ref(w, h);
  RadianceImage sparse_in(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = 0.5 + 0.4 * std::sin(0.3 * x) * std::cos(0.2 * y);
      for (int c = 0; c < 3; ++c) ref.at(x, y, c) = v;
      if (uniform(61, y * w + x) < 0.1) {
        for (int c = 0; c < 3; ++c) sparse_in.at(x, y, c) = v * 10.0;
      }
    }
  }
  KernelField logits = make_kernel_field(w, h, false);
  double last = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 30; ++it) {
    FilterTape tape;
    const RadianceImage out = reconstruct(sparse_in, normalize_kernels(logits), nullptr, nullptr, &tape);
    RgbField up(w, h);
    double err = 0.0;
    for (std::size_t i = 0; i < out.values().size(); ++i) {
      const double d = out.values()[i] - ref.values()[i];
      err += d * d;
      up.values()[i] = 2.0 * d;
    }
    CHECK(std::isfinite(err));
    CHECK(err < last);
    last = err;
    const FilterGradients g = reconstruct_backward(tape, up);
    for (int l = 0; l < kPyramidLevels; ++l) {
      for (std::size_t k = 0; k < logits.levels[l].values.size(); ++k) {
        logits.levels[l].values[k] -= 0.05 * g.logits.levels[l].values[k];
      }
    }
  }
}

TEST_CASE("kernel field files round trip") {
  const auto dir = sparse::test::scratch_dir("kernels");
  KernelField kf = random_logits(11, 6, true, 71);
  kf.levels[0].values[3] = -std::numeric_limits<double>::infinity();
  save_kernel_field(kf, dir / "k.bin");
  const KernelField back = load_kernel_field(dir / "k.bin");
  CHECK(back.temporal);
  CHECK(back.width() == 11);
  for (int l = 0; l < kPyramidLevels; ++l) {
    REQUIRE(back.levels[l].values.size() == kf.levels[l].values.size());
    for (std::size_t i = 0; i < kf.levels[l].values.size(); ++i) {
      CHECK(back.levels[l].values[i] == static_cast<double>(static_cast<float>(kf.levels[l].values[i])));
    }
  }
  std::ofstream(dir / "bad.bin") << "garbage\n";
  CHECK_THROWS_AS(load_kernel_field(dir / "bad.bin"), FormatError);
}
