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

#include "sparse/sample_bank.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "sparse/config.hpp"
#include "sparse/image_io.hpp"
#include "sparse/parallel.hpp"
#include "sparse/warp.hpp"

namespace sparse {

const char* to_string(NoiseFamily family) noexcept {
  switch (family) {
    case NoiseFamily::kGaussianClamped:
      return "gaussian-clamped";
    case NoiseFamily::kLognormal:
      return "lognormal";
    case NoiseFamily::kTwoPointSpike:
      return "two-point-spike";
  }
  return "unknown";
}

double max_two_point_scale(double q) noexcept { return std::sqrt((1 - q) / q); }

namespace {

double standard_normal(const PixelRngKey& key, std::uint32_t index) noexcept {
  PixelRngKey k = key;
  k.stream = streams::kBankSamples + 2 * std::uint64_t{index};
  const double u1 = pixel_uniform(k);
  k.stream += 1;
  const double u2 = pixel_uniform(k);
  return std::sqrt(-2.0 * std::log(1.0 - u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

double draw_multiplier(NoiseFamily family, double scale, double q,
                       PixelRngKey key, std::uint32_t index) noexcept {
  if (scale <= 0.0) return 1.0;
  switch (family) {
    case NoiseFamily::kGaussianClamped: {
      const double z = standard_normal(key, index);
      return 1.0 + std::clamp(scale * z, -1.0, 1.0);
    }
    case NoiseFamily::kLognormal: {
      const double z = standard_normal(key, index);
      const double t2 = std::log1p(scale * scale);
      return std::exp(std::sqrt(t2) * z - 0.5 * t2);
    }
    case NoiseFamily::kTwoPointSpike: {
      const double s = std::min(scale, max_two_point_scale(q));
      key.stream = streams::kBankSamples + 2 * std::uint64_t{index};
      const double u = pixel_uniform(key);
      return u < q ? 1.0 + s * std::sqrt((1 - q) / q)
                   : std::max(0.0, 1.0 - s * std::sqrt(q / (1 - q)));
    }
  }
  return 1.0;
}

double multiplier_variance(NoiseFamily family, double scale,
                           double q) noexcept {
  if (scale <= 0.0) return 0.0;
  switch (family) {
    case NoiseFamily::kGaussianClamped: {
      const double c = 1.0 / scale;
      const double tail = 1.0 - normal_cdf(c);
      const double second = (1.0 - 2.0 * tail) - 2.0 * c * normal_pdf(c) +
                            2.0 * c * c * tail;
      return scale * scale * second;
    }
    case NoiseFamily::kLognormal:
      return scale * scale;
    case NoiseFamily::kTwoPointSpike: {
      const double s = std::min(scale, max_two_point_scale(q));
      return s * s;
    }
  }
  return 0.0;
}

void validate_scene(const SceneSpec& scene) {
  const int w = scene.width();
  const int h = scene.height();
  if (w <= 0 || h <= 0) throw std::invalid_argument("scene has no pixels");
  require_valid_radiance(scene.ground_truth, "scene ground truth");
  require_same_shape(scene.ground_truth, scene.albedo, "scene albedo");
  require_same_shape(scene.ground_truth, scene.noise.scale, "scene noise scale");
  if (scene.noise.family.size() != scene.ground_truth.pixel_count()) {
    throw std::invalid_argument("scene noise family has wrong pixel count");
  }
  for (double s : scene.noise.scale.values()) {
    if (!std::isfinite(s) || s < 0.0) {
      throw std::invalid_argument("scene noise scale must be finite and >= 0");
    }
  }
  const double q = scene.noise.spike_probability;
  if (!(q > 0.0 && q < 1.0)) {
    throw std::invalid_argument("spike probability must lie in (0,1)");
  }
  for (double a : scene.albedo.values()) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw std::invalid_argument("scene albedo must lie in [0,1]");
    }
  }
  if (scene.frames < 1) throw std::invalid_argument("scene needs >= 1 frame");
  if (static_cast<int>(scene.motion.size()) != scene.frames - 1) {
    throw std::invalid_argument("scene needs frames-1 motion fields");
  }
  for (const MotionField& m : scene.motion) {
    require_same_shape(scene.ground_truth, m, "scene motion");
    if (!all_finite(m)) throw std::invalid_argument("motion must be finite");
  }
}

ScalarField sample_variance(const SceneSpec& scene) {
  ScalarField out(scene.width(), scene.height());
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    const double v = multiplier_variance(scene.noise.family[i],
                                         scene.noise.scale.pixel(i)[0],
                                         scene.noise.spike_probability);
    double m2 = 0.0;
    for (double g : scene.ground_truth.pixel(i)) m2 += g * g;
    out.pixel(i)[0] = v * m2 / 3.0;
  }
  return out;
}

SampleBank::SampleBank(int width, int height, int count, std::uint64_t seed,
                       std::uint64_t frame)
    : width_(width), height_(height), count_(count), seed_(seed),
      frame_(frame) {
  if (!is_power_of_two(count) || count > kMaxBankSamples) {
    throw std::invalid_argument("sample count must be a power of two <= 256, got " +
                                std::to_string(count));
  }
  data_.assign(static_cast<std::size_t>(width) * height * count * 3, 0.0f);
}

std::vector<std::array<double, 3>> SampleBank::take(int x, int y, int n,
                                                    int offset) const {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) {
    throw std::out_of_range("take: pixel outside the bank");
  }
  if (n < 0 || offset < 0 || offset + n > count_) {
    throw std::out_of_range("take: range [" + std::to_string(offset) + ", " +
                            std::to_string(offset + n) + ") exceeds " +
                            std::to_string(count_) + " samples");
  }
  const std::size_t p = static_cast<std::size_t>(y) * width_ + x;
  std::vector<std::array<double, 3>> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const auto s = sample(p, offset + j);
    out[static_cast<std::size_t>(j)] = {s[0], s[1], s[2]};
  }
  return out;
}

RadianceImage SampleBank::mean() const {
  RadianceImage out(width_, height_);
  for (std::size_t p = 0; p < pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int j = 0; j < count_; ++j) acc += sample(p, j)[c];
      out.pixel(p)[c] = acc / count_;
    }
  }
  return out;
}

int next_power_of_two(int n) noexcept {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

SampleBank generate_bank(const SceneSpec& scene, int count, std::uint64_t seed,
                         std::uint64_t frame) {
  SampleBank bank(scene.width(), scene.height(), count, seed, frame);
  const int w = scene.width();
  const double q = scene.noise.spike_probability;
  parallel_for(scene.height(), [&](std::ptrdiff_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < w; ++x) {
      const std::size_t p = scene.ground_truth.index(x, y);
      const PixelRngKey key{seed, frame, static_cast<std::uint32_t>(x),
                            static_cast<std::uint32_t>(y), 0};
      const auto gt = scene.ground_truth.pixel(p);
      const NoiseFamily fam = scene.noise.family[p];
      const double scale = scene.noise.scale.pixel(p)[0];
      for (int j = 0; j < count; ++j) {
        const double m =
            draw_multiplier(fam, scale, q, key, static_cast<std::uint32_t>(j));
        auto s = bank.sample(p, j);
        for (int c = 0; c < 3; ++c) s[c] = static_cast<float>(gt[c] * m);
      }
    }
  });
  return bank;
}

ScalarField checker_spike_region(int width, int height) {
  ScalarField region(width, height);
  const double cx = 0.62 * width;
  const double cy = 0.38 * height;
  const double r = std::sqrt(0.035 * width * height / std::numbers::pi);
  bool any = false;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) {
        region.at(x, y) = 1.0;
        any = true;
      }
    }
  }
  if (!any) region.at(static_cast<int>(cx), static_cast<int>(cy)) = 1.0;
  return region;
}

namespace {

struct Rgb {
  double r, g, b;
};

// Disc brightness relative to the checkerboard. Kept inside the linear part
// of the default tone curve so the firefly noise stays visible on screen.
constexpr double kSpikeIllumination = 2.5;

void fill_constant_scene(SceneSpec& scene, NoiseFamily family, double scale) {
  scene.noise.family.assign(scene.ground_truth.pixel_count(), family);
  scene.noise.scale.fill(scale);
}

}  // namespace

SceneSpec builtin_scene(const std::string& name, int width, int height) {
  if (width < 2 || height < 2) {
    throw std::invalid_argument("builtin scenes need at least 2x2 pixels");
  }
  SceneSpec scene;
  scene.name = name;
  scene.ground_truth = RadianceImage(width, height);
  scene.albedo = RadianceImage(width, height);
  scene.noise.scale = ScalarField(width, height);
  scene.frames = 2;
  scene.motion = {static_motion(width, height)};

  auto set_pixel = [&](int x, int y, Rgb albedo, double illumination) {
    const double a[3] = {albedo.r, albedo.g, albedo.b};
    for (int c = 0; c < 3; ++c) {
      scene.albedo.at(x, y, c) = a[c];
      scene.ground_truth.at(x, y, c) = a[c] * illumination;
    }
  };

  if (name == "flat") {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) set_pixel(x, y, {0.5, 0.5, 0.5}, 1.0);
    fill_constant_scene(scene, NoiseFamily::kLognormal, 0.5);
  } else if (name == "edge") {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        set_pixel(x, y, x < width / 2 ? Rgb{0.15, 0.15, 0.15}
                                       : Rgb{0.7, 0.7, 0.7},
                  1.0);
    fill_constant_scene(scene, NoiseFamily::kLognormal, 0.5);
  } else if (name == "checker-spike") {
    const int check = std::max(2, width / 16);
    const ScalarField region = checker_spike_region(width, height);
    fill_constant_scene(scene, NoiseFamily::kGaussianClamped, 0.1);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const bool dark = ((x / check) + (y / check)) % 2 == 0;
        const Rgb albedo = dark ? Rgb{0.20, 0.25, 0.30} : Rgb{0.60, 0.55, 0.45};
        const bool spike = region.at(x, y) > 0.0;
        set_pixel(x, y, albedo, spike ? kSpikeIllumination : 1.0);
        if (spike) {
          const std::size_t p = scene.ground_truth.index(x, y);
          scene.noise.family[p] = NoiseFamily::kTwoPointSpike;
          scene.noise.scale.pixel(p)[0] =
              max_two_point_scale(scene.noise.spike_probability);
        }
      }
    }
  } else if (name == "hetero-gradient") {
    fill_constant_scene(scene, NoiseFamily::kLognormal, 0.0);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        set_pixel(x, y, {0.5, 0.45, 0.4}, 1.0);
        const double t = static_cast<double>(x) / (width - 1);
        scene.noise.scale.at(x, y) = 0.05 * std::pow(100.0, t);
      }
    }
  } else {
    throw std::invalid_argument("unknown scene '" + name +
                                "' (expected flat, edge, checker-spike or "
                                "hetero-gradient)");
  }
  validate_scene(scene);
  return scene;
}

void save_bank(const SampleBank& bank, const std::string& scene_name,
               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValueConfig manifest;
  manifest.set("width", std::to_string(bank.width()));
  manifest.set("height", std::to_string(bank.height()));
  manifest.set("samples", std::to_string(bank.count()));
  manifest.set("seed", std::to_string(bank.seed()));
  manifest.set("frame", std::to_string(bank.frame()));
  manifest.set("scene", scene_name);
  manifest.save(dir / "bank.cfg");
  for (int j = 0; j < bank.count(); ++j) {
    RadianceImage slice(bank.width(), bank.height());
    for (std::size_t p = 0; p < bank.pixel_count(); ++p) {
      for (int c = 0; c < 3; ++c) slice.pixel(p)[c] = bank.sample(p, j)[c];
    }
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03d.pfm", j);
    write_pfm(slice, dir / name);
  }
}

SampleBank load_bank(const std::filesystem::path& dir) {
  const KeyValueConfig manifest = KeyValueConfig::load(dir / "bank.cfg");
  const int w = static_cast<int>(manifest.get_int("width", 0));
  const int h = static_cast<int>(manifest.get_int("height", 0));
  const int n = static_cast<int>(manifest.get_int("samples", 0));
  SampleBank bank(w, h, n,
                  manifest.get_uint64("seed", 0),
                  manifest.get_uint64("frame", 0));
  for (int j = 0; j < n; ++j) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03d.pfm", j);
    const RadianceImage slice = read_pfm(dir / name);
    if (slice.width() != w || slice.height() != h) {
      throw FormatError("bank slice " + std::string(name) +
                        " does not match the manifest dimensions");
    }
    for (std::size_t p = 0; p < bank.pixel_count(); ++p) {
      for (int c = 0; c < 3; ++c) {
        bank.sample(p, j)[c] = static_cast<float>(slice.pixel(p)[c]);
      }
    }
  }
  return bank;
}

}  // namespace sparse
