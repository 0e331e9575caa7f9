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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sparse/image.hpp"
#include "sparse/rng.hpp"

namespace sparse {

/// Distribution families for the per-sample radiance multiplier. Every
/// family draws a non-negative weight w with E[w] = 1 and a sample equals
/// ground_truth * w, so pixel means match the ground truth by construction.
enum class NoiseFamily : std::uint8_t {
  /// w = 1 + clamp(scale * z, -1, 1), z standard normal (symmetric clamp).
  kGaussianClamped,
  /// w = exp(t z - t^2/2) with t^2 = log(1 + scale^2); std(w) = scale.
  kLognormal,
  /// w in {a, b} with P(a) = q; std(w) = scale, capped so that b >= 0.
  /// At the cap w is 0 or 1/q (firefly model).
  kTwoPointSpike,
};

const char* to_string(NoiseFamily family) noexcept;

struct NoiseModel {
  std::vector<NoiseFamily> family;  // per pixel
  ScalarField scale;                // per pixel, finite, >= 0
  double spike_probability = 0.05;
};

struct SceneSpec {
  std::string name;
  RadianceImage ground_truth;
  NoiseModel noise;
  /// Reflectance-like texture in [0,1], used to initialize demodulation.
  RadianceImage albedo;
  /// motion[f] maps frame f+1 into frame f.
  std::vector<MotionField> motion;
  int frames = 2;

  int width() const noexcept { return ground_truth.width(); }
  int height() const noexcept { return ground_truth.height(); }
};

/// Throws std::invalid_argument if any SceneSpec invariant is violated.
void validate_scene(const SceneSpec& scene);

/// Largest admissible two-point scale for spike probability q.
double max_two_point_scale(double q) noexcept;

/// Draws the unit-mean multiplier for sample `index` of the pixel in `key`.
double draw_multiplier(NoiseFamily family, double scale, double q,
                       PixelRngKey key, std::uint32_t index) noexcept;

/// Exact Var[w] of the multiplier distribution.
double multiplier_variance(NoiseFamily family, double scale, double q) noexcept;

/// Per-pixel variance of a single sample, averaged over channels.
ScalarField sample_variance(const SceneSpec& scene);

inline constexpr int kMaxBankSamples = 256;

/// Pre-generated Monte Carlo samples: `count` radiance values per pixel.
class SampleBank {
 public:
  SampleBank() = default;
  SampleBank(int width, int height, int count, std::uint64_t seed,
             std::uint64_t frame);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int count() const noexcept { return count_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t frame() const noexcept { return frame_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }

  /// Channel values of sample j at pixel index i.
  std::span<const float, 3> sample(std::size_t pixel, int j) const noexcept {
    return std::span<const float, 3>(
        data_.data() + (pixel * count_ + static_cast<std::size_t>(j)) * 3, 3);
  }
  std::span<float, 3> sample(std::size_t pixel, int j) noexcept {
    return std::span<float, 3>(
        data_.data() + (pixel * count_ + static_cast<std::size_t>(j)) * 3, 3);
  }

  /// Samples [offset, offset + n) of pixel (x, y).
  std::vector<std::array<double, 3>> take(int x, int y, int n,
                                          int offset) const;

  /// Mean over all `count` samples per pixel.
  RadianceImage mean() const;

 private:
  int width_ = 0;
  int height_ = 0;
  int count_ = 0;
  std::uint64_t seed_ = 0;
  std::uint64_t frame_ = 0;
  std::vector<float> data_;
};

constexpr bool is_power_of_two(int n) noexcept {
  return n > 0 && (n & (n - 1)) == 0;
}

/// Smallest power of two >= n (n >= 1).
int next_power_of_two(int n) noexcept;

/// I.i.d. draws from the scene's noise model. Sample j of pixel (x, y) is a
/// pure function of (seed, frame, x, y, j), so banks of different sizes
/// agree on their common prefix.
SampleBank generate_bank(const SceneSpec& scene, int count, std::uint64_t seed,
                         std::uint64_t frame = 0);

inline constexpr const char* kBuiltinScenes[] = {"flat", "edge",
                                                 "checker-spike",
                                                 "hetero-gradient"};

/// Deterministic procedural scenes:
///   flat            constant radiance and noise scale
///   edge            vertical step in radiance
///   checker-spike   low-noise colored checkerboard with a small bright disc
///                   of firefly noise (< 5% of the pixels)
///   hetero-gradient constant radiance, noise scale rising 100x left to right
SceneSpec builtin_scene(const std::string& name, int width, int height);

/// Pixels of the bright disc in checker-spike (1 inside).
ScalarField checker_spike_region(int width, int height);

/// Directory of PFM slices (sample_NNN.pfm) plus bank.cfg.
void save_bank(const SampleBank& bank, const std::string& scene_name,
               const std::filesystem::path& dir);
SampleBank load_bank(const std::filesystem::path& dir);

}  // namespace sparse
