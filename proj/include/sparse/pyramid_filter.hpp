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
#include <filesystem>
#include <span>
#include <vector>

#include "sparse/image.hpp"

namespace sparse {

inline constexpr int kPyramidLevels = 5;
inline constexpr int kDenoiseTaps = 25;
inline constexpr int kUpsampleTaps = 4;
inline constexpr int kTemporalTaps = 25;

struct LevelDims {
  int width = 0;
  int height = 0;
};

/// ceil(W / 2^l) x ceil(H / 2^l).
LevelDims level_dims(int width, int height, int level) noexcept;

/// Average-pooled pyramid. Level l pixel (x, y) is the mean of the
/// full-resolution pixels in its 2^l x 2^l block that lie inside the image.
struct PyramidStack {
  std::array<RadianceImage, kPyramidLevels> levels;
};

PyramidStack build_pyramid(const RadianceImage& noisy);

/// Per-level, per-pixel kernel values (logits or normalized weights).
/// Each pixel stores its groups contiguously:
///   [denoise 25 | upsample 4 (levels < 4) | temporal 25 (level 0, optional)]
/// tap k of a 5x5 kernel is offset (k % 5 - 2, k / 5 - 2); tap k of the 2x2
/// upsampling kernel is offset (k % 2, k / 2).
struct KernelLevel {
  int width = 0;
  int height = 0;
  int stride = 0;
  bool upsample = false;
  bool temporal = false;
  std::vector<double> values;

  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width) * height;
  }
  std::span<double> pixel(std::size_t i) noexcept {
    return {values.data() + i * stride, static_cast<std::size_t>(stride)};
  }
  std::span<const double> pixel(std::size_t i) const noexcept {
    return {values.data() + i * stride, static_cast<std::size_t>(stride)};
  }
  static constexpr int kDenoiseOffset = 0;
  static constexpr int kUpsampleOffset = kDenoiseTaps;
  int temporal_offset() const noexcept {
    return kDenoiseTaps + (upsample ? kUpsampleTaps : 0);
  }
};

struct KernelField {
  std::array<KernelLevel, kPyramidLevels> levels;
  bool temporal = false;

  int width() const noexcept { return levels[0].width; }
  int height() const noexcept { return levels[0].height; }
  std::size_t parameter_count() const noexcept;
};

/// Field for a W x H frame with every value set to `fill`.
KernelField make_kernel_field(int width, int height, bool temporal,
                              double fill = 0.0);

/// Per-pixel softmax over every group present at that level (54 weights at
/// full resolution with temporal kernels, 29 without, 29 at levels 1-3, 25 at
/// the coarsest level).
KernelField normalize_kernels(const KernelField& logits);

/// Pulls gradients with respect to normalized weights back to the logits.
KernelField normalize_kernels_backward(const KernelField& weights,
                                       const KernelField& grad_weights);

/// Largest |sum of weights - 1| over all pixels and levels.
double max_normalization_error(const KernelField& weights);

/// out(x, y) = sum_k w_k(x, y) * in(x + dx_k, y + dy_k), taps clamped to the
/// image. Weights for pixel i start at weights[i * stride + offset].
RadianceImage gather5(const RadianceImage& image,
                      std::span<const double> weights, int stride = kDenoiseTaps,
                      int offset = 0);

/// out(x, y) = sum_{i,j in {0,1}} w_ij(x, y) * coarse(floor((x+i)/2),
/// floor((y+j)/2)), coarse indices clamped.
RadianceImage upsample2(const RadianceImage& coarse, int fine_width,
                        int fine_height, std::span<const double> weights,
                        int stride = kUpsampleTaps, int offset = 0);

/// Divisions use max(d, kDemodFloor); remodulation uses the same value.
inline constexpr double kDemodFloor = 1e-3;

/// Forward intermediates retained for reconstruct_backward().
struct FilterTape {
  KernelField weights;
  PyramidStack pyramid;  // of the (demodulated) input
  std::array<RadianceImage, kPyramidLevels> recon;
  RadianceImage prev;  // (demodulated) warped history
  bool has_prev = false;
  bool demodulated = false;
  RgbField demod;  // clamped factors
  RgbField demod_raw;
};

/// Coarse-to-fine gather reconstruction. `weights` must be normalized. When
/// `demod` is given, the noisy input and the history are divided by it before
/// filtering and the result is multiplied back.
RadianceImage reconstruct(const RadianceImage& noisy, const KernelField& weights,
                          const RadianceImage* prev_warped,
                          const DemodMap* demod, FilterTape* tape = nullptr);

/// Reconstruction from an existing pyramid, without demodulation.
RadianceImage reconstruct(const PyramidStack& pyramid,
                          const KernelField& weights,
                          const RadianceImage* prev_warped);

struct FilterGradients {
  KernelField logits;
  RgbField demod;
  RgbField noisy;
  RgbField prev;
};

/// Exact gradients of sum(upstream * output) with respect to the kernel
/// logits, the demodulation map, the noisy input and the warped history.
FilterGradients reconstruct_backward(const FilterTape& tape,
                                     const RgbField& upstream);

/// Text header (dims, groups per level) followed by little-endian float32
/// values, level by level.
void save_kernel_field(const KernelField& field,
                       const std::filesystem::path& path);
KernelField load_kernel_field(const std::filesystem::path& path);

}  // namespace sparse
