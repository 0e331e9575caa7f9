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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparse {

struct GenericTag {};
struct RadianceTag {};
struct LdrTag {};
struct MotionTag {};
struct DemodTag {};

/// Interleaved row-major image with a fixed channel count. Row 0 is the top
/// row; PFM files are flipped on read/write.
///
/// The tag distinguishes images that share a layout but not a meaning
/// (linear radiance, display values, signed gradients). Conversions between
/// tags are explicit through retag().
template <int Channels, typename Tag = GenericTag>
class Image {
 public:
  static constexpr int kChannels = Channels;

  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : width_(width), height_(height) {
    if (width < 0 || height < 0) {
      throw std::invalid_argument("image dimensions must be non-negative");
    }
    data_.assign(static_cast<std::size_t>(width) * height * Channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  double& at(int x, int y, int c = 0) noexcept {
    return data_[index(x, y) * Channels + c];
  }
  double at(int x, int y, int c = 0) const noexcept {
    return data_[index(x, y) * Channels + c];
  }

  std::span<double, Channels> pixel(std::size_t i) noexcept {
    return std::span<double, Channels>(data_.data() + i * Channels, Channels);
  }
  std::span<const double, Channels> pixel(std::size_t i) const noexcept {
    return std::span<const double, Channels>(data_.data() + i * Channels,
                                             Channels);
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  template <int C2, typename T2>
  bool same_shape(const Image<C2, T2>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  template <typename OtherTag>
  Image<Channels, OtherTag> retag() const {
    Image<Channels, OtherTag> out(width_, height_);
    std::copy(data_.begin(), data_.end(), out.values().begin());
    return out;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

/// Linear HDR radiance, finite and non-negative.
using RadianceImage = Image<3, RadianceTag>;
/// Display-referred values in [0,1].
using LdrImage = Image<3, LdrTag>;
/// Signed per-pixel 3-vectors: gradients, logits, differences.
using RgbField = Image<3>;
using ScalarField = Image<1>;
/// Per-pixel displacement (dx, dy) in pixels from the current frame into the
/// previous one.
using MotionField = Image<2, MotionTag>;
/// Strictly positive per-pixel, per-channel demodulation factor.
using DemodMap = Image<3, DemodTag>;

template <int C1, typename T1, int C2, typename T2>
void require_same_shape(const Image<C1, T1>& a, const Image<C2, T2>& b,
                        const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(
        std::string("dimension mismatch: ") + what + " (" +
        std::to_string(a.width()) + "x" + std::to_string(a.height()) +
        " vs " + std::to_string(b.width()) + "x" +
        std::to_string(b.height()) + ")");
  }
}

template <int C, typename T>
bool all_finite(const Image<C, T>& img) noexcept {
  for (double v : img.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool is_valid_radiance(const RadianceImage& img) noexcept;
bool is_valid_ldr(const LdrImage& img) noexcept;

/// Throws std::invalid_argument naming `what` if the radiance invariants
/// (finite, non-negative) do not hold.
void require_valid_radiance(const RadianceImage& img, const char* what);

}  // namespace sparse
