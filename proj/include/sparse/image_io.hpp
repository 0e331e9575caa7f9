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
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "sparse/image.hpp"

namespace sparse {

/// Raised for malformed or unsupported files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a 3-channel PFM ("PF") and checks the radiance invariants.
RadianceImage read_pfm(const std::filesystem::path& path);

/// Reads a 3-channel PFM without value checks (gradients, signed fields).
RgbField read_pfm_field(const std::filesystem::path& path);

/// Writes little-endian PFM (scale -1), rows bottom-up.
template <typename Tag>
void write_pfm(const Image<3, Tag>& image, const std::filesystem::path& path);

/// Writes a scalar field replicated into three channels.
void write_pfm(const ScalarField& field, const std::filesystem::path& path);

/// 8-bit RGB PNG; each value v in [0,1] becomes round(v * 255), halves
/// rounded away from zero.
void write_png_srgb(const LdrImage& image, const std::filesystem::path& path);

/// 8-bit quantization used by write_png_srgb.
std::uint8_t quantize_unorm8(double v) noexcept;

struct Gray16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> values;
};

void write_png_gray16(const Gray16& image, const std::filesystem::path& path);
Gray16 read_png_gray16(const std::filesystem::path& path);

}  // namespace sparse
