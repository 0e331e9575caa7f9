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

namespace sparse {

/// Coordinates of one random variate. Every field takes part in the hash, so
/// changing any of them yields an unrelated value.
struct PixelRngKey {
  std::uint64_t seed = 0;
  std::uint64_t frame = 0;
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint64_t stream = 0;
};

/// Stream ids used across the library. Bank samples occupy a contiguous
/// block starting at kBankSamples (two variates per sample).
namespace streams {
inline constexpr std::uint64_t kAllocation = 1;
inline constexpr std::uint64_t kTmo = 2;
inline constexpr std::uint64_t kMaskInit = 3;
inline constexpr std::uint64_t kParameterInit = 4;
inline constexpr std::uint64_t kBankSamples = std::uint64_t{1} << 32;
}  // namespace streams

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a child seed from a parent seed and a label.
constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                    std::uint64_t label) noexcept {
  return mix64(mix64(parent) ^ (label * 0xd1b54a32d192ed03ULL));
}

constexpr std::uint64_t hash_key(const PixelRngKey& key) noexcept {
  std::uint64_t h = mix64(key.seed);
  h = mix64(h ^ key.frame);
  h = mix64(h ^ ((std::uint64_t{key.y} << 32) | key.x));
  return mix64(h ^ key.stream);
}

/// Stateless uniform variate in [0,1) with 53 bits of resolution.
constexpr double pixel_uniform(const PixelRngKey& key) noexcept {
  return static_cast<double>(hash_key(key) >> 11) * 0x1.0p-53;
}

}  // namespace sparse
