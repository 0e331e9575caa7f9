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

#include "sparse/image.hpp"

namespace sparse {

bool is_valid_radiance(const RadianceImage& img) noexcept {
  for (double v : img.values()) {
    if (!std::isfinite(v) || v < 0.0) return false;
  }
  return true;
}

bool is_valid_ldr(const LdrImage& img) noexcept {
  for (double v : img.values()) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
  }
  return true;
}

void require_valid_radiance(const RadianceImage& img, const char* what) {
  if (!is_valid_radiance(img)) {
    throw std::invalid_argument(std::string(what) +
                                ": radiance must be finite and non-negative");
  }
}

}  // namespace sparse
