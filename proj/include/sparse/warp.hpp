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

#include "sparse/image.hpp"

namespace sparse {

template <typename Tag>
struct WarpResult {
  Image<3, Tag> image;
  /// 1 where the bilinear source lies inside the previous frame, else 0.
  ScalarField validity;
};

/// Backward warp: out(x, y) = prev(x + dx, y + dy), bilinearly interpolated.
/// Source positions outside [0, W-1] x [0, H-1] produce zero with validity 0.
template <typename Tag>
WarpResult<Tag> warp(const Image<3, Tag>& prev, const MotionField& motion);

/// Adjoint of warp() with respect to its image argument.
RgbField warp_adjoint(const RgbField& upstream, const MotionField& motion);

/// A zero motion field of the given size.
MotionField static_motion(int width, int height);

}  // namespace sparse
