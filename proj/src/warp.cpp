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

#include "sparse/warp.hpp"

#include <cmath>

#include "sparse/parallel.hpp"

namespace sparse {
namespace {

struct BilinearTap {
  bool valid = false;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double w00 = 0, w10 = 0, w01 = 0, w11 = 0;
};

BilinearTap bilinear_tap(double sx, double sy, int width, int height) {
  BilinearTap t;
  if (!(sx >= 0.0 && sy >= 0.0 && sx <= width - 1 && sy <= height - 1)) {
    return t;
  }
  t.valid = true;
  t.x0 = static_cast<int>(std::floor(sx));
  t.y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - t.x0;
  const double fy = sy - t.y0;
  // At the last row/column the second tap has zero weight.
  t.x1 = std::min(t.x0 + 1, width - 1);
  t.y1 = std::min(t.y0 + 1, height - 1);
  t.w00 = (1 - fx) * (1 - fy);
  t.w10 = fx * (1 - fy);
  t.w01 = (1 - fx) * fy;
  t.w11 = fx * fy;
  return t;
}

}  // namespace

template <typename Tag>
WarpResult<Tag> warp(const Image<3, Tag>& prev, const MotionField& motion) {
  require_same_shape(prev, motion, "warp");
  const int w = prev.width();
  const int h = prev.height();
  WarpResult<Tag> out{Image<3, Tag>(w, h), ScalarField(w, h)};
  parallel_for(h, [&](std::ptrdiff_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < w; ++x) {
      const BilinearTap t = bilinear_tap(x + motion.at(x, y, 0),
                                         y + motion.at(x, y, 1), w, h);
      if (!t.valid) continue;
      out.validity.at(x, y) = 1.0;
      for (int c = 0; c < 3; ++c) {
        out.image.at(x, y, c) =
            t.w00 * prev.at(t.x0, t.y0, c) + t.w10 * prev.at(t.x1, t.y0, c) +
            t.w01 * prev.at(t.x0, t.y1, c) + t.w11 * prev.at(t.x1, t.y1, c);
      }
    }
  });
  return out;
}

template WarpResult<GenericTag> warp(const Image<3, GenericTag>&,
                                     const MotionField&);
template WarpResult<RadianceTag> warp(const Image<3, RadianceTag>&,
                                      const MotionField&);
template WarpResult<LdrTag> warp(const Image<3, LdrTag>&, const MotionField&);

RgbField warp_adjoint(const RgbField& upstream, const MotionField& motion) {
  require_same_shape(upstream, motion, "warp_adjoint");
  const int w = upstream.width();
  const int h = upstream.height();
  RgbField out(w, h);
  // Scatter; serial so the accumulation order is fixed.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const BilinearTap t = bilinear_tap(x + motion.at(x, y, 0),
                                         y + motion.at(x, y, 1), w, h);
      if (!t.valid) continue;
      for (int c = 0; c < 3; ++c) {
        const double g = upstream.at(x, y, c);
        out.at(t.x0, t.y0, c) += t.w00 * g;
        out.at(t.x1, t.y0, c) += t.w10 * g;
        out.at(t.x0, t.y1, c) += t.w01 * g;
        out.at(t.x1, t.y1, c) += t.w11 * g;
      }
    }
  }
  return out;
}

MotionField static_motion(int width, int height) {
  return MotionField(width, height);
}

}  // namespace sparse
