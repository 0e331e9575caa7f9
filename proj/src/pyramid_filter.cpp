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

#include "sparse/pyramid_filter.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sparse/image_io.hpp"
#include "sparse/parallel.hpp"

namespace sparse {

LevelDims level_dims(int width, int height, int level) noexcept {
  const int step = 1 << level;
  return {(width + step - 1) / step, (height + step - 1) / step};
}

PyramidStack build_pyramid(const RadianceImage& noisy) {
  const int w = noisy.width();
  const int h = noisy.height();
  PyramidStack pyr;
  pyr.levels[0] = noisy;
  for (int l = 1; l < kPyramidLevels; ++l) {
    const LevelDims d = level_dims(w, h, l);
    const int step = 1 << l;
    RadianceImage& out = pyr.levels[l];
    out = RadianceImage(d.width, d.height);
    for (int y = 0; y < d.height; ++y) {
      const int y1 = std::min(h, (y + 1) * step);
      for (int x = 0; x < d.width; ++x) {
        const int x1 = std::min(w, (x + 1) * step);
        double acc[3] = {0, 0, 0};
        for (int yy = y * step; yy < y1; ++yy) {
          for (int xx = x * step; xx < x1; ++xx) {
            const auto v = noisy.pixel(noisy.index(xx, yy));
            acc[0] += v[0];
            acc[1] += v[1];
            acc[2] += v[2];
          }
        }
        const double inv = 1.0 / ((x1 - x * step) * (y1 - y * step));
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = acc[c] * inv;
      }
    }
  }
  return pyr;
}

std::size_t KernelField::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const KernelLevel& l : levels) n += l.values.size();
  return n;
}

KernelField make_kernel_field(int width, int height, bool temporal,
                              double fill) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("kernel field needs positive dimensions");
  }
  KernelField kf;
  kf.temporal = temporal;
  for (int l = 0; l < kPyramidLevels; ++l) {
    KernelLevel& lv = kf.levels[l];
    const LevelDims d = level_dims(width, height, l);
    lv.width = d.width;
    lv.height = d.height;
    lv.upsample = l < kPyramidLevels - 1;
    lv.temporal = temporal && l == 0;
    lv.stride = kDenoiseTaps + (lv.upsample ? kUpsampleTaps : 0) +
                (lv.temporal ? kTemporalTaps : 0);
    lv.values.assign(lv.pixel_count() * lv.stride, fill);
  }
  return kf;
}

KernelField normalize_kernels(const KernelField& logits) {
  for (const KernelLevel& lv : logits.levels) {
    for (std::size_t i = 0; i < lv.pixel_count(); ++i) {
      double zmax = -std::numeric_limits<double>::infinity();
      for (double v : lv.pixel(i)) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
          throw std::invalid_argument("kernel logits must be finite or -inf");
        }
        zmax = std::max(zmax, v);
      }
      if (zmax == -std::numeric_limits<double>::infinity()) {
        throw std::invalid_argument("kernel group has no finite logit");
      }
    }
  }
  KernelField out = logits;
  for (KernelLevel& lv : out.levels) {
    const std::size_t n = lv.pixel_count();
    parallel_for(static_cast<std::ptrdiff_t>(n), [&](std::ptrdiff_t i) {
      auto z = lv.pixel(static_cast<std::size_t>(i));
      double zmax = -std::numeric_limits<double>::infinity();
      for (double v : z) zmax = std::max(zmax, v);
      double total = 0.0;
      for (double& v : z) {
        v = std::exp(v - zmax);
        total += v;
      }
      const double inv = 1.0 / total;
      for (double& v : z) v *= inv;
    });
  }
  return out;
}

KernelField normalize_kernels_backward(const KernelField& weights,
                                       const KernelField& grad_weights) {
  KernelField out = grad_weights;
  for (int l = 0; l < kPyramidLevels; ++l) {
    const KernelLevel& wl = weights.levels[l];
    KernelLevel& gl = out.levels[l];
    if (gl.values.size() != wl.values.size()) {
      throw std::invalid_argument("kernel gradient layout mismatch");
    }
    const std::size_t n = wl.pixel_count();
    parallel_for(static_cast<std::ptrdiff_t>(n), [&](std::ptrdiff_t i) {
      const auto w = wl.pixel(static_cast<std::size_t>(i));
      auto g = gl.pixel(static_cast<std::size_t>(i));
      double dot = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) dot += w[k] * g[k];
      for (std::size_t k = 0; k < w.size(); ++k) g[k] = w[k] * (g[k] - dot);
    });
  }
  return out;
}

double max_normalization_error(const KernelField& weights) {
  double worst = 0.0;
  for (const KernelLevel& lv : weights.levels) {
    for (std::size_t i = 0; i < lv.pixel_count(); ++i) {
      double total = 0.0;
      for (double v : lv.pixel(i)) total += v;
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  return worst;
}

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Accumulates sum_k w_k * img(x + dx_k, y + dy_k) into out[3].
inline void gather_pixel(const RadianceImage& img, int x, int y,
                         const double* w, double out[3]) {
  const int wm = img.width() - 1;
  const int hm = img.height() - 1;
  const auto data = img.values();
  for (int j = 0; j < 5; ++j) {
    const int yy = clampi(y + j - 2, 0, hm);
    const std::size_t row = static_cast<std::size_t>(yy) * img.width();
    for (int i = 0; i < 5; ++i) {
      const int xx = clampi(x + i - 2, 0, wm);
      const double* v = data.data() + (row + xx) * 3;
      const double wk = w[j * 5 + i];
      out[0] += wk * v[0];
      out[1] += wk * v[1];
      out[2] += wk * v[2];
    }
  }
}

inline void upsample_pixel(const RadianceImage& coarse, int x, int y,
                           const double* w, double out[3]) {
  const int wm = coarse.width() - 1;
  const int hm = coarse.height() - 1;
  for (int j = 0; j < 2; ++j) {
    const int yy = clampi((y + j) / 2, 0, hm);
    for (int i = 0; i < 2; ++i) {
      const int xx = clampi((x + i) / 2, 0, wm);
      const auto v = coarse.pixel(coarse.index(xx, yy));
      const double wk = w[j * 2 + i];
      out[0] += wk * v[0];
      out[1] += wk * v[1];
      out[2] += wk * v[2];
    }
  }
}

// Backward of gather_pixel for one output pixel: weight gradients into gw,
// image gradient scattered into gimg.
inline void gather_pixel_backward(const RadianceImage& img, int x, int y,
                                  const double* w, const double g[3],
                                  double* gw, RgbField& gimg) {
  const int wm = img.width() - 1;
  const int hm = img.height() - 1;
  for (int j = 0; j < 5; ++j) {
    const int yy = clampi(y + j - 2, 0, hm);
    for (int i = 0; i < 5; ++i) {
      const int xx = clampi(x + i - 2, 0, wm);
      const std::size_t q = img.index(xx, yy);
      const auto v = img.pixel(q);
      const int k = j * 5 + i;
      gw[k] += g[0] * v[0] + g[1] * v[1] + g[2] * v[2];
      auto gi = gimg.pixel(q);
      gi[0] += w[k] * g[0];
      gi[1] += w[k] * g[1];
      gi[2] += w[k] * g[2];
    }
  }
}

inline void upsample_pixel_backward(const RadianceImage& coarse, int x, int y,
                                    const double* w, const double g[3],
                                    double* gw, RgbField& gcoarse) {
  const int wm = coarse.width() - 1;
  const int hm = coarse.height() - 1;
  for (int j = 0; j < 2; ++j) {
    const int yy = clampi((y + j) / 2, 0, hm);
    for (int i = 0; i < 2; ++i) {
      const int xx = clampi((x + i) / 2, 0, wm);
      const std::size_t q = coarse.index(xx, yy);
      const auto v = coarse.pixel(q);
      const int k = j * 2 + i;
      gw[k] += g[0] * v[0] + g[1] * v[1] + g[2] * v[2];
      auto gc = gcoarse.pixel(q);
      gc[0] += w[k] * g[0];
      gc[1] += w[k] * g[1];
      gc[2] += w[k] * g[2];
    }
  }
}

void check_weights_match(const KernelField& weights, int w, int h) {
  if (weights.width() != w || weights.height() != h) {
    throw std::invalid_argument("dimension mismatch: kernel field vs image");
  }
}

// Core coarse-to-fine pass over an already built pyramid.
void reconstruct_levels(const PyramidStack& pyr, const KernelField& weights,
                        const RadianceImage* prev,
                        std::array<RadianceImage, kPyramidLevels>& recon) {
  for (int l = kPyramidLevels - 1; l >= 0; --l) {
    const KernelLevel& kl = weights.levels[l];
    const RadianceImage& in = pyr.levels[l];
    if (in.width() != kl.width || in.height() != kl.height) {
      throw std::invalid_argument("pyramid level does not match kernel field");
    }
    RadianceImage& out = recon[l];
    out = RadianceImage(kl.width, kl.height);
    const RadianceImage* coarse = kl.upsample ? &recon[l + 1] : nullptr;
    const bool temporal = kl.temporal;
    const int toff = kl.temporal_offset();
    parallel_for(kl.height, [&](std::ptrdiff_t yy) {
      const int y = static_cast<int>(yy);
      for (int x = 0; x < kl.width; ++x) {
        const std::size_t i = out.index(x, y);
        const double* w = kl.values.data() + i * kl.stride;
        double acc[3] = {0, 0, 0};
        gather_pixel(in, x, y, w, acc);
        if (coarse) upsample_pixel(*coarse, x, y, w + KernelLevel::kUpsampleOffset, acc);
        if (temporal) gather_pixel(*prev, x, y, w + toff, acc);
        auto o = out.pixel(i);
        o[0] = acc[0];
        o[1] = acc[1];
        o[2] = acc[2];
      }
    });
  }
}

}  // namespace

RadianceImage gather5(const RadianceImage& image, std::span<const double> weights,
                      int stride, int offset) {
  if (weights.size() < image.pixel_count() * static_cast<std::size_t>(stride)) {
    throw std::invalid_argument("gather5: not enough weights");
  }
  RadianceImage out(image.width(), image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const std::size_t i = out.index(x, y);
      double acc[3] = {0, 0, 0};
      gather_pixel(image, x, y, weights.data() + i * stride + offset, acc);
      for (int c = 0; c < 3; ++c) out.pixel(i)[c] = acc[c];
    }
  }
  return out;
}

RadianceImage upsample2(const RadianceImage& coarse, int fine_width,
                        int fine_height, std::span<const double> weights,
                        int stride, int offset) {
  if (weights.size() <
      static_cast<std::size_t>(fine_width) * fine_height * stride) {
    throw std::invalid_argument("upsample2: not enough weights");
  }
  RadianceImage out(fine_width, fine_height);
  for (int y = 0; y < fine_height; ++y) {
    for (int x = 0; x < fine_width; ++x) {
      const std::size_t i = out.index(x, y);
      double acc[3] = {0, 0, 0};
      upsample_pixel(coarse, x, y, weights.data() + i * stride + offset, acc);
      for (int c = 0; c < 3; ++c) out.pixel(i)[c] = acc[c];
    }
  }
  return out;
}

RadianceImage reconstruct(const PyramidStack& pyramid,
                          const KernelField& weights,
                          const RadianceImage* prev_warped) {
  check_weights_match(weights, pyramid.levels[0].width(),
                      pyramid.levels[0].height());
  if (weights.temporal && prev_warped == nullptr) {
    throw std::invalid_argument(
        "reconstruct: temporal kernels need the warped previous frame");
  }
  if (weights.temporal) {
    require_same_shape(pyramid.levels[0], *prev_warped, "reconstruct history");
  }
  std::array<RadianceImage, kPyramidLevels> recon;
  reconstruct_levels(pyramid, weights, prev_warped, recon);
  return std::move(recon[0]);
}

RadianceImage reconstruct(const RadianceImage& noisy, const KernelField& weights,
                          const RadianceImage* prev_warped,
                          const DemodMap* demod, FilterTape* tape) {
  const int w = noisy.width();
  const int h = noisy.height();
  check_weights_match(weights, w, h);
  if (weights.temporal && prev_warped == nullptr) {
    throw std::invalid_argument(
        "reconstruct: temporal kernels need the warped previous frame");
  }
  if (weights.temporal) require_same_shape(noisy, *prev_warped, "reconstruct history");

  FilterTape local;
  FilterTape& t = tape ? *tape : local;
  t.weights = weights;
  t.demodulated = demod != nullptr;
  t.has_prev = weights.temporal;

  RadianceImage input = noisy;
  if (demod) {
    require_same_shape(noisy, *demod, "reconstruct demodulation map");
    t.demod_raw = demod->retag<GenericTag>();
    t.demod = RgbField(w, h);
    auto d = t.demod.values();
    const auto raw = demod->values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::max(raw[i], kDemodFloor);
    auto in = input.values();
    for (std::size_t i = 0; i < in.size(); ++i) in[i] /= d[i];
  }
  if (t.has_prev) {
    t.prev = *prev_warped;
    if (demod) {
      auto pv = t.prev.values();
      const auto d = t.demod.values();
      for (std::size_t i = 0; i < pv.size(); ++i) pv[i] /= d[i];
    }
  } else {
    t.prev = RadianceImage();
  }
  t.pyramid = build_pyramid(input);
  reconstruct_levels(t.pyramid, weights, t.has_prev ? &t.prev : nullptr, t.recon);

  RadianceImage out = t.recon[0];
  if (demod) {
    auto o = out.values();
    const auto d = t.demod.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= d[i];
  }
  return out;
}

FilterGradients reconstruct_backward(const FilterTape& tape,
                                     const RgbField& upstream) {
  const KernelField& weights = tape.weights;
  const int w = weights.width();
  const int h = weights.height();
  if (upstream.width() != w || upstream.height() != h) {
    throw std::invalid_argument("dimension mismatch: upstream vs filter");
  }

  FilterGradients out;
  out.demod = RgbField(w, h);
  out.noisy = RgbField(w, h);
  out.prev = RgbField(w, h);

  // Gradient with respect to recon[0] (demodulated domain).
  RgbField g_top = upstream;
  if (tape.demodulated) {
    auto g = g_top.values();
    const auto d = tape.demod.values();
    const auto r = tape.recon[0].values();
    auto gd = out.demod.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      gd[i] = upstream.values()[i] * r[i];
      g[i] *= d[i];
    }
  }

  KernelField grad_w = make_kernel_field(w, h, weights.temporal, 0.0);
  std::array<RgbField, kPyramidLevels> g_recon;
  std::array<RgbField, kPyramidLevels> g_level;
  g_recon[0] = std::move(g_top);
  for (int l = 0; l < kPyramidLevels; ++l) {
    const KernelLevel& kl = weights.levels[l];
    g_level[l] = RgbField(kl.width, kl.height);
    if (l + 1 < kPyramidLevels) {
      const KernelLevel& kc = weights.levels[l + 1];
      g_recon[l + 1] = RgbField(kc.width, kc.height);
    }
  }

  RgbField g_prev_demod(w, h);
  for (int l = 0; l < kPyramidLevels; ++l) {
    const KernelLevel& kl = weights.levels[l];
    KernelLevel& gl = grad_w.levels[l];
    const RadianceImage& in = tape.pyramid.levels[l];
    const int toff = kl.temporal_offset();
    for (int y = 0; y < kl.height; ++y) {
      for (int x = 0; x < kl.width; ++x) {
        const std::size_t i = in.index(x, y);
        const auto gp = g_recon[l].pixel(i);
        const double g[3] = {gp[0], gp[1], gp[2]};
        if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0) continue;
        const double* wv = kl.values.data() + i * kl.stride;
        double* gw = gl.values.data() + i * gl.stride;
        gather_pixel_backward(in, x, y, wv, g, gw, g_level[l]);
        if (kl.upsample) {
          upsample_pixel_backward(tape.recon[l + 1], x, y,
                                  wv + KernelLevel::kUpsampleOffset, g,
                                  gw + KernelLevel::kUpsampleOffset,
                                  g_recon[l + 1]);
        }
        if (kl.temporal) {
          gather_pixel_backward(tape.prev, x, y, wv + toff, g, gw + toff,
                                g_prev_demod);
        }
      }
    }
  }

  // Pooling adjoint: each level pixel spreads its gradient evenly over the
  // contributing full-resolution pixels.
  RgbField g_input = g_level[0];
  for (int l = 1; l < kPyramidLevels; ++l) {
    const int step = 1 << l;
    const RgbField& gl = g_level[l];
    for (int y = 0; y < gl.height(); ++y) {
      const int y1 = std::min(h, (y + 1) * step);
      for (int x = 0; x < gl.width(); ++x) {
        const int x1 = std::min(w, (x + 1) * step);
        const double inv = 1.0 / ((x1 - x * step) * (y1 - y * step));
        const auto g = gl.pixel(gl.index(x, y));
        for (int yy = y * step; yy < y1; ++yy) {
          for (int xx = x * step; xx < x1; ++xx) {
            auto gi = g_input.pixel(g_input.index(xx, yy));
            gi[0] += g[0] * inv;
            gi[1] += g[1] * inv;
            gi[2] += g[2] * inv;
          }
        }
      }
    }
  }

  if (tape.demodulated) {
    const auto d = tape.demod.values();
    const auto raw = tape.demod_raw.values();
    const auto x0 = tape.pyramid.levels[0].values();
    auto gn = out.noisy.values();
    auto gd = out.demod.values();
    const auto gi = g_input.values();
    for (std::size_t i = 0; i < gn.size(); ++i) {
      gn[i] = gi[i] / d[i];
      gd[i] -= gi[i] * x0[i] / d[i];
    }
    if (tape.has_prev) {
      const auto pv = tape.prev.values();
      const auto gpd = g_prev_demod.values();
      auto gp = out.prev.values();
      for (std::size_t i = 0; i < gp.size(); ++i) {
        gp[i] = gpd[i] / d[i];
        gd[i] -= gpd[i] * pv[i] / d[i];
      }
    }
    // The floor makes the map locally constant.
    for (std::size_t i = 0; i < gd.size(); ++i) {
      if (raw[i] < kDemodFloor) gd[i] = 0.0;
    }
  } else {
    out.noisy = std::move(g_input);
    out.prev = std::move(g_prev_demod);
  }

  out.logits = normalize_kernels_backward(weights, grad_w);
  return out;
}

void save_kernel_field(const KernelField& field,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sparse-kernel-field 1\n";
  out << "width = " << field.width() << "\n";
  out << "height = " << field.height() << "\n";
  out << "temporal = " << (field.temporal ? 1 : 0) << "\n";
  for (int l = 0; l < kPyramidLevels; ++l) {
    const KernelLevel& lv = field.levels[l];
    out << "level" << l << " = " << lv.width << " " << lv.height << " "
        << lv.stride << "\n";
  }
  out << "end\n";
  for (const KernelLevel& lv : field.levels) {
    for (double v : lv.values) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      if constexpr (std::endian::native != std::endian::little) {
        bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) |
               (bits << 24);
      }
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

KernelField load_kernel_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "sparse-kernel-field 1") {
    throw FormatError(path.string() + ": not a kernel field file");
  }
  int width = 0, height = 0, temporal = 0;
  std::array<int, kPyramidLevels * 3> dims{};
  while (std::getline(in, line) && line != "end") {
    std::istringstream ls(line);
    std::string key, eq;
    ls >> key >> eq;
    if (key == "width") ls >> width;
    else if (key == "height") ls >> height;
    else if (key == "temporal") ls >> temporal;
    else if (key.rfind("level", 0) == 0 && key.size() == 6) {
      const int l = key[5] - '0';
      if (l < 0 || l >= kPyramidLevels) throw FormatError("bad level index");
      ls >> dims[l * 3] >> dims[l * 3 + 1] >> dims[l * 3 + 2];
    }
    if (!ls) throw FormatError(path.string() + ": malformed header line: " + line);
  }
  if (line != "end" || width <= 0 || height <= 0) {
    throw FormatError(path.string() + ": malformed kernel field header");
  }
  KernelField kf = make_kernel_field(width, height, temporal != 0);
  for (int l = 0; l < kPyramidLevels; ++l) {
    const KernelLevel& lv = kf.levels[l];
    if (dims[l * 3] != lv.width || dims[l * 3 + 1] != lv.height ||
        dims[l * 3 + 2] != lv.stride) {
      throw FormatError(path.string() + ": level layout does not match dims");
    }
  }
  for (KernelLevel& lv : kf.levels) {
    for (double& v : lv.values) {
      std::uint32_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), 4)) {
        throw FormatError(path.string() + ": truncated kernel payload");
      }
      if constexpr (std::endian::native != std::endian::little) {
        bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) |
               (bits << 24);
      }
      v = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return kf;
}

}  // namespace sparse
