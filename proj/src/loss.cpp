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

#include "sparse/loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>


namespace sparse {

const char* to_string(MaskKind kind) noexcept {
  return kind == MaskKind::kUniform ? "uniform" : "gradmag";
}

MaskKind parse_mask_kind(const std::string& name) {
  if (name == "uniform") return MaskKind::kUniform;
  if (name == "gradmag") return MaskKind::kGradMag;
  throw std::invalid_argument("unknown mask kind '" + name + "'");
}

MaskImage make_mask(MaskKind kind, const LdrImage& ref) {
  const int w = ref.width();
  const int h = ref.height();
  MaskImage mask(w, h, 1.0);
  if (kind == MaskKind::kUniform || w == 0 || h == 0) return mask;

  ScalarField lum(w, h);
  for (std::size_t i = 0; i < ref.pixel_count(); ++i) {
    const auto p = ref.pixel(i);
    lum.pixel(i)[0] = (p[0] + p[1] + p[2]) / 3.0;
  }
  auto at = [&](int x, int y) {
    return lum.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1));
  };
  double total = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
      const double gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
      const double m = 1.0 / (1.0 + std::sqrt(gx * gx + gy * gy));
      mask.at(x, y) = m;
      total += m;
    }
  }
  const double scale = static_cast<double>(mask.pixel_count()) / total;
  for (double& v : mask.values()) v *= scale;
  return mask;
}

namespace {

inline double sign(double v) noexcept { return (v > 0.0) - (v < 0.0); }

}  // namespace

LossMap spatial_loss(const LdrImage& out, const LdrImage& ref,
                     const MaskImage& mask) {
  require_same_shape(out, ref, "spatial_loss");
  require_same_shape(out, mask, "spatial_loss mask");
  LossMap loss{ScalarField(out.width(), out.height()), 0.0};
  const std::size_t n = out.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    const auto o = out.pixel(i);
    const auto r = ref.pixel(i);
    const double e = (std::abs(o[0] - r[0]) + std::abs(o[1] - r[1]) +
                      std::abs(o[2] - r[2])) / 3.0;
    const double v = e * mask.pixel(i)[0];
    loss.per_pixel.pixel(i)[0] = v;
    loss.value += v;
  }
  if (n > 0) loss.value /= static_cast<double>(n);
  return loss;
}

RgbField spatial_map_backward(const LdrImage& out, const LdrImage& ref,
                              const MaskImage& mask, const ScalarField& weight) {
  require_same_shape(out, ref, "spatial_loss_backward");
  require_same_shape(out, mask, "spatial_loss_backward mask");
  require_same_shape(out, weight, "spatial_loss_backward weight");
  RgbField g(out.width(), out.height());
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    const auto o = out.pixel(i);
    const auto r = ref.pixel(i);
    const double m = mask.pixel(i)[0] * weight.pixel(i)[0] / 3.0;
    auto gi = g.pixel(i);
    for (int c = 0; c < 3; ++c) gi[c] = sign(o[c] - r[c]) * m;
  }
  return g;
}

RgbField spatial_loss_backward(const LdrImage& out, const LdrImage& ref,
                               const MaskImage& mask) {
  const ScalarField weight(out.width(), out.height(),
                           1.0 / static_cast<double>(out.pixel_count()));
  return spatial_map_backward(out, ref, mask, weight);
}

namespace {

void check_temporal_shapes(const LdrImage& out, const LdrImage& out_prev,
                           const LdrImage& ref, const LdrImage& ref_prev,
                           const ScalarField* validity) {
  require_same_shape(out, out_prev, "temporal_loss");
  require_same_shape(out, ref, "temporal_loss");
  require_same_shape(out, ref_prev, "temporal_loss");
  if (validity) require_same_shape(out, *validity, "temporal_loss validity");
}

inline bool valid_at(const ScalarField* validity, std::size_t i) noexcept {
  return validity == nullptr || validity->pixel(i)[0] > 0.0;
}

}  // namespace

LossMap temporal_loss(const LdrImage& out, const LdrImage& out_prev,
                      const LdrImage& ref, const LdrImage& ref_prev,
                      const ScalarField* validity) {
  check_temporal_shapes(out, out_prev, ref, ref_prev, validity);
  LossMap loss{ScalarField(out.width(), out.height()), 0.0};
  std::size_t valid = 0;
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    if (!valid_at(validity, i)) continue;
    ++valid;
    double e = 0.0;
    for (int c = 0; c < 3; ++c) {
      e += std::abs((out.pixel(i)[c] - out_prev.pixel(i)[c]) -
                    (ref.pixel(i)[c] - ref_prev.pixel(i)[c]));
    }
    loss.per_pixel.pixel(i)[0] = e / 3.0;
    loss.value += e / 3.0;
  }
  if (valid > 0) loss.value /= static_cast<double>(valid);
  return loss;
}

TemporalLossGradient temporal_map_backward(const LdrImage& out,
                                           const LdrImage& out_prev,
                                           const LdrImage& ref,
                                           const LdrImage& ref_prev,
                                           const ScalarField* validity,
                                           const ScalarField& weight) {
  check_temporal_shapes(out, out_prev, ref, ref_prev, validity);
  require_same_shape(out, weight, "temporal_loss weight");
  TemporalLossGradient g{RgbField(out.width(), out.height()),
                         RgbField(out.width(), out.height())};
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    if (!valid_at(validity, i)) continue;
    const double wi = weight.pixel(i)[0] / 3.0;
    for (int c = 0; c < 3; ++c) {
      const double d = sign((out.pixel(i)[c] - out_prev.pixel(i)[c]) -
                            (ref.pixel(i)[c] - ref_prev.pixel(i)[c])) * wi;
      g.out.pixel(i)[c] = d;
      g.out_prev.pixel(i)[c] = -d;
    }
  }
  return g;
}

TemporalLossGradient temporal_loss_backward(const LdrImage& out,
                                            const LdrImage& out_prev,
                                            const LdrImage& ref,
                                            const LdrImage& ref_prev,
                                            const ScalarField* validity) {
  std::size_t valid = 0;
  for (std::size_t i = 0; i < out.pixel_count(); ++i) valid += valid_at(validity, i);
  const double scale = valid > 0 ? 1.0 / static_cast<double>(valid) : 0.0;
  return temporal_map_backward(out, out_prev, ref, ref_prev, validity,
                               ScalarField(out.width(), out.height(), scale));
}

CombinedLoss combined_loss(const LossMap& spatial, const LossMap& temporal) {
  require_same_shape(spatial.per_pixel, temporal.per_pixel, "combined_loss");
  CombinedLoss out;
  out.loss.per_pixel = ScalarField(spatial.per_pixel.width(),
                                   spatial.per_pixel.height());
  const std::size_t n = spatial.per_pixel.pixel_count();
  out.temporal_selected.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = kTemporalWeight * temporal.per_pixel.pixel(i)[0];
    const double s = spatial.per_pixel.pixel(i)[0];
    const bool pick_t = t > s;
    out.temporal_selected[i] = pick_t;
    const double v = pick_t ? t : s;
    out.loss.per_pixel.pixel(i)[0] = v;
    out.loss.value += v;
  }
  if (n > 0) out.loss.value /= static_cast<double>(n);
  return out;
}

CombinedLossWeights combined_loss_weights(const CombinedLoss& combined) {
  const ScalarField& pp = combined.loss.per_pixel;
  CombinedLossWeights w{ScalarField(pp.width(), pp.height()),
                        ScalarField(pp.width(), pp.height())};
  const double inv = 1.0 / static_cast<double>(pp.pixel_count());
  for (std::size_t i = 0; i < pp.pixel_count(); ++i) {
    if (combined.temporal_selected[i]) {
      w.temporal.pixel(i)[0] = kTemporalWeight * inv;
    } else {
      w.spatial.pixel(i)[0] = inv;
    }
  }
  return w;
}

double mae(const LdrImage& out, const LdrImage& ref) {
  require_same_shape(out, ref, "mae");
  const auto a = out.values();
  const auto b = ref.values();
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return a.empty() ? 0.0 : total / static_cast<double>(a.size());
}

double psnr(const LdrImage& out, const LdrImage& ref) {
  require_same_shape(out, ref, "psnr");
  const auto a = out.values();
  const auto b = ref.values();
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  const double mse = a.empty() ? 0.0 : total / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

ScalarField absolute_error_map(const LdrImage& out, const LdrImage& ref) {
  require_same_shape(out, ref, "absolute_error_map");
  ScalarField e(out.width(), out.height());
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    const auto o = out.pixel(i);
    const auto r = ref.pixel(i);
    e.pixel(i)[0] = (std::abs(o[0] - r[0]) + std::abs(o[1] - r[1]) +
                     std::abs(o[2] - r[2])) / 3.0;
  }
  return e;
}

int density_bin_index(double ratio, int bins) noexcept {
  if (!(ratio > kRatioMin)) return 0;
  const double span = std::log2(kRatioMax / kRatioMin);
  const double t = (std::log2(ratio / kRatioMin) / span) * bins;
  // Ratios within rounding of an edge belong to the upper bin.
  const int k = static_cast<int>(std::floor(t + 1e-9));
  return std::clamp(k, 0, bins - 1);
}

std::vector<DensityBin> bin_error_by_density(const ScalarField& error,
                                             const ScalarField& density,
                                             double budget, int bins) {
  if (bins < 2) throw std::invalid_argument("error_vs_density needs >= 2 bins");
  if (!(budget > 0.0)) throw std::invalid_argument("budget must be > 0");
  require_same_shape(error, density, "error_vs_density");
  std::vector<DensityBin> table(static_cast<std::size_t>(bins));
  const double span = std::log2(kRatioMax / kRatioMin);
  for (int b = 0; b < bins; ++b) {
    table[b].lo = kRatioMin * std::exp2(span * b / bins);
    table[b].hi = kRatioMin * std::exp2(span * (b + 1) / bins);
  }
  std::vector<double> sums(table.size(), 0.0);
  for (std::size_t i = 0; i < error.pixel_count(); ++i) {
    const int b = density_bin_index(density.pixel(i)[0] / budget, bins);
    ++table[b].pixel_count;
    sums[b] += error.pixel(i)[0];
  }
  for (std::size_t b = 0; b < table.size(); ++b) {
    if (table[b].pixel_count > 0) {
      table[b].mae = sums[b] / static_cast<double>(table[b].pixel_count);
    }
  }
  return table;
}

std::vector<DensityBin> error_vs_density(const LdrImage& out,
                                         const LdrImage& ref,
                                         const ScalarField& density,
                                         double budget, int bins) {
  return bin_error_by_density(absolute_error_map(out, ref), density, budget,
                              bins);
}

std::string density_table_csv(const std::vector<DensityBin>& table) {
  std::string s = "bin_lo,bin_hi,pixel_count,mae\n";
  char line[128];
  for (const DensityBin& b : table) {
    std::snprintf(line, sizeof line, "%.9g,%.9g,%zu,%.9g\n", b.lo, b.hi,
                  b.pixel_count, b.mae);
    s += line;
  }
  return s;
}

PairedDensityReport compare_error_by_density(const ScalarField& adaptive_error,
                                             const ScalarField& baseline_error,
                                             const ScalarField& adaptive_density,
                                             double budget, int bins) {
  require_same_shape(adaptive_error, baseline_error, "paired error maps");
  PairedDensityReport r;
  r.adaptive = bin_error_by_density(adaptive_error, adaptive_density, budget, bins);
  r.baseline = bin_error_by_density(baseline_error, adaptive_density, budget, bins);
  const std::size_t n = adaptive_error.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    r.adaptive_mae += adaptive_error.pixel(i)[0];
    r.baseline_mae += baseline_error.pixel(i)[0];
  }
  if (n > 0) {
    r.adaptive_mae /= static_cast<double>(n);
    r.baseline_mae /= static_cast<double>(n);
  }
  r.high_bins_improved = true;
  for (std::size_t b = 0; b < r.adaptive.size(); ++b) {
    const DensityBin& a = r.adaptive[b];
    const DensityBin& base = r.baseline[b];
    if (a.pixel_count == 0) continue;
    const double weight = static_cast<double>(a.pixel_count);
    if (a.hi <= 1.0 + 1e-12) {
      r.low_ratio_increase += weight * (a.mae - base.mae);
      r.low_ratio_pixels += a.pixel_count;
    }
    if (a.lo >= 1.0 - 1e-12) {
      r.high_ratio_decrease += weight * (base.mae - a.mae);
      r.high_ratio_pixels += a.pixel_count;
    }
    if (a.lo >= 1.5 && !(a.mae < base.mae)) r.high_bins_improved = false;
  }
  if (r.low_ratio_pixels > 0) r.low_ratio_increase /= static_cast<double>(r.low_ratio_pixels);
  if (r.high_ratio_pixels > 0) r.high_ratio_decrease /= static_cast<double>(r.high_ratio_pixels);
  return r;
}

std::string paired_report_csv(const PairedDensityReport& r) {
  std::string s = "metric,value\n";
  char line[128];
  auto row = [&](const char* name, double v) {
    std::snprintf(line, sizeof line, "%s,%.9g\n", name, v);
    s += line;
  };
  row("adaptive_mae", r.adaptive_mae);
  row("baseline_mae", r.baseline_mae);
  row("relative_gain", r.relative_gain());
  row("low_ratio_increase", r.low_ratio_increase);
  row("low_ratio_pixels", static_cast<double>(r.low_ratio_pixels));
  row("high_ratio_decrease", r.high_ratio_decrease);
  row("high_ratio_pixels", static_cast<double>(r.high_ratio_pixels));
  row("high_bins_improved", r.high_bins_improved ? 1.0 : 0.0);
  return s;
}

void write_density_table(const std::vector<DensityBin>& table,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << density_table_csv(table);
}

}  // namespace sparse
