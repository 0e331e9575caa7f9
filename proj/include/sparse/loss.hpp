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
#include <string>
#include <vector>

#include "sparse/image.hpp"

namespace sparse {

/// Per-pixel non-negative loss weight with mean 1.
using MaskImage = ScalarField;

enum class MaskKind { kUniform, kGradMag };

const char* to_string(MaskKind kind) noexcept;
/// Accepts "uniform" and "gradmag".
MaskKind parse_mask_kind(const std::string& name);

/// uniform: all ones. gradmag: 1 / (1 + Sobel magnitude of the channel-mean
/// luminance of ref), rescaled to mean 1.
MaskImage make_mask(MaskKind kind, const LdrImage& ref);

struct LossMap {
  ScalarField per_pixel;
  double value = 0.0;
};

/// Channel mean of |out - ref| * m; value is the pixel mean.
LossMap spatial_loss(const LdrImage& out, const LdrImage& ref,
                     const MaskImage& mask);

/// d value / d out. Zero where out == ref.
RgbField spatial_loss_backward(const LdrImage& out, const LdrImage& ref,
                               const MaskImage& mask);

/// Channel mean of |(out - out_prev) - (ref - ref_prev)|, where the previous
/// frames are already warped. Pixels with validity 0 are zero in the map
/// and excluded from the mean. `validity` may be null (all valid).
LossMap temporal_loss(const LdrImage& out, const LdrImage& out_prev,
                      const LdrImage& ref, const LdrImage& ref_prev,
                      const ScalarField* validity);

struct TemporalLossGradient {
  RgbField out;
  RgbField out_prev;
};

/// Gradient of temporal_loss(...).value.
TemporalLossGradient temporal_loss_backward(const LdrImage& out,
                                            const LdrImage& out_prev,
                                            const LdrImage& ref,
                                            const LdrImage& ref_prev,
                                            const ScalarField* validity);

/// Gradient of sum_i weight_i * spatial_i with respect to out.
RgbField spatial_map_backward(const LdrImage& out, const LdrImage& ref,
                              const MaskImage& mask, const ScalarField& weight);

/// Gradient of sum_i weight_i * temporal_i (the per-pixel map).
TemporalLossGradient temporal_map_backward(const LdrImage& out,
                                           const LdrImage& out_prev,
                                           const LdrImage& ref,
                                           const LdrImage& ref_prev,
                                           const ScalarField* validity,
                                           const ScalarField& weight);

inline constexpr double kTemporalWeight = 1.25;

struct CombinedLoss {
  LossMap loss;
  /// 1 where the temporal term is the maximum, 0 where the spatial one is.
  std::vector<std::uint8_t> temporal_selected;
};

/// Per-pixel max(1.25 * temporal, spatial), averaged over all pixels.
CombinedLoss combined_loss(const LossMap& spatial, const LossMap& temporal);

/// Chain factors of the combined value with respect to the two per-pixel
/// maps: d combined / d spatial_i and d combined / d temporal_i.
struct CombinedLossWeights {
  ScalarField spatial;
  ScalarField temporal;
};
CombinedLossWeights combined_loss_weights(const CombinedLoss& combined);

double mae(const LdrImage& out, const LdrImage& ref);
/// Peak 1. Identical images give +infinity.
double psnr(const LdrImage& out, const LdrImage& ref);

/// Channel mean of |out - ref| per pixel.
ScalarField absolute_error_map(const LdrImage& out, const LdrImage& ref);

struct DensityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t pixel_count = 0;
  double mae = 0.0;
};

inline constexpr double kRatioMin = 1.0 / 16.0;
inline constexpr double kRatioMax = 16.0;

/// Log-spaced bins over [1/16, 16] of the sampling ratio s_i / budget;
/// ratios outside the range land in the end bins. Bin boundaries are fixed
/// so tables of different runs line up.
std::vector<DensityBin> bin_error_by_density(const ScalarField& error,
                                             const ScalarField& density,
                                             double budget, int bins);

/// Bin index of a sampling ratio under the layout above.
int density_bin_index(double ratio, int bins) noexcept;

std::vector<DensityBin> error_vs_density(const LdrImage& out,
                                         const LdrImage& ref,
                                         const ScalarField& density,
                                         double budget, int bins);

/// Paired comparison of two runs that share seeds, with both error maps
/// binned by the adaptive run's sampling ratio.
struct PairedDensityReport {
  std::vector<DensityBin> adaptive;
  std::vector<DensityBin> baseline;
  double adaptive_mae = 0.0;
  double baseline_mae = 0.0;
  /// Pixel-weighted mean of (adaptive - baseline) over bins with hi <= 1.
  double low_ratio_increase = 0.0;
  std::size_t low_ratio_pixels = 0;
  /// Pixel-weighted mean of (baseline - adaptive) over bins with lo >= 1.
  double high_ratio_decrease = 0.0;
  std::size_t high_ratio_pixels = 0;
  /// Every occupied bin with lo >= 1.5 has lower adaptive MAE.
  bool high_bins_improved = false;

  double relative_gain() const noexcept {
    return baseline_mae > 0.0 ? 1.0 - adaptive_mae / baseline_mae : 0.0;
  }
};

PairedDensityReport compare_error_by_density(const ScalarField& adaptive_error,
                                             const ScalarField& baseline_error,
                                             const ScalarField& adaptive_density,
                                             double budget, int bins);

/// `metric,value` rows of the scalar fields of a paired report.
std::string paired_report_csv(const PairedDensityReport& report);

/// `bin_lo,bin_hi,pixel_count,mae` with a header row.
std::string density_table_csv(const std::vector<DensityBin>& table);
void write_density_table(const std::vector<DensityBin>& table,
                         const std::filesystem::path& path);

}  // namespace sparse
