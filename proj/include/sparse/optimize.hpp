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

#include "sparse/config.hpp"
#include "sparse/pipeline.hpp"

namespace sparse {

/// Trainable budget range in spp.
inline constexpr double kMinBudget = 0.11;
inline constexpr double kMaxBudget = 4.0;

struct RunConfig {
  std::string scene = "checker-spike";
  int width = 64;
  int height = 64;
  double budget = 0.25;
  EstimatorConfig estimator;
  int steps = 500;
  double learning_rate = 0.05;
  double weight_decay = 0.02;
  double beta1 = 0.8;
  double beta2 = 0.985;
  MaskKind mask = MaskKind::kUniform;
  TmoParams tmo;
  /// Draw a fresh tone mapper every step from tmo_seed; evaluation keeps `tmo`.
  bool tmo_augment = false;
  std::uint64_t tmo_seed = 0;
  std::uint64_t seed = 1;
  int frames = 2;
  AllocationMode allocation = AllocationMode::kStochastic;
  int dither_tile = 64;
  /// false freezes the density at uniform (baseline).
  bool adaptive = true;
  /// Gaussian sigma (pixels) applied to the scores before normalization;
  /// pools the per-pixel gradient over a neighbourhood. 0 disables.
  double score_smoothing = 0.0;
  /// Learning-rate multiplier of the density scores.
  double score_lr_scale = 1.0;
  bool optimize_kernels = true;
  bool optimize_demod = true;
  /// Learning-rate multiplier of the demodulation logits.
  double demod_lr_scale = 1.0;
  int eval_windows = 16;
  int density_bins = 12;
  double divergence_factor = 10.0;
  int divergence_patience = 50;

  void validate() const;
  static RunConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
};

/// Moment-based optimizer with decoupled weight decay.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double epsilon = 1e-8);

  /// Updates params in place. `decay` is the decoupled weight decay rate.
  void step(std::vector<double>& moments1, std::vector<double>& moments2,
            std::span<double> params, std::span<const double> grads,
            double lr, double decay, long long t) const;

 private:
  double beta1_;
  double beta2_;
  double epsilon_;
};

/// lr * (1 + cos(pi * step / steps)) / 2.
double cosine_lr(double base, int step, int steps) noexcept;

struct OptimState {
  ModelParams params;
  std::vector<double> m_scores, v_scores;
  std::vector<double> m_kernels, v_kernels;
  std::vector<double> m_demod, v_demod;
  long long step = 0;
};

struct RunResult {
  RunConfig config;
  std::vector<double> loss_curve;
  OptimState state;
  DensityMap density;
  /// Eval-mode outputs of the last frame of the first evaluation window.
  RadianceImage final_hdr;
  LdrImage final_ldr;
  /// Per-pixel MAE in the display domain, averaged over evaluation windows
  /// and frames.
  ScalarField error_map;
  double final_mae = 0.0;
  double final_psnr = 0.0;
  /// Mean eval-mode window loss.
  double eval_loss = 0.0;
  /// Mean train-mode window loss at the final parameters, same draws.
  double train_loss = 0.0;
  std::vector<DensityBin> density_table;
  int steps_completed = 0;
  bool diverged = false;
  std::string diagnostic;
};

/// Full optimization. Never throws on divergence; check `diverged`.
RunResult run(const RunConfig& config);

/// run() with the density frozen at uniform.
RunResult uniform_baseline(RunConfig config);

/// loss.csv, density.pfm, final.png, final.pfm, error.pfm, report.csv,
/// error_vs_density.csv, kernels.bin and the resolved run.cfg.
void write_run_artifacts(const RunResult& result,
                         const std::filesystem::path& dir);

/// Evaluation of fixed parameters: eval-mode and train-mode window losses,
/// display-domain error map and metrics.
struct EvaluationResult {
  double eval_loss = 0.0;
  double train_loss = 0.0;
  double mae = 0.0;
  double psnr = 0.0;
  ScalarField error_map;
  RadianceImage final_hdr;
  LdrImage final_ldr;
};
EvaluationResult evaluate_params(const RunConfig& config, const SceneSpec& scene,
                                 const ModelParams& params, int windows);

struct GradientComparisonRow {
  EstimatorVariant variant = EstimatorVariant::kRelaxed;
  double cosine_similarity = 0.0;
  double final_loss = 0.0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  int divergences = 0;
  int runs = 0;
};

struct GradientComparisonOptions {
  int width = 16;
  int height = 16;
  /// Draws for both the MC gradient and the finite-difference reference.
  int draws = 10000;
  double fd_eps = 0.05;
  /// Optimization runs per variant for the loss and divergence columns;
  /// 0 skips them.
  int seeds = 5;
  int steps = 200;
};

/// Builds the single-frame density objective used for gradient comparisons
/// (fixed initial filter). `variant` selects the forward/backward estimator.
PipelineObjective make_gradient_objective(const RunConfig& config,
                                          const SceneSpec& scene,
                                          EstimatorVariant variant,
                                          const DensityMap& density,
                                          double fd_eps);

/// Cosine similarity of each variant's MC gradient against the finite
/// difference gradient of the hard stochastic-rounding objective, plus
/// short optimization runs per variant.
std::vector<GradientComparisonRow> compare_estimators(
    const RunConfig& config, const std::vector<EstimatorVariant>& variants,
    const GradientComparisonOptions& options);

std::string comparison_csv(const std::vector<GradientComparisonRow>& rows);

}  // namespace sparse
