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
#include <memory>
#include <vector>

#include "sparse/density.hpp"
#include "sparse/estimators.hpp"
#include "sparse/loss.hpp"
#include "sparse/pyramid_filter.hpp"
#include "sparse/sample_bank.hpp"
#include "sparse/tonemap.hpp"

namespace sparse {

/// Fixed ingredients of the estimate -> filter -> tonemap -> loss chain.
struct PipelineContext {
  const SceneSpec* scene = nullptr;
  TmoParams tmo;
  MaskKind mask_kind = MaskKind::kUniform;
  EstimatorConfig estimator;
  AllocationMode allocation = AllocationMode::kStochastic;
  const DitherMask* dither = nullptr;
  /// 1 or 2. Frame 0 is filtered without history; frame 1 gathers from the
  /// warped output of frame 0.
  int frames = 2;
};

/// Free parameters of the sampler and denoiser.
struct ModelParams {
  ScalarField scores;
  /// Temporal group present iff the window has two frames.
  KernelField kernel_logits;
  /// demod = exp(demod_logits).
  RgbField demod_logits;
};

/// Scores 0 (uniform density), kernel logits 0, demodulation at the scene
/// albedo (floored at the demodulation floor).
ModelParams initial_params(const SceneSpec& scene, int frames);

/// Normalized filter weights and the demodulation map derived from params.
struct FilterParams {
  /// Frame without history (no temporal group).
  KernelField first;
  /// Frame with history; empty for single-frame windows.
  KernelField temporal;
  DemodMap demod;
};

FilterParams prepare_filter(const ModelParams& params, int frames);

/// Logits of the no-history field: the temporal group is dropped at level 0.
KernelField without_temporal(const KernelField& logits);
/// Adds a no-history gradient into a gradient laid out like `full`.
void accumulate_without_temporal(KernelField& full, const KernelField& partial);

/// Random inputs of one window. The banks must hold required_bank_samples()
/// of every density the window is evaluated at.
struct WindowDraw {
  std::vector<SampleBank> banks;  // one per frame
  std::uint64_t allocation_seed = 0;
};

/// Banks of `count` samples (a power of two) for every frame.
WindowDraw make_window_draw(const PipelineContext& ctx, std::uint64_t seed,
                            int count);

/// Bank size for a density map: next power of two above floor(max s) + 1.
/// Throws std::runtime_error if that exceeds kMaxBankSamples.
int bank_size_for(const DensityMap& density, double headroom = 0.0);

struct WindowGradients {
  ScalarField density;  // dL/ds
  KernelField first;    // dL/d logits of the no-history field
  KernelField temporal;
  RgbField demod;       // dL/d demod (map values, not logits)
};

struct WindowOutputs {
  std::vector<RadianceImage> hdr;
  std::vector<LdrImage> ldr;
  std::vector<SampleAllocation> allocations;
  double spatial_first = 0.0;
  double combined_last = 0.0;
};

/// Tonemapped reference and loss mask derived from a context.
struct PipelineTargets {
  LdrImage reference;
  MaskImage mask;
};
PipelineTargets make_targets(const PipelineContext& ctx);

/// Window loss: spatial loss of a single frame, or the mean of frame 0's
/// spatial loss and frame 1's combined loss. With `grads` the exact
/// backward pass runs as well (the estimator's gradient convention applies
/// to dL/ds). In eval mode the estimator uses hard decisions.
double window_loss(const PipelineContext& ctx, const PipelineTargets& targets,
                   const DensityMap& density, const FilterParams& filter,
                   const WindowDraw& draw, bool eval_mode,
                   WindowGradients* grads, WindowOutputs* outputs);

/// Single-frame objective of the density map with the filter held fixed;
/// the draw fixes the bank and the allocation variates.
class PipelineObjective : public DensityObjective {
 public:
  /// `ctx.frames` is forced to 1. `bank_samples` must cover every density
  /// the objective is evaluated at.
  PipelineObjective(const PipelineContext& ctx, FilterParams filter,
                    int bank_samples);

  std::unique_ptr<Draw> draw(std::uint64_t seed) const override;

 private:
  class PipelineDraw;
  PipelineContext ctx_;
  PipelineTargets targets_;
  FilterParams filter_;
  int bank_samples_;
};

}  // namespace sparse
