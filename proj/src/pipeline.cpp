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

#include "sparse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sparse/rng.hpp"
#include "sparse/warp.hpp"

namespace sparse {

namespace {

constexpr std::uint64_t kBankLabel = 0xba4c;
constexpr std::uint64_t kAllocationLabel = 0xa110c;

void check_context(const PipelineContext& ctx) {
  if (ctx.scene == nullptr) throw std::invalid_argument("pipeline has no scene");
  if (ctx.frames != 1 && ctx.frames != 2) {
    throw std::invalid_argument("pipeline windows have 1 or 2 frames");
  }
  if (ctx.frames > ctx.scene->frames) {
    throw std::invalid_argument("scene has fewer frames than the window");
  }
  if (ctx.allocation == AllocationMode::kDithered && ctx.dither == nullptr) {
    throw std::invalid_argument("dithered allocation needs a dither mask");
  }
}

}  // namespace

ModelParams initial_params(const SceneSpec& scene, int frames) {
  ModelParams p;
  p.scores = ScalarField(scene.width(), scene.height(), 0.0);
  p.kernel_logits = make_kernel_field(scene.width(), scene.height(), frames > 1);
  p.demod_logits = RgbField(scene.width(), scene.height());
  const auto a = scene.albedo.values();
  auto d = p.demod_logits.values();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = std::log(std::max(a[i], kDemodFloor));
  }
  return p;
}

KernelField without_temporal(const KernelField& logits) {
  if (!logits.temporal) return logits;
  KernelField out = make_kernel_field(logits.width(), logits.height(), false);
  for (int l = 0; l < kPyramidLevels; ++l) {
    const KernelLevel& src = logits.levels[l];
    KernelLevel& dst = out.levels[l];
    for (std::size_t i = 0; i < dst.pixel_count(); ++i) {
      const auto s = src.pixel(i);
      auto d = dst.pixel(i);
      std::copy(s.begin(), s.begin() + d.size(), d.begin());
    }
  }
  return out;
}

void accumulate_without_temporal(KernelField& full, const KernelField& partial) {
  for (int l = 0; l < kPyramidLevels; ++l) {
    KernelLevel& dst = full.levels[l];
    const KernelLevel& src = partial.levels[l];
    if (dst.pixel_count() != src.pixel_count() || src.stride > dst.stride) {
      throw std::invalid_argument("kernel gradient layout mismatch");
    }
    for (std::size_t i = 0; i < dst.pixel_count(); ++i) {
      const auto s = src.pixel(i);
      auto d = dst.pixel(i);
      for (std::size_t k = 0; k < s.size(); ++k) d[k] += s[k];
    }
  }
}

FilterParams prepare_filter(const ModelParams& params, int frames) {
  FilterParams f;
  if (frames > 1) {
    if (!params.kernel_logits.temporal) {
      throw std::invalid_argument("two-frame windows need temporal kernels");
    }
    f.temporal = normalize_kernels(params.kernel_logits);
    f.first = normalize_kernels(without_temporal(params.kernel_logits));
  } else {
    f.first = normalize_kernels(without_temporal(params.kernel_logits));
  }
  f.demod = DemodMap(params.demod_logits.width(), params.demod_logits.height());
  const auto z = params.demod_logits.values();
  auto d = f.demod.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::exp(z[i]);
  return f;
}

int bank_size_for(const DensityMap& density, double headroom) {
  double smax = 0.0;
  for (double s : density.spp.values()) smax = std::max(smax, s);
  const double need = std::floor(smax + headroom) + 1.0;
  if (!(need <= kMaxBankSamples)) {
    throw std::runtime_error("density needs more than " +
                             std::to_string(kMaxBankSamples) +
                             " samples at one pixel (max s = " +
                             std::to_string(smax) + ")");
  }
  return next_power_of_two(static_cast<int>(need));
}

WindowDraw make_window_draw(const PipelineContext& ctx, std::uint64_t seed,
                            int count) {
  check_context(ctx);
  WindowDraw d;
  const std::uint64_t bank_seed = derive_seed(seed, kBankLabel);
  for (int f = 0; f < ctx.frames; ++f) {
    d.banks.push_back(generate_bank(*ctx.scene, count, bank_seed,
                                    static_cast<std::uint64_t>(f)));
  }
  d.allocation_seed = derive_seed(seed, kAllocationLabel);
  return d;
}

PipelineTargets make_targets(const PipelineContext& ctx) {
  check_context(ctx);
  PipelineTargets t;
  t.reference = tonemap(ctx.scene->ground_truth, ctx.tmo);
  t.mask = make_mask(ctx.mask_kind, t.reference);
  return t;
}

double window_loss(const PipelineContext& ctx, const PipelineTargets& targets,
                   const DensityMap& density, const FilterParams& filter,
                   const WindowDraw& draw, bool eval_mode,
                   WindowGradients* grads, WindowOutputs* outputs) {
  check_context(ctx);
  const SceneSpec& scene = *ctx.scene;
  const int frames = ctx.frames;
  if (static_cast<int>(draw.banks.size()) < frames) {
    throw std::invalid_argument("window draw has too few banks");
  }
  EstimatorConfig ecfg = ctx.estimator;
  ecfg.eval_mode = eval_mode;
  const bool backward = grads != nullptr && !eval_mode;

  std::vector<SampleAllocation> alloc(frames);
  std::vector<EstimatorResult> est(frames);
  for (int f = 0; f < frames; ++f) {
    AllocationRequest req;
    req.mode = ctx.allocation;
    req.mask = ctx.dither;
    req.frame = static_cast<std::uint64_t>(f);
    req.seed = draw.allocation_seed;
    req.rule = ecfg.take_rule();
    alloc[f] = allocate(density, req);
    est[f] = estimate(density, alloc[f], draw.banks[f], ecfg, &scene.ground_truth);
  }

  const LdrImage& ref = targets.reference;
  const MaskImage& mask = targets.mask;
  const std::size_t n = density.spp.pixel_count();

  FilterTape tape0;
  const RadianceImage out0 =
      reconstruct(est[0].noisy, filter.first, nullptr, &filter.demod,
                  backward ? &tape0 : nullptr);
  const LdrImage ldr0 = tonemap(out0, ctx.tmo);
  const LossMap spatial0 = spatial_loss(ldr0, ref, mask);

  double loss = spatial0.value;
  WindowOutputs local;
  WindowOutputs& outs = outputs ? *outputs : local;
  outs.hdr = {out0};
  outs.ldr = {ldr0};
  outs.spatial_first = spatial0.value;

  if (frames == 1) {
    if (backward) {
      const ScalarField w(ldr0.width(), ldr0.height(), 1.0 / static_cast<double>(n));
      const RgbField g_ldr = spatial_map_backward(ldr0, ref, mask, w);
      const RgbField g_hdr = tonemap_backward(out0, ctx.tmo, g_ldr).radiance;
      const FilterGradients fb = reconstruct_backward(tape0, g_hdr);
      grads->density = ScalarField(density.width(), density.height());
      for (std::size_t i = 0; i < n; ++i) {
        double g = 0.0;
        for (int c = 0; c < 3; ++c) {
          g += fb.noisy.pixel(i)[c] * est[0].grad_s.pixel(i)[c];
        }
        grads->density.pixel(i)[0] = g;
      }
      grads->first = fb.logits;
      grads->temporal = KernelField();
      grads->demod = fb.demod;
    }
    if (outputs) outputs->allocations = std::move(alloc);
    return loss;
  }

  const MotionField& motion = scene.motion.at(0);
  const auto history = warp(out0, motion);
  FilterTape tape1;
  const RadianceImage out1 =
      reconstruct(est[1].noisy, filter.temporal, &history.image, &filter.demod,
                  backward ? &tape1 : nullptr);
  const LdrImage ldr1 = tonemap(out1, ctx.tmo);
  const LossMap spatial1 = spatial_loss(ldr1, ref, mask);
  const auto ldr0_warped = warp(ldr0, motion);
  const auto ref_warped = warp(ref, motion);
  const LossMap temporal1 = temporal_loss(ldr1, ldr0_warped.image, ref,
                                          ref_warped.image,
                                          &ldr0_warped.validity);
  const CombinedLoss combined1 = combined_loss(spatial1, temporal1);
  loss = 0.5 * (spatial0.value + combined1.loss.value);
  outs.hdr.push_back(out1);
  outs.ldr.push_back(ldr1);
  outs.combined_last = combined1.loss.value;
  if (outputs) outputs->allocations = std::move(alloc);

  if (!backward) return loss;

  CombinedLossWeights cw = combined_loss_weights(combined1);
  for (double& v : cw.spatial.values()) v *= 0.5;
  for (double& v : cw.temporal.values()) v *= 0.5;
  RgbField g_ldr1 = spatial_map_backward(ldr1, ref, mask, cw.spatial);
  const TemporalLossGradient tg =
      temporal_map_backward(ldr1, ldr0_warped.image, ref, ref_warped.image,
                            &ldr0_warped.validity, cw.temporal);
  {
    auto a = g_ldr1.values();
    const auto b = tg.out.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
  const ScalarField w0(ldr0.width(), ldr0.height(), 0.5 / static_cast<double>(n));
  RgbField g_ldr0 = spatial_map_backward(ldr0, ref, mask, w0);
  {
    const RgbField back = warp_adjoint(tg.out_prev, motion);
    auto a = g_ldr0.values();
    const auto b = back.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }

  const RgbField g_out1 = tonemap_backward(out1, ctx.tmo, g_ldr1).radiance;
  const FilterGradients fb1 = reconstruct_backward(tape1, g_out1);
  RgbField g_out0 = tonemap_backward(out0, ctx.tmo, g_ldr0).radiance;
  {
    const RgbField back = warp_adjoint(fb1.prev, motion);
    auto a = g_out0.values();
    const auto b = back.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
  const FilterGradients fb0 = reconstruct_backward(tape0, g_out0);

  grads->density = ScalarField(density.width(), density.height());
  for (std::size_t i = 0; i < n; ++i) {
    double g = 0.0;
    for (int c = 0; c < 3; ++c) {
      g += fb0.noisy.pixel(i)[c] * est[0].grad_s.pixel(i)[c];
      g += fb1.noisy.pixel(i)[c] * est[1].grad_s.pixel(i)[c];
    }
    grads->density.pixel(i)[0] = g;
  }
  grads->first = fb0.logits;
  grads->temporal = fb1.logits;
  grads->demod = fb0.demod;
  {
    auto a = grads->demod.values();
    const auto b = fb1.demod.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
  return loss;
}

class PipelineObjective::PipelineDraw : public DensityObjective::Draw {
 public:
  PipelineDraw(const PipelineObjective& owner, std::uint64_t seed)
      : owner_(owner),
        draw_(make_window_draw(owner.ctx_, seed, owner.bank_samples_)) {}

  double loss(const DensityMap& density) const override {
    return window_loss(owner_.ctx_, owner_.targets_, density, owner_.filter_,
                       draw_, false, nullptr, nullptr);
  }

  double loss_and_gradient(const DensityMap& density,
                           ScalarField& grad) const override {
    WindowGradients g;
    const double l = window_loss(owner_.ctx_, owner_.targets_, density,
                                 owner_.filter_, draw_, false, &g, nullptr);
    grad = std::move(g.density);
    return l;
  }

 private:
  const PipelineObjective& owner_;
  WindowDraw draw_;
};

PipelineObjective::PipelineObjective(const PipelineContext& ctx,
                                     FilterParams filter, int bank_samples)
    : ctx_(ctx), filter_(std::move(filter)), bank_samples_(bank_samples) {
  ctx_.frames = 1;
  targets_ = make_targets(ctx_);
  if (filter_.first.width() != ctx_.scene->width() ||
      filter_.first.height() != ctx_.scene->height()) {
    throw std::invalid_argument("objective filter does not match the scene");
  }
  if (!is_power_of_two(bank_samples) || bank_samples > kMaxBankSamples) {
    throw std::invalid_argument("objective bank size must be a power of two <= 256");
  }
}

std::unique_ptr<DensityObjective::Draw> PipelineObjective::draw(
    std::uint64_t seed) const {
  return std::make_unique<PipelineDraw>(*this, seed);
}

}  // namespace sparse
