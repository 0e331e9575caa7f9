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

#include "sparse/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "sparse/image_io.hpp"
#include "sparse/rng.hpp"

namespace sparse {

namespace {

constexpr std::uint64_t kTrainLabel = 0x7a1;
constexpr std::uint64_t kEvalLabel = 0xe7a1;
constexpr std::uint64_t kDitherLabel = 0xd17e;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

AllocationMode parse_allocation(const std::string& s) {
  if (s == "stochastic") return AllocationMode::kStochastic;
  if (s == "dithered") return AllocationMode::kDithered;
  throw std::invalid_argument("unknown allocation mode '" + s + "'");
}

const char* allocation_name(AllocationMode m) {
  return m == AllocationMode::kStochastic ? "stochastic" : "dithered";
}

}  // namespace

void RunConfig::validate() const {
  if (!(budget >= kMinBudget && budget <= kMaxBudget)) {
    throw std::invalid_argument("budget must lie in [0.11, 4] spp, got " +
                                fmt(budget));
  }
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (width < 1 || height < 1) throw std::invalid_argument("bad image size");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be finite and >= 0");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay < 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("optimizer betas must lie in [0,1)");
  }
  if (frames != 1 && frames != 2) throw std::invalid_argument("frames must be 1 or 2");
  if (eval_windows < 1) throw std::invalid_argument("eval_windows must be >= 1");
  if (density_bins < 2) throw std::invalid_argument("density_bins must be >= 2");
  if (!(divergence_factor > 1.0) || divergence_patience < 1) {
    throw std::invalid_argument("bad divergence guard settings");
  }
  if (!(demod_lr_scale >= 0.0)) throw std::invalid_argument("demod_lr_scale < 0");
  if (!(score_lr_scale >= 0.0)) throw std::invalid_argument("score_lr_scale < 0");
  if (!(score_smoothing >= 0.0) || score_smoothing > 64.0) {
    throw std::invalid_argument("score_smoothing must lie in [0, 64]");
  }
  estimator.validate();
  tmo.validate();
}

RunConfig RunConfig::from_config(const KeyValueConfig& cfg) {
  RunConfig r;
  r.scene = cfg.get_string("scene", r.scene);
  r.width = static_cast<int>(cfg.get_int("width", r.width));
  r.height = static_cast<int>(cfg.get_int("height", r.height));
  r.budget = cfg.get_double("budget", r.budget);
  r.estimator.variant = parse_estimator_variant(
      cfg.get_string("estimator", to_string(r.estimator.variant)));
  r.estimator.lambda = cfg.get_double("lambda", r.estimator.lambda);
  r.estimator.gumbel_temp = cfg.get_double("gumbel_temp", r.estimator.gumbel_temp);
  r.steps = static_cast<int>(cfg.get_int("steps", r.steps));
  r.learning_rate = cfg.get_double("learning_rate", r.learning_rate);
  r.weight_decay = cfg.get_double("weight_decay", r.weight_decay);
  r.beta1 = cfg.get_double("beta1", r.beta1);
  r.beta2 = cfg.get_double("beta2", r.beta2);
  r.mask = parse_mask_kind(cfg.get_string("mask", to_string(r.mask)));
  r.tmo.k = cfg.get_double("tmo_k", r.tmo.k);
  r.tmo.alpha = cfg.get_double("tmo_alpha", r.tmo.alpha);
  r.tmo.beta = cfg.get_double("tmo_beta", r.tmo.beta);
  r.tmo.toe = cfg.get_double("tmo_toe", r.tmo.toe);
  r.tmo.shoulder = cfg.get_double("tmo_shoulder", r.tmo.shoulder);
  r.tmo_augment = cfg.get_bool("tmo_augment", r.tmo_augment);
  r.tmo_seed = cfg.get_uint64("tmo_seed", r.tmo_seed);
  r.seed = cfg.get_uint64("seed", r.seed);
  r.frames = static_cast<int>(cfg.get_int("frames", r.frames));
  r.allocation = parse_allocation(
      cfg.get_string("allocation", allocation_name(r.allocation)));
  r.dither_tile = static_cast<int>(cfg.get_int("dither_tile", r.dither_tile));
  r.adaptive = cfg.get_bool("adaptive", r.adaptive);
  r.score_smoothing = cfg.get_double("score_smoothing", r.score_smoothing);
  r.score_lr_scale = cfg.get_double("score_lr_scale", r.score_lr_scale);
  r.optimize_kernels = cfg.get_bool("optimize_kernels", r.optimize_kernels);
  r.optimize_demod = cfg.get_bool("optimize_demod", r.optimize_demod);
  r.demod_lr_scale = cfg.get_double("demod_lr_scale", r.demod_lr_scale);
  r.eval_windows = static_cast<int>(cfg.get_int("eval_windows", r.eval_windows));
  r.density_bins = static_cast<int>(cfg.get_int("density_bins", r.density_bins));
  r.divergence_factor = cfg.get_double("divergence_factor", r.divergence_factor);
  r.divergence_patience =
      static_cast<int>(cfg.get_int("divergence_patience", r.divergence_patience));
  const std::string known[] = {
      "scene", "width", "height", "budget", "estimator", "lambda",
      "gumbel_temp", "steps", "learning_rate", "weight_decay", "beta1",
      "beta2", "mask", "tmo_k", "tmo_alpha", "tmo_beta", "tmo_toe",
      "tmo_shoulder", "tmo_augment", "tmo_seed", "seed", "frames",
      "allocation", "dither_tile", "adaptive", "score_smoothing",
      "score_lr_scale", "optimize_kernels",
      "optimize_demod", "demod_lr_scale", "eval_windows", "density_bins",
      "divergence_factor", "divergence_patience"};
  for (const auto& [key, value] : cfg.entries()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw std::invalid_argument("unknown run config key '" + key + "'");
    }
  }
  return r;
}

KeyValueConfig RunConfig::to_config() const {
  KeyValueConfig c;
  c.set("scene", scene);
  c.set("width", std::to_string(width));
  c.set("height", std::to_string(height));
  c.set("budget", fmt(budget));
  c.set("estimator", to_string(estimator.variant));
  c.set("lambda", fmt(estimator.lambda));
  c.set("gumbel_temp", fmt(estimator.gumbel_temp));
  c.set("steps", std::to_string(steps));
  c.set("learning_rate", fmt(learning_rate));
  c.set("weight_decay", fmt(weight_decay));
  c.set("beta1", fmt(beta1));
  c.set("beta2", fmt(beta2));
  c.set("mask", to_string(mask));
  c.set("tmo_k", fmt(tmo.k));
  c.set("tmo_alpha", fmt(tmo.alpha));
  c.set("tmo_beta", fmt(tmo.beta));
  c.set("tmo_toe", fmt(tmo.toe));
  c.set("tmo_shoulder", fmt(tmo.shoulder));
  c.set("tmo_augment", tmo_augment ? "true" : "false");
  c.set("tmo_seed", std::to_string(tmo_seed));
  c.set("seed", std::to_string(seed));
  c.set("frames", std::to_string(frames));
  c.set("allocation", allocation_name(allocation));
  c.set("dither_tile", std::to_string(dither_tile));
  c.set("adaptive", adaptive ? "true" : "false");
  c.set("score_smoothing", fmt(score_smoothing));
  c.set("score_lr_scale", fmt(score_lr_scale));
  c.set("optimize_kernels", optimize_kernels ? "true" : "false");
  c.set("optimize_demod", optimize_demod ? "true" : "false");
  c.set("demod_lr_scale", fmt(demod_lr_scale));
  c.set("eval_windows", std::to_string(eval_windows));
  c.set("density_bins", std::to_string(density_bins));
  c.set("divergence_factor", fmt(divergence_factor));
  c.set("divergence_patience", std::to_string(divergence_patience));
  return c;
}

AdamW::AdamW(double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void AdamW::step(std::vector<double>& m, std::vector<double>& v,
                 std::span<double> params, std::span<const double> grads,
                 double lr, double decay, long long t) const {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("AdamW: parameter/gradient size mismatch");
  }
  if (m.size() != params.size()) m.assign(params.size(), 0.0);
  if (v.size() != params.size()) v.assign(params.size(), 0.0);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
    v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
    const double mh = m[i] / c1;
    const double vh = v[i] / c2;
    params[i] -= lr * (mh / (std::sqrt(vh) + epsilon_) + decay * params[i]);
  }
}

double cosine_lr(double base, int step, int steps) noexcept {
  if (steps <= 0) return base;
  return 0.5 * base *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / steps));
}

namespace {

// Kernel fields are updated level by level against one flat moment buffer.
std::vector<double> flatten(const KernelField& f) {
  std::vector<double> out;
  out.reserve(f.parameter_count());
  for (const KernelLevel& l : f.levels) out.insert(out.end(), l.values.begin(), l.values.end());
  return out;
}

void unflatten(const std::vector<double>& flat, KernelField& f) {
  std::size_t off = 0;
  for (KernelLevel& l : f.levels) {
    std::copy(flat.begin() + off, flat.begin() + off + l.values.size(), l.values.begin());
    off += l.values.size();
  }
}

struct Setup {
  SceneSpec scene;
  DitherMask dither;
  PipelineContext ctx;
};

Setup make_setup(const RunConfig& config) {
  config.validate();
  Setup s;
  s.scene = builtin_scene(config.scene, config.width, config.height);
  s.ctx.tmo = config.tmo;
  s.ctx.mask_kind = config.mask;
  s.ctx.estimator = config.estimator;
  s.ctx.allocation = config.allocation;
  s.ctx.frames = std::min(config.frames, s.scene.frames);
  if (config.allocation == AllocationMode::kDithered) {
    s.dither = void_cluster_mask(config.dither_tile,
                                 derive_seed(config.seed, kDitherLabel));
  }
  return s;
}

void bind(Setup& s) {
  s.ctx.scene = &s.scene;
  s.ctx.dither = s.ctx.allocation == AllocationMode::kDithered ? &s.dither : nullptr;
}

DensityMap density_of(const RunConfig& config, const ModelParams& params) {
  if (!config.adaptive) {
    return normalize_density(
        ScalarField(params.scores.width(), params.scores.height(), 0.0),
        config.budget);
  }
  return normalize_density(gaussian_blur(params.scores, config.score_smoothing),
                           config.budget);
}

EvaluationResult evaluate_setup(const RunConfig& config, Setup& setup,
                                const ModelParams& params, int windows) {
  PipelineContext ctx = setup.ctx;
  ctx.tmo = config.tmo;
  const PipelineTargets targets = make_targets(ctx);
  const FilterParams filter = prepare_filter(params, ctx.frames);
  const DensityMap density = density_of(config, params);
  const int banks = bank_size_for(density);
  EvaluationResult r;
  r.error_map = ScalarField(setup.scene.width(), setup.scene.height());
  double sq = 0.0;
  std::size_t images = 0;
  for (int e = 0; e < windows; ++e) {
    const WindowDraw draw = make_window_draw(
        ctx, derive_seed(derive_seed(config.seed, kEvalLabel), e), banks);
    WindowOutputs outs;
    r.eval_loss += window_loss(ctx, targets, density, filter, draw, true,
                               nullptr, &outs);
    r.train_loss += window_loss(ctx, targets, density, filter, draw, false,
                                nullptr, nullptr);
    for (const LdrImage& ldr : outs.ldr) {
      const ScalarField err = absolute_error_map(ldr, targets.reference);
      auto acc = r.error_map.values();
      const auto ev = err.values();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += ev[i];
      const auto a = ldr.values();
      const auto b = targets.reference.values();
      for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
      ++images;
    }
    if (e == 0) {
      r.final_hdr = outs.hdr.back();
      r.final_ldr = outs.ldr.back();
    }
  }
  for (double& v : r.error_map.values()) v /= static_cast<double>(images);
  r.eval_loss /= windows;
  r.train_loss /= windows;
  double total = 0.0;
  for (double v : r.error_map.values()) total += v;
  r.mae = total / static_cast<double>(r.error_map.pixel_count());
  const double mse = sq / (static_cast<double>(images) *
                           r.final_ldr.values().size());
  r.psnr = mse > 0.0 ? 10.0 * std::log10(1.0 / mse)
                     : std::numeric_limits<double>::infinity();
  return r;
}

}  // namespace

EvaluationResult evaluate_params(const RunConfig& config, const SceneSpec& scene,
                                 const ModelParams& params, int windows) {
  Setup setup = make_setup(config);
  setup.scene = scene;
  setup.ctx.frames = std::min(config.frames, scene.frames);
  bind(setup);
  return evaluate_setup(config, setup, params, windows);
}

RunResult run(const RunConfig& config) {
  Setup setup = make_setup(config);
  bind(setup);
  PipelineContext& ctx = setup.ctx;
  const int frames = ctx.frames;

  RunResult res;
  res.config = config;
  OptimState& st = res.state;
  st.params = initial_params(setup.scene, frames);
  const AdamW adam(config.beta1, config.beta2);

  PipelineTargets targets = make_targets(ctx);
  double initial = 0.0;
  int over = 0;
  std::vector<double> kflat = flatten(st.params.kernel_logits);

  for (int t = 0; t < config.steps; ++t) {
    if (config.tmo_augment) {
      ctx.tmo = sample_tmo(derive_seed(config.tmo_seed, static_cast<std::uint64_t>(t)));
      targets = make_targets(ctx);
    }
    const FilterParams filter = prepare_filter(st.params, frames);
    const DensityMap density = density_of(config, st.params);
    if (budget_error(density) > 1e-9) {
      throw std::logic_error("density budget not conserved at step " +
                             std::to_string(t));
    }
    int banks = 0;
    try {
      banks = bank_size_for(density);
    } catch (const std::runtime_error& e) {
      res.diverged = true;
      res.diagnostic = "step " + std::to_string(t) + ": " + e.what();
      break;
    }
    const WindowDraw draw = make_window_draw(
        ctx, derive_seed(derive_seed(config.seed, kTrainLabel), t), banks);
    WindowGradients g;
    const double loss =
        window_loss(ctx, targets, density, filter, draw, false, &g, nullptr);
    res.loss_curve.push_back(loss);
    res.steps_completed = t + 1;

    if (!std::isfinite(loss)) {
      res.diverged = true;
      res.diagnostic = "step " + std::to_string(t) + ": non-finite loss";
      break;
    }
    if (t == 0) initial = loss;
    over = loss > config.divergence_factor * initial ? over + 1 : 0;
    if (over >= config.divergence_patience) {
      res.diverged = true;
      res.diagnostic = "step " + std::to_string(t) + ": loss " + fmt(loss) +
                       " above " + fmt(config.divergence_factor) +
                       "x the initial " + fmt(initial) + " for " +
                       std::to_string(over) + " consecutive steps";
      break;
    }

    ++st.step;
    const double lr = cosine_lr(config.learning_rate, t, config.steps);
    if (config.adaptive) {
      const ScalarField gs = gaussian_blur_adjoint(
          normalize_density_backward(density, g.density), config.score_smoothing);
      adam.step(st.m_scores, st.v_scores, st.params.scores.values(),
                gs.values(), lr * config.score_lr_scale, 0.0, st.step);
    }
    if (config.optimize_kernels) {
      KernelField gk = frames > 1 ? g.temporal
                                  : make_kernel_field(setup.scene.width(),
                                                      setup.scene.height(), false);
      accumulate_without_temporal(gk, g.first);
      const std::vector<double> gflat = flatten(gk);
      adam.step(st.m_kernels, st.v_kernels, kflat, gflat, lr,
                config.weight_decay, st.step);
      unflatten(kflat, st.params.kernel_logits);
    }
    if (config.optimize_demod && config.demod_lr_scale > 0.0) {
      RgbField gd = g.demod;
      auto gv = gd.values();
      const auto d = filter.demod.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= d[i];
      adam.step(st.m_demod, st.v_demod, st.params.demod_logits.values(),
                gd.values(), lr * config.demod_lr_scale, 0.0, st.step);
    }
  }

  res.density = density_of(config, st.params);
  EvaluationResult ev = evaluate_setup(config, setup, st.params, config.eval_windows);
  res.final_hdr = std::move(ev.final_hdr);
  res.final_ldr = std::move(ev.final_ldr);
  res.error_map = std::move(ev.error_map);
  res.final_mae = ev.mae;
  res.final_psnr = ev.psnr;
  res.eval_loss = ev.eval_loss;
  res.train_loss = ev.train_loss;
  res.density_table = bin_error_by_density(res.error_map, res.density.spp,
                                           config.budget, config.density_bins);
  return res;
}

RunResult uniform_baseline(RunConfig config) {
  config.adaptive = false;
  return run(config);
}

void write_run_artifacts(const RunResult& result,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "loss.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "loss.csv").string());
    out << "step,loss\n";
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
      out << i << "," << fmt(result.loss_curve[i]) << "\n";
    }
  }
  write_pfm(result.density.spp, dir / "density.pfm");
  write_pfm(result.final_hdr, dir / "final.pfm");
  write_png_srgb(result.final_ldr, dir / "final.png");
  write_pfm(result.error_map, dir / "error.pfm");
  write_density_table(result.density_table, dir / "error_vs_density.csv");
  save_kernel_field(result.state.params.kernel_logits, dir / "kernels.bin");
  write_pfm(result.state.params.demod_logits, dir / "demod_logits.pfm");
  result.config.to_config().save(dir / "run.cfg");

  double dmin = std::numeric_limits<double>::infinity();
  double dmax = 0.0;
  for (double v : result.density.spp.values()) {
    dmin = std::min(dmin, v);
    dmax = std::max(dmax, v);
  }
  std::ofstream out(dir / "report.csv", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "report.csv").string());
  out << "metric,value\n";
  out << "final_mae," << fmt(result.final_mae) << "\n";
  out << "final_psnr," << fmt(result.final_psnr) << "\n";
  out << "eval_loss," << fmt(result.eval_loss) << "\n";
  out << "train_loss," << fmt(result.train_loss) << "\n";
  out << "final_train_loss,"
      << fmt(result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << "\n";
  out << "steps_completed," << result.steps_completed << "\n";
  out << "diverged," << (result.diverged ? 1 : 0) << "\n";
  out << "density_min," << fmt(dmin) << "\n";
  out << "density_max," << fmt(dmax) << "\n";
  out << "budget_error," << fmt(budget_error(result.density)) << "\n";
}

PipelineObjective make_gradient_objective(const RunConfig& config,
                                          const SceneSpec& scene,
                                          EstimatorVariant variant,
                                          const DensityMap& density,
                                          double fd_eps) {
  PipelineContext ctx;
  ctx.scene = &scene;
  ctx.tmo = config.tmo;
  ctx.mask_kind = config.mask;
  ctx.estimator = config.estimator;
  ctx.estimator.variant = variant;
  ctx.allocation = AllocationMode::kStochastic;
  ctx.frames = 1;
  FilterParams filter = prepare_filter(initial_params(scene, 1), 1);
  return PipelineObjective(ctx, std::move(filter), bank_size_for(density, fd_eps));
}

std::vector<GradientComparisonRow> compare_estimators(
    const RunConfig& config, const std::vector<EstimatorVariant>& variants,
    const GradientComparisonOptions& options) {
  if (variants.size() < 2) {
    throw std::invalid_argument("compare_estimators needs at least two variants");
  }
  if (options.draws < 1 || !(options.fd_eps > 0.0) || options.seeds < 0) {
    throw std::invalid_argument("bad gradient comparison options");
  }
  config.validate();
  const SceneSpec scene = builtin_scene(config.scene, options.width, options.height);
  const DensityMap density = normalize_density(
      ScalarField(options.width, options.height, 0.0), config.budget);
  const PipelineObjective reference = make_gradient_objective(
      config, scene, EstimatorVariant::kStochasticExact, density, options.fd_eps);
  const FiniteDifferenceResult fd = finite_difference_gradient(
      reference, density, options.fd_eps, options.draws,
      derive_seed(config.seed, 1));

  std::vector<GradientComparisonRow> rows;
  for (EstimatorVariant v : variants) {
    GradientComparisonRow row;
    row.variant = v;
    const PipelineObjective obj =
        make_gradient_objective(config, scene, v, density, options.fd_eps);
    const ScalarField mc = expected_gradient_mc(obj, density, options.draws,
                                                derive_seed(config.seed, 2));
    row.cosine_similarity = cosine_similarity(mc.values(), fd.gradient.values());
    for (int s = 0; s < options.seeds; ++s) {
      RunConfig rc = config;
      rc.width = options.width;
      rc.height = options.height;
      rc.steps = options.steps;
      rc.seed = config.seed + static_cast<std::uint64_t>(s);
      rc.estimator.variant = v;
      const RunResult r = run(rc);
      ++row.runs;
      if (r.diverged) {
        ++row.divergences;
        continue;
      }
      const std::size_t tail = std::max<std::size_t>(1, r.loss_curve.size() / 10);
      double acc = 0.0;
      for (std::size_t i = r.loss_curve.size() - tail; i < r.loss_curve.size(); ++i) {
        acc += r.loss_curve[i];
      }
      row.final_loss += acc / static_cast<double>(tail);
      row.train_loss += r.train_loss;
      row.eval_loss += r.eval_loss;
    }
    const int ok = row.runs - row.divergences;
    if (ok > 0) {
      row.final_loss /= ok;
      row.train_loss /= ok;
      row.eval_loss /= ok;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string comparison_csv(const std::vector<GradientComparisonRow>& rows) {
  std::string s =
      "variant,cosine_similarity,final_loss,train_loss,eval_loss,divergences,runs\n";
  for (const GradientComparisonRow& r : rows) {
    s += std::string(to_string(r.variant)) + "," + fmt(r.cosine_similarity) + "," +
         fmt(r.final_loss) + "," + fmt(r.train_loss) + "," + fmt(r.eval_loss) +
         "," + std::to_string(r.divergences) + "," + std::to_string(r.runs) + "\n";
  }
  return s;
}

}  // namespace sparse
