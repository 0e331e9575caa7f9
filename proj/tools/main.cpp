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

// Command-line entry point. Each subcommand parses flags, calls into the
// library and writes files.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sparse/config.hpp"
#include "sparse/density.hpp"
#include "sparse/estimators.hpp"
#include "sparse/image_io.hpp"
#include "sparse/loss.hpp"
#include "sparse/optimize.hpp"
#include "sparse/parallel.hpp"
#include "sparse/pyramid_filter.hpp"
#include "sparse/sample_bank.hpp"
#include "sparse/tonemap.hpp"

namespace fs = std::filesystem;
using namespace sparse;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string scene_names() {
  std::string s;
  for (const char* n : kBuiltinScenes) s += std::string(s.empty() ? "" : ", ") + n;
  return s;
}

ScalarField first_channel(const RgbField& f) {
  ScalarField out(f.width(), f.height());
  for (std::size_t i = 0; i < f.pixel_count(); ++i) out.pixel(i)[0] = f.pixel(i)[0];
  return out;
}

struct SceneArgs {
  std::string name = "checker-spike";
  int width = 64;
  int height = 64;

  void add(CLI::App* app) {
    app->add_option("--scene", name, "Builtin scene: " + scene_names())
        ->capture_default_str();
    app->add_option("--width", width, "Image width")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--height", height, "Image height")->capture_default_str()
        ->check(CLI::PositiveNumber);
  }
};

struct TmoArgs {
  TmoParams params;
  std::string config;
  std::uint64_t sample_seed = 0;
  CLI::Option* sample_opt = nullptr;

  void add(CLI::App* app) {
    app->add_option("--k", params.k, "Exposure offset (log units)")->capture_default_str();
    app->add_option("--alpha", params.alpha, "Contrast")->capture_default_str();
    app->add_option("--beta", params.beta, "Saturation")->capture_default_str();
    app->add_option("--toe", params.toe, "Filmic toe s in (0,1)")->capture_default_str();
    app->add_option("--shoulder", params.shoulder, "Filmic shoulder h in (0,1)")
        ->capture_default_str();
    app->add_option("--tmo-config", config,
                    "key = value file with k, alpha, beta, toe, shoulder; flags override");
    sample_opt = app->add_option("--sample-tmo", sample_seed,
                                 "Draw random parameters from this seed");
  }

  TmoParams resolve(CLI::App* app) const {
    TmoParams p;
    if (sample_opt->count() > 0) {
      p = sample_tmo(sample_seed);
    } else if (!config.empty()) {
      const KeyValueConfig c = KeyValueConfig::load(config);
      p.k = c.get_double("k", p.k);
      p.alpha = c.get_double("alpha", p.alpha);
      p.beta = c.get_double("beta", p.beta);
      p.toe = c.get_double("toe", p.toe);
      p.shoulder = c.get_double("shoulder", p.shoulder);
    }
    if (app->get_option("--k")->count()) p.k = params.k;
    if (app->get_option("--alpha")->count()) p.alpha = params.alpha;
    if (app->get_option("--beta")->count()) p.beta = params.beta;
    if (app->get_option("--toe")->count()) p.toe = params.toe;
    if (app->get_option("--shoulder")->count()) p.shoulder = params.shoulder;
    p.validate();
    return p;
  }
};

// Run-config flags: a config file plus explicit overrides.
struct RunArgs {
  std::string config;
  std::string out = "run";
  std::vector<std::string> sets;
  std::uint64_t seed = 1;
  CLI::Option* seed_opt = nullptr;

  void add(CLI::App* app) {
    app->add_option("--config", config, "Run config file (key = value)");
    seed_opt = app->add_option("--seed", seed, "Master seed (overrides the config)");
    app->add_option("--set", sets, "Override one config key: key=value (repeatable)");
    app->add_option("--out", out, "Output directory")->capture_default_str();
  }

  RunConfig resolve() const {
    KeyValueConfig c = config.empty() ? KeyValueConfig() : KeyValueConfig::load(config);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        throw CLI::ValidationError("--set", "expected key=value, got '" + s + "'");
      }
      c.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed_opt->count()) c.set("seed", std::to_string(seed));
    RunConfig r = RunConfig::from_config(c);
    r.validate();
    return r;
  }
};

int report_run(const RunResult& r, const fs::path& out) {
  write_run_artifacts(r, out);
  std::printf("steps %d  final MAE %.6g  PSNR %.4g dB  -> %s\n", r.steps_completed,
              r.final_mae, r.final_psnr, out.string().c_str());
  if (r.diverged) {
    std::fprintf(stderr, "divergence guard: %s\n", r.diagnostic.c_str());
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  CLI::App app{"Sparse adaptive sampling and pyramid denoising experiments"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // gen-scene
  SceneArgs gs_scene;
  std::string gs_out = "scene";
  auto* gen_scene = app.add_subcommand("gen-scene", "Write a builtin scene as PFM files");
  gs_scene.add(gen_scene);
  gen_scene->add_option("--out", gs_out, "Output directory")->capture_default_str();

  // gen-bank
  SceneArgs gb_scene;
  int gb_count = 16;
  std::uint64_t gb_seed = 1, gb_frame = 0;
  std::string gb_out = "bank";
  auto* gen_bank = app.add_subcommand("gen-bank", "Generate a sample bank for a scene");
  gb_scene.add(gen_bank);
  gen_bank->add_option("--count", gb_count, "Samples per pixel (power of two <= 256)")
      ->capture_default_str();
  gen_bank->add_option("--seed", gb_seed, "Bank seed")->capture_default_str();
  gen_bank->add_option("--frame", gb_frame, "Frame index")->capture_default_str();
  gen_bank->add_option("--out", gb_out, "Output directory")->capture_default_str();

  // dither-mask
  int dm_tile = 64;
  std::uint64_t dm_seed = 1;
  std::string dm_out = "mask.png";
  auto* dither = app.add_subcommand("dither-mask", "Void-and-cluster rank mask as 16-bit PNG");
  dither->add_option("--tile", dm_tile, "Tile size: 16, 32, 64 or 128")->capture_default_str()
      ->check(CLI::IsMember({16, 32, 64, 128}));
  dither->add_option("--seed", dm_seed, "Seed")->capture_default_str();
  dither->add_option("--out", dm_out, "Output PNG (ranks as gray values)")->capture_default_str();

  // estimate
  SceneArgs es_scene;
  double es_budget = 0.5;
  std::string es_density, es_variant = "relaxed", es_alloc = "stochastic";
  std::string es_out = "noisy.pfm", es_grad;
  double es_lambda = 10.0, es_temp = 0.5;
  std::uint64_t es_seed = 1, es_frame = 0;
  int es_tile = 64;
  bool es_eval = false;
  auto* est = app.add_subcommand("estimate", "Allocate samples and form the noisy estimate");
  es_scene.add(est);
  est->add_option("--budget", es_budget, "Uniform density in spp (ignored with --density)")
      ->capture_default_str();
  est->add_option("--density", es_density, "Density map PFM (first channel, spp)");
  est->add_option("--estimator", es_variant,
                  "deterministic, stochastic-exact, relaxed, straight-through, gumbel-binary")
      ->capture_default_str();
  est->add_option("--lambda", es_lambda, "Ramp temperature")->capture_default_str();
  est->add_option("--gumbel-temp", es_temp, "Binary-concrete temperature")->capture_default_str();
  est->add_option("--allocation", es_alloc, "stochastic or dithered")->capture_default_str()
      ->check(CLI::IsMember({"stochastic", "dithered"}));
  est->add_option("--tile", es_tile, "Dither tile size")->capture_default_str();
  est->add_option("--seed", es_seed, "Seed for the bank and the allocation")->capture_default_str();
  est->add_option("--frame", es_frame, "Frame index")->capture_default_str();
  est->add_flag("--eval", es_eval, "Hard decisions, no gradient");
  est->add_option("--out", es_out, "Noisy radiance PFM")->capture_default_str();
  est->add_option("--grad-out", es_grad, "Write dL^noisy/ds as PFM");

  // filter
  std::string fi_in, fi_out, fi_kernels, fi_demod, fi_prev;
  auto* filt = app.add_subcommand("filter", "Apply a kernel field to a PFM image");
  filt->add_option("input", fi_in, "Noisy radiance PFM")->required();
  filt->add_option("output", fi_out, "Filtered radiance PFM")->required();
  filt->add_option("--kernels", fi_kernels, "Kernel logits file (default: zero logits)");
  filt->add_option("--demod", fi_demod, "Demodulation map PFM");
  filt->add_option("--prev", fi_prev, "Warped previous output PFM (temporal kernels)");

  // tonemap
  std::string tm_in, tm_out;
  TmoArgs tm_args;
  auto* tmo = app.add_subcommand("tonemap", "Tone map a PFM image to an sRGB PNG");
  tmo->add_option("input", tm_in, "Radiance PFM")->required();
  tmo->add_option("output", tm_out, "PNG output")->required();
  tm_args.add(tmo);

  // optimize / baseline
  RunArgs op_args, bl_args;
  auto* opt = app.add_subcommand("optimize", "Optimize density, kernels and demodulation");
  op_args.add(opt);
  auto* base = app.add_subcommand("baseline", "Same pipeline with uniform density");
  bl_args.add(base);

  // compare-grads
  RunArgs cg_args;
  std::string cg_variants = "deterministic,stochastic-exact,relaxed,straight-through,gumbel-binary";
  GradientComparisonOptions cg_opts;
  cg_opts.draws = 1000;
  auto* cmp = app.add_subcommand("compare-grads",
                                 "Compare estimator gradients against finite differences");
  cg_args.add(cmp);
  cmp->add_option("--variants", cg_variants, "Comma-separated estimator variants")
      ->capture_default_str();
  cmp->add_option("--draws", cg_opts.draws, "Monte Carlo draws per gradient")->capture_default_str();
  cmp->add_option("--eps", cg_opts.fd_eps, "Finite-difference step in spp")->capture_default_str();
  cmp->add_option("--size", cg_opts.width, "Problem width and height")->capture_default_str();
  cmp->add_option("--runs", cg_opts.seeds, "Optimization runs per variant")->capture_default_str();
  cmp->add_option("--steps", cg_opts.steps, "Steps per optimization run")->capture_default_str();

  // analyze
  std::string an_run, an_base, an_out = "analysis";
  int an_bins = 12;
  auto* ana = app.add_subcommand("analyze", "Error versus sampling ratio, paired with a baseline");
  ana->add_option("--run", an_run, "Adaptive run directory")->required();
  ana->add_option("--baseline", an_base, "Baseline run directory (same seeds)");
  ana->add_option("--bins", an_bins, "Log-spaced ratio bins over [1/16, 16]")->capture_default_str()
      ->check(CLI::Range(2, 1000));
  ana->add_option("--out", an_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << app.help();
    return 2;
  }

  try {
    if (*gen_scene) {
      const SceneSpec s = builtin_scene(gs_scene.name, gs_scene.width, gs_scene.height);
      const fs::path out = gs_out;
      fs::create_directories(out);
      write_pfm(s.ground_truth, out / "ground_truth.pfm");
      write_pfm(s.albedo, out / "albedo.pfm");
      write_pfm(s.noise.scale, out / "noise_scale.pfm");
      write_pfm(sample_variance(s), out / "sample_variance.pfm");
      KeyValueConfig c;
      c.set("scene", s.name);
      c.set("width", std::to_string(s.width()));
      c.set("height", std::to_string(s.height()));
      c.set("frames", std::to_string(s.frames));
      char q[32];
      std::snprintf(q, sizeof q, "%.17g", s.noise.spike_probability);
      c.set("spike_probability", q);
      c.save(out / "scene.cfg");
    } else if (*gen_bank) {
      const SceneSpec s = builtin_scene(gb_scene.name, gb_scene.width, gb_scene.height);
      save_bank(generate_bank(s, gb_count, gb_seed, gb_frame), s.name, gb_out);
    } else if (*dither) {
      const DitherMask m = void_cluster_mask(dm_tile, dm_seed);
      Gray16 img{m.tile, m.tile, {}};
      img.values.assign(m.rank.begin(), m.rank.end());
      write_png_gray16(img, dm_out);
    } else if (*est) {
      const SceneSpec s = builtin_scene(es_scene.name, es_scene.width, es_scene.height);
      DensityMap density;
      if (es_density.empty()) {
        density = normalize_density(ScalarField(s.width(), s.height(), 0.0), es_budget);
      } else {
        density.spp = first_channel(read_pfm_field(es_density));
        double total = 0.0;
        for (double v : density.spp.values()) total += v;
        density.budget = total / static_cast<double>(density.spp.pixel_count());
      }
      EstimatorConfig cfg;
      cfg.variant = parse_estimator_variant(es_variant);
      cfg.lambda = es_lambda;
      cfg.gumbel_temp = es_temp;
      cfg.eval_mode = es_eval;
      cfg.validate();
      DitherMask mask;
      AllocationRequest req;
      req.frame = es_frame;
      req.seed = es_seed;
      req.rule = cfg.take_rule();
      if (es_alloc == "dithered") {
        mask = void_cluster_mask(es_tile, es_seed);
        req.mode = AllocationMode::kDithered;
        req.mask = &mask;
      }
      const SampleAllocation alloc = allocate(density, req);
      const SampleBank bank = generate_bank(
          s, next_power_of_two(required_bank_samples(density)), es_seed, es_frame);
      const EstimatorResult r = estimate(density, alloc, bank, cfg, &s.ground_truth);
      write_pfm(r.noisy, es_out);
      if (!es_grad.empty()) write_pfm(r.grad_s, es_grad);
      std::size_t used = 0;
      for (int u : r.samples_used) used += static_cast<std::size_t>(u);
      std::printf("samples used %zu (%.6g spp)\n", used,
                  static_cast<double>(used) / static_cast<double>(s.width() * s.height()));
    } else if (*filt) {
      const RadianceImage noisy = read_pfm(fi_in);
      const KernelField logits =
          fi_kernels.empty()
              ? make_kernel_field(noisy.width(), noisy.height(), !fi_prev.empty())
              : load_kernel_field(fi_kernels);
      const KernelField weights = normalize_kernels(logits);
      RadianceImage prev;
      if (!fi_prev.empty()) prev = read_pfm(fi_prev);
      DemodMap demod;
      if (!fi_demod.empty()) demod = read_pfm_field(fi_demod).retag<DemodTag>();
      const RadianceImage out = reconstruct(noisy, weights, fi_prev.empty() ? nullptr : &prev,
                                            fi_demod.empty() ? nullptr : &demod);
      write_pfm(out, fi_out);
    } else if (*tmo) {
      const TmoParams p = tm_args.resolve(tmo);
      write_png_srgb(tonemap(read_pfm(tm_in), p), tm_out);
    } else if (*opt) {
      return report_run(run(op_args.resolve()), op_args.out);
    } else if (*base) {
      return report_run(uniform_baseline(bl_args.resolve()), bl_args.out);
    } else if (*cmp) {
      RunConfig rc = cg_args.resolve();
      cg_opts.height = cg_opts.width;
      std::vector<EstimatorVariant> variants;
      std::stringstream ss(cg_variants);
      for (std::string v; std::getline(ss, v, ',');) variants.push_back(parse_estimator_variant(v));
      const auto rows = compare_estimators(rc, variants, cg_opts);
      const std::string csv = comparison_csv(rows);
      fs::create_directories(cg_args.out);
      write_text(fs::path(cg_args.out) / "comparison.csv", csv);
      std::fputs(csv.c_str(), stdout);
    } else if (*ana) {
      const fs::path run_dir = an_run;
      const RunConfig rc = RunConfig::from_config(KeyValueConfig::load(run_dir / "run.cfg"));
      const ScalarField density = first_channel(read_pfm_field(run_dir / "density.pfm"));
      const ScalarField err = first_channel(read_pfm_field(run_dir / "error.pfm"));
      const fs::path out = an_out;
      fs::create_directories(out);
      if (an_base.empty()) {
        write_density_table(bin_error_by_density(err, density, rc.budget, an_bins),
                            out / "error_vs_density.csv");
      } else {
        const fs::path base_dir = an_base;
        const ScalarField berr = first_channel(read_pfm_field(base_dir / "error.pfm"));
        const PairedDensityReport r =
            compare_error_by_density(err, berr, density, rc.budget, an_bins);
        write_density_table(r.adaptive, out / "error_vs_density.csv");
        write_density_table(r.baseline, out / "baseline_error_vs_density.csv");
        const std::string summary = paired_report_csv(r);
        write_text(out / "summary.csv", summary);
        std::fputs(summary.c_str(), stdout);
      }
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
