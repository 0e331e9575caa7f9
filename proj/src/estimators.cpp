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

#include "sparse/estimators.hpp"

#include <cmath>
#include <stdexcept>

#include "sparse/parallel.hpp"
#include "sparse/rng.hpp"

namespace sparse {

const char* to_string(EstimatorVariant v) noexcept {
  switch (v) {
    case EstimatorVariant::kDeterministic:
      return "deterministic";
    case EstimatorVariant::kStochasticExact:
      return "stochastic-exact";
    case EstimatorVariant::kRelaxed:
      return "relaxed";
    case EstimatorVariant::kStraightThrough:
      return "straight-through";
    case EstimatorVariant::kGumbelBinary:
      return "gumbel-binary";
  }
  return "unknown";
}

EstimatorVariant parse_estimator_variant(const std::string& name) {
  for (auto v : {EstimatorVariant::kDeterministic,
                 EstimatorVariant::kStochasticExact, EstimatorVariant::kRelaxed,
                 EstimatorVariant::kStraightThrough,
                 EstimatorVariant::kGumbelBinary}) {
    if (name == to_string(v)) return v;
  }
  throw std::invalid_argument("unknown estimator variant '" + name + "'");
}

TakeRule EstimatorConfig::take_rule() const noexcept {
  return variant == EstimatorVariant::kRelaxed ? TakeRule::kAboveComplement
                                               : TakeRule::kBelowFraction;
}

void EstimatorConfig::validate() const {
  if (!(lambda >= 1.0)) throw std::invalid_argument("lambda must be >= 1");
  if (!(gumbel_temp > 0.0)) {
    throw std::invalid_argument("gumbel temperature must be > 0");
  }
  if (!(epsilon_s > 0.0)) throw std::invalid_argument("epsilon_s must be > 0");
}

double ramp_gain(double lambda) noexcept {
  return 2.0 * lambda / (2.0 * lambda - 1.0);
}

double relaxed_ramp(double u, double p, double lambda) noexcept {
  if (p <= 0.0) return 0.0;
  return std::clamp(lambda / p * (u + p - 1.0), 0.0, 1.0);
}

double ramp_integral(double p, double lambda) noexcept {
  // Zero on [0, 1-p], linear over a width p/lambda, then one.
  if (p <= 0.0) return 0.0;
  return p * (1.0 - 0.5 / lambda);
}

int required_bank_samples(const DensityMap& density) noexcept {
  double smax = 0.0;
  for (double s : density.spp.values()) smax = std::max(smax, s);
  // round(s) never exceeds floor(s) + 1.
  return static_cast<int>(std::floor(smax)) + 1;
}

namespace {

void check_inputs(const DensityMap& density, const SampleBank& bank) {
  if (density.width() != bank.width() || density.height() != bank.height()) {
    throw std::invalid_argument("dimension mismatch: density vs sample bank");
  }
}

void check_allocation(const DensityMap& density,
                      const SampleAllocation& allocation) {
  if (allocation.width != density.width() ||
      allocation.height != density.height() ||
      allocation.pixel_count() != density.spp.pixel_count()) {
    throw std::invalid_argument("allocation does not match the density map");
  }
}

void check_capacity(const SampleBank& bank, int needed) {
  if (needed > bank.count()) {
    throw std::out_of_range("estimator needs " + std::to_string(needed) +
                            " samples per pixel, bank holds " +
                            std::to_string(bank.count()));
  }
}

EstimatorResult make_result(int w, int h) {
  EstimatorResult r{RadianceImage(w, h), RgbField(w, h), RadianceImage(w, h),
                    std::vector<int>(static_cast<std::size_t>(w) * h, 0)};
  return r;
}

void sum_samples(const SampleBank& bank, std::size_t p, int n, double out[3]) {
  out[0] = out[1] = out[2] = 0.0;
  for (int j = 0; j < n; ++j) {
    const auto s = bank.sample(p, j);
    out[0] += s[0];
    out[1] += s[1];
    out[2] += s[2];
  }
}

// Shared skeleton of the stochastic variants: the holdout gate callback
// returns (weight applied to r, d weight / d p, whether r is read).
struct Gate {
  double weight = 0.0;
  double dweight_dp = 0.0;
  bool read_sample = false;
  bool counted = false;  // r is part of the forward estimate
};

template <typename GateFn>
EstimatorResult run_holdout_estimator(const DensityMap& density,
                                      const SampleAllocation& allocation,
                                      const SampleBank& bank,
                                      const EstimatorConfig& cfg,
                                      GateFn&& gate_fn) {
  cfg.validate();
  check_inputs(density, bank);
  check_allocation(density, allocation);
  const int w = density.width();
  const int h = density.height();
  EstimatorResult res = make_result(w, h);
  const std::size_t n = density.spp.pixel_count();
  for (std::size_t p = 0; p < n; ++p) {
    check_capacity(bank, allocation.base[p] + (allocation.fraction[p] > 0 ? 1 : 0));
  }
  parallel_for(static_cast<std::ptrdiff_t>(n), [&](std::ptrdiff_t pi) {
    const auto p = static_cast<std::size_t>(pi);
    const double s = density.spp.pixel(p)[0];
    const double norm = std::max(s, cfg.epsilon_s);
    const int base = allocation.base[p];
    double sum[3];
    sum_samples(bank, p, base, sum);
    const Gate g = gate_fn(allocation.variate[p], allocation.fraction[p]);
    double r[3] = {0.0, 0.0, 0.0};
    if (g.read_sample) {
      const auto rs = bank.sample(p, base);
      r[0] = rs[0];
      r[1] = rs[1];
      r[2] = rs[2];
    }
    res.samples_used[p] = base + (g.counted ? 1 : 0);
    for (int c = 0; c < 3; ++c) {
      const double lh = r[c] * g.weight;
      const double noisy = (sum[c] + lh) / norm;
      res.holdout_contrib.pixel(p)[c] = lh;
      res.noisy.pixel(p)[c] = noisy;
      double grad = 0.0;
      if (!cfg.eval_mode) {
        if (s > cfg.epsilon_s) grad = -noisy / s;
        // dp/ds = 1 away from integers.
        grad += r[c] * g.dweight_dp / norm;
      }
      res.grad_s.pixel(p)[c] = grad;
    }
  });
  return res;
}

Gate hard_gate(TakeRule rule, double u, double p) {
  const bool take = takes_holdout(rule, u, p);
  return {take ? 1.0 : 0.0, 0.0, take, take};
}

}  // namespace

EstimatorResult estimate_deterministic(const DensityMap& density,
                                       const SampleBank& bank,
                                       const RadianceImage& reference) {
  check_inputs(density, bank);
  require_same_shape(density.spp, reference, "deterministic reference");
  const int w = density.width();
  const int h = density.height();
  EstimatorResult res = make_result(w, h);
  const std::size_t n = density.spp.pixel_count();
  for (std::size_t p = 0; p < n; ++p) {
    const double s = density.spp.pixel(p)[0];
    if (s >= 0.5) check_capacity(bank, static_cast<int>(std::floor(s + 0.5)));
  }
  parallel_for(static_cast<std::ptrdiff_t>(n), [&](std::ptrdiff_t pi) {
    const auto p = static_cast<std::size_t>(pi);
    const double s = density.spp.pixel(p)[0];
    const int k = s >= 0.5 ? static_cast<int>(std::floor(s + 0.5)) : 0;
    res.samples_used[p] = k;
    double sum[3];
    sum_samples(bank, p, k, sum);
    for (int c = 0; c < 3; ++c) {
      const double ref = reference.pixel(p)[c];
      if (k > 0) {
        const double noisy = sum[c] / k;
        res.noisy.pixel(p)[c] = noisy;
        res.grad_s.pixel(p)[c] = (ref - noisy) / k;
      } else {
        res.grad_s.pixel(p)[c] = ref;
      }
    }
  });
  return res;
}

EstimatorResult estimate_stochastic(const DensityMap& density,
                                    const SampleAllocation& allocation,
                                    const SampleBank& bank,
                                    const EstimatorConfig& cfg) {
  return run_holdout_estimator(
      density, allocation, bank, cfg, [](double u, double p) {
        return hard_gate(TakeRule::kBelowFraction, u, p);
      });
}

EstimatorResult estimate_relaxed(const DensityMap& density,
                                 const SampleAllocation& allocation,
                                 const SampleBank& bank,
                                 const EstimatorConfig& cfg) {
  const double lambda = cfg.lambda;
  const double gain = ramp_gain(lambda);
  return run_holdout_estimator(
      density, allocation, bank, cfg, [&](double u, double p) {
        Gate g;
        if (p <= 0.0) return g;
        const double t = lambda / p * (u + p - 1.0);
        if (t <= 0.0) return g;  // below the ramp: no sample
        g.read_sample = g.counted = true;
        if (t >= 1.0) {
          g.weight = gain;
        } else {
          g.weight = gain * t;
          g.dweight_dp = gain * lambda * (1.0 - u) / (p * p);
        }
        return g;
      });
}

EstimatorResult estimate_straight_through(const DensityMap& density,
                                          const SampleAllocation& allocation,
                                          const SampleBank& bank,
                                          const EstimatorConfig& cfg) {
  return run_holdout_estimator(
      density, allocation, bank, cfg, [](double u, double p) {
        Gate g = hard_gate(TakeRule::kBelowFraction, u, p);
        if (p > 0.0) {
          // r is read for the backward pass even when not taken.
          g.read_sample = true;
          g.dweight_dp = 1.0;
        }
        return g;
      });
}

EstimatorResult estimate_gumbel(const DensityMap& density,
                                const SampleAllocation& allocation,
                                const SampleBank& bank,
                                const EstimatorConfig& cfg) {
  const double temp = cfg.gumbel_temp;
  return run_holdout_estimator(
      density, allocation, bank, cfg, [&](double u, double p) {
        Gate g;
        if (p <= 0.0) return g;
        constexpr double kClamp = 1e-6;
        const double pc = std::clamp(p, kClamp, 1.0 - kClamp);
        const double uc = std::clamp(u, 1e-12, 1.0 - 1e-12);
        // logit(1-u) makes the zero-temperature limit the u < p indicator.
        const double noise = std::log1p(-uc) - std::log(uc);
        const double a = (std::log(pc) - std::log1p(-pc) + noise) / temp;
        const double gate = 1.0 / (1.0 + std::exp(-a));
        if (!(gate > kGumbelGateFloor)) return g;
        g.weight = gate;
        g.read_sample = g.counted = true;
        if (p == pc) g.dweight_dp = gate * (1.0 - gate) / (temp * pc * (1.0 - pc));
        return g;
      });
}

EstimatorResult estimate(const DensityMap& density,
                         const SampleAllocation& allocation,
                         const SampleBank& bank, const EstimatorConfig& cfg,
                         const RadianceImage* reference) {
  if (cfg.variant == EstimatorVariant::kDeterministic) {
    if (reference == nullptr) {
      throw std::invalid_argument(
          "deterministic estimator requires the reference image");
    }
    EstimatorResult r = estimate_deterministic(density, bank, *reference);
    if (cfg.eval_mode) r.grad_s.fill(0.0);
    return r;
  }
  if (cfg.eval_mode) {
    const TakeRule rule = cfg.take_rule();
    return run_holdout_estimator(
        density, allocation, bank, cfg,
        [rule](double u, double p) { return hard_gate(rule, u, p); });
  }
  switch (cfg.variant) {
    case EstimatorVariant::kStochasticExact:
      return estimate_stochastic(density, allocation, bank, cfg);
    case EstimatorVariant::kRelaxed:
      return estimate_relaxed(density, allocation, bank, cfg);
    case EstimatorVariant::kStraightThrough:
      return estimate_straight_through(density, allocation, bank, cfg);
    case EstimatorVariant::kGumbelBinary:
      return estimate_gumbel(density, allocation, bank, cfg);
    case EstimatorVariant::kDeterministic:
      break;
  }
  throw std::logic_error("unhandled estimator variant");
}

std::uint64_t objective_seed(std::uint64_t base, std::uint64_t k) noexcept {
  return derive_seed(base, k);
}

ScalarField expected_gradient_mc(const DensityObjective& objective,
                                 const DensityMap& density, int draws,
                                 std::uint64_t base_seed) {
  if (draws < 1) throw std::invalid_argument("need at least one draw");
  ScalarField mean(density.width(), density.height());
  ScalarField grad(density.width(), density.height());
  auto m = mean.values();
  for (int k = 0; k < draws; ++k) {
    const auto d = objective.draw(objective_seed(base_seed, k));
    grad.fill(0.0);
    d->loss_and_gradient(density, grad);
    const auto g = grad.values();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += g[i];
  }
  for (double& v : m) v /= draws;
  return mean;
}

FiniteDifferenceResult finite_difference_gradient(
    const DensityObjective& objective, const DensityMap& density, double eps,
    int draws, std::uint64_t base_seed) {
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be > 0");
  if (draws < 1) throw std::invalid_argument("need at least one draw");
  const std::size_t n = density.spp.pixel_count();
  std::vector<double> acc(n, 0.0);
  std::vector<std::uint8_t> differs(n, 0);
  DensityMap probe = density;
  auto s = probe.spp.values();
  for (int k = 0; k < draws; ++k) {
    const auto d = objective.draw(objective_seed(base_seed, k));
    for (std::size_t i = 0; i < n; ++i) {
      const double s0 = s[i];
      s[i] = s0 + eps;
      const double up = d->loss(probe);
      s[i] = s0 - eps;
      const double down = d->loss(probe);
      s[i] = s0;
      if (up != down) differs[i] = 1;
      acc[i] += up - down;
    }
  }
  FiniteDifferenceResult out{ScalarField(density.width(), density.height()), 0};
  auto g = out.gradient.values();
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = acc[i] / (2.0 * eps * draws);
    if (!differs[i]) ++out.coincident;
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: length mismatch");
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace sparse
