// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "vidlora/rng.hpp"
#include "vidlora/tensor.hpp"

#include <cmath>
#include <vector>

namespace vidlora {

// Linear-ramp variance schedule. alphas/alpha_bars are indexed by 1-based step t;
// alpha_bar(0) == 1 by convention (fully clean).
template <typename S>
struct NoiseSchedule {
  Index num_steps = 0;
  S beta_start = S(0), beta_end = S(0);
  std::vector<S> alphas;
  std::vector<S> alpha_bars;

  S alpha(Index t) const {
    VL_CHECK(t >= 1 && t <= num_steps, "schedule: t out of range");
    return alphas[static_cast<size_t>(t - 1)];
  }
  S beta(Index t) const { return S(1) - alpha(t); }
  S alpha_bar(Index t) const {
    VL_CHECK(t >= 0 && t <= num_steps, "schedule: t out of range");
    return t == 0 ? S(1) : alpha_bars[static_cast<size_t>(t - 1)];
  }
};

template <typename S>
inline NoiseSchedule<S> make_schedule(Index num_steps, double beta_start, double beta_end) {
  VL_CHECK(num_steps >= 1, "make_schedule: num_steps must be positive");
  VL_CHECK(beta_start > 0.0 && beta_start < 1.0, "make_schedule: beta_start outside (0,1)");
  VL_CHECK(beta_end > 0.0 && beta_end < 1.0, "make_schedule: beta_end outside (0,1)");
  VL_CHECK(beta_start <= beta_end, "make_schedule: beta_start > beta_end");

  NoiseSchedule<S> sched;
  sched.num_steps = num_steps;
  sched.beta_start = static_cast<S>(beta_start);
  sched.beta_end = static_cast<S>(beta_end);
  sched.alphas.resize(static_cast<size_t>(num_steps));
  sched.alpha_bars.resize(static_cast<size_t>(num_steps));
  double running = 1.0;
  for (Index t = 0; t < num_steps; ++t) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(num_steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    const double alpha = 1.0 - beta;
    running *= alpha;
    sched.alphas[static_cast<size_t>(t)] = static_cast<S>(alpha);
    sched.alpha_bars[static_cast<size_t>(t)] = static_cast<S>(running);
  }
  return sched;
}

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <typename S>
inline Tensor<S> forward_diffuse(const Tensor<S>& z0, const Tensor<S>& eps, Index t,
                                 const NoiseSchedule<S>& sched) {
  VL_CHECK(z0.shape == eps.shape, "forward_diffuse: shape mismatch");
  VL_CHECK(t >= 1 && t <= sched.num_steps, "forward_diffuse: t out of range");
  const S ab = sched.alpha_bar(t);
  const S cs = std::sqrt(ab);
  const S cn = std::sqrt(S(1) - ab);
  return Tensor<S>(z0.shape, ArrX<S>(cs * z0.data + cn * eps.data));
}

// Closed-form inversion of the forward map given the noise actually used.
template <typename S>
inline Tensor<S> invert_forward(const Tensor<S>& z_t, const Tensor<S>& eps, Index t,
                                const NoiseSchedule<S>& sched) {
  const S ab = sched.alpha_bar(t);
  return Tensor<S>(z_t.shape, ArrX<S>((z_t.data - std::sqrt(S(1) - ab) * eps.data) / std::sqrt(ab)));
}

// One reverse step from t_cur to t_prev (0 means fully denoised). The posterior mean
// uses the predicted clean clip; variance is the schedule's posterior variance, and
// no noise is added when t_prev == 0.
template <typename S>
inline Tensor<S> ddpm_step_between(const Tensor<S>& eps_hat, const Tensor<S>& z_t, Index t_cur,
                                   Index t_prev, const NoiseSchedule<S>& sched, Rng& rng) {
  VL_CHECK(eps_hat.shape == z_t.shape, "ddpm_step: shape mismatch");
  VL_CHECK(t_cur >= 1 && t_cur <= sched.num_steps, "ddpm_step: t out of range");
  VL_CHECK(t_prev >= 0 && t_prev < t_cur, "ddpm_step: t_prev must be in [0, t_cur)");
  const S ab_cur = sched.alpha_bar(t_cur);
  const S ab_prev = sched.alpha_bar(t_prev);
  const S alpha_cur = ab_cur / ab_prev;
  const S beta_cur = S(1) - alpha_cur;

  ArrX<S> z0_hat = (z_t.data - std::sqrt(S(1) - ab_cur) * eps_hat.data) / std::sqrt(ab_cur);
  const S c0 = std::sqrt(ab_prev) * beta_cur / (S(1) - ab_cur);
  const S ct = std::sqrt(alpha_cur) * (S(1) - ab_prev) / (S(1) - ab_cur);
  ArrX<S> mean = c0 * z0_hat + ct * z_t.data;
  if (t_prev == 0) return Tensor<S>(z_t.shape, std::move(mean));

  const S var = (S(1) - ab_prev) / (S(1) - ab_cur) * beta_cur;
  ArrX<S> noise(z_t.size());
  rng.normal_fill(noise);
  return Tensor<S>(z_t.shape, ArrX<S>(mean + std::sqrt(var) * noise));
}

template <typename S>
inline Tensor<S> ddpm_step(const Tensor<S>& eps_hat, const Tensor<S>& z_t, Index t,
                           const NoiseSchedule<S>& sched, Rng& rng) {
  return ddpm_step_between(eps_hat, z_t, t, t - 1, sched, rng);
}

// Uniform integer spacing over [1, T], largest first, deduplicated.
inline std::vector<Index> sampling_timesteps(Index T, Index steps) {
  VL_CHECK(T >= 1 && steps >= 1, "sampling_timesteps: bad arguments");
  if (steps > T) steps = T;
  std::vector<Index> ts;
  ts.reserve(static_cast<size_t>(steps));
  for (Index k = 0; k < steps; ++k) {
    double v = steps == 1 ? static_cast<double>(T)
                          : static_cast<double>(T) -
                                static_cast<double>(k) * static_cast<double>(T - 1) /
                                    static_cast<double>(steps - 1);
    Index t = static_cast<Index>(std::llround(v));
    if (ts.empty() || t < ts.back()) ts.push_back(t);
  }
  return ts;
}

}  // namespace vidlora
