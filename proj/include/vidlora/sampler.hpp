// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "vidlora/schedule.hpp"
#include "vidlora/unet.hpp"

namespace vidlora {

inline constexpr Index kDefaultSamplingSteps = 30;
inline constexpr double kDefaultGuidanceScale = 12.0;

// Full reverse loop from seeded Gaussian noise with classifier-free guidance:
// eps_hat = eps_uncond + s * (eps_cond - eps_uncond). The s == 1 and s == 0 cases
// skip the unused branch entirely, so they are bit-identical to pure conditional /
// unconditional sampling (and twice as fast).
template <typename S, typename Model>
inline Video<S> sample(const Model& model, const NoiseSchedule<S>& sched,
                       const PromptSpec& prompt, Index steps, S guidance_scale,
                       const Shape& video_shape, uint64_t seed) {
  VL_CHECK(steps >= 1, "sample: steps must be >= 1");
  VL_CHECK(video_shape.size() == 5, "sample: video shape must be rank 5");
  for (Index d : video_shape) VL_CHECK(d > 0, "sample: invalid shape");

  Rng rng(mix_seed(seed, 0x5A11Cu));
  Video<S> z = Video<S>::randn(video_shape, rng);
  const PromptSpec null = Vocab::null_prompt();
  const auto ts = sampling_timesteps(sched.num_steps, steps);
  for (size_t i = 0; i < ts.size(); ++i) {
    const Index t_cur = ts[i];
    const Index t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    Tensor<S> eps_hat;
    if (guidance_scale == S(1)) {
      eps_hat = model.denoise_tensor(z, t_cur, prompt);
    } else if (guidance_scale == S(0)) {
      eps_hat = model.denoise_tensor(z, t_cur, null);
    } else {
      Tensor<S> ec = model.denoise_tensor(z, t_cur, prompt);
      Tensor<S> eu = model.denoise_tensor(z, t_cur, null);
      eps_hat = Tensor<S>(ec.shape, ArrX<S>(eu.data + guidance_scale * (ec.data - eu.data)));
    }
    z = ddpm_step_between(eps_hat, z, t_cur, t_prev, sched, rng);
  }
  return z;
}

template <typename S>
inline Video<S> clamp_video(Video<S> v, S lo = S(-1), S hi = S(1)) {
  v.data = v.data.min(hi).max(lo);
  return v;
}

}  // namespace vidlora
