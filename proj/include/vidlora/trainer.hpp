// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0
//
// Base pre-training on the full denoising objective, plus dual-path customization:
// a spatial pass fits per-video appearance adapters on one random frame per step,
// and a temporal pass fits one shared motion adapter set on full clips under the
// plain and appearance-debiased temporal losses. The coupled single-path baseline
// trains all adapters jointly on full clips with the plain loss.

#pragma once

#include "vidlora/sampler.hpp"
#include "vidlora/synthvid.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vidlora {

// ---- optimizer -------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

template <typename S>
class Adam {
 public:
  Adam(std::vector<Var<S>> params, AdamConfig cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (auto& p : params)
      slots_.push_back({p, ArrX<S>::Zero(p.size()), ArrX<S>::Zero(p.size())});
  }

  void zero_grad() {
    for (auto& s : slots_) s.p.zero_grad();
  }

  void step() {
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S corr1 = S(1) - static_cast<S>(std::pow(cfg_.beta1, t_));
    const S corr2 = S(1) - static_cast<S>(std::pow(cfg_.beta2, t_));
    const S lr = static_cast<S>(cfg_.lr), wd = static_cast<S>(cfg_.weight_decay);
    const S eps = static_cast<S>(cfg_.eps);
    for (auto& s : slots_) {
      ArrX<S>& g_raw = s.p.grad();
      ArrX<S> g = g_raw + wd * s.p.value();
      s.m = b1 * s.m + (S(1) - b1) * g;
      s.v = b2 * s.v + (S(1) - b2) * g.square();
      s.p.value() -= lr * (s.m / corr1) / ((s.v / corr2).sqrt() + eps);
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    Var<S> p;
    ArrX<S> m, v;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

// ---- configs ---------------------------------------------------------------------

struct DebiasConfig {
  double beta = 1.0;  // debias strength; anchor is a random frame per step
};

struct TrainConfig {
  AdamConfig adam;                 // lr 1e-4, betas (0.9, 0.999), eps 1e-8, wd 5e-4
  double adapter_dropout = 0.1;
  Index rank = 32;
  Index steps_single_video = 400;
  Index steps_multi_video = 1000;
  Index steps_override = 0;        // 0: pick by clip count
  double w_org = 1.0;
  double w_ad = 1.0;
  uint64_t seed = 0;

  Index steps_for(size_t n_clips) const {
    if (steps_override > 0) return steps_override;
    return n_clips <= 1 ? steps_single_video : steps_multi_video;
  }
};

// ---- losses ----------------------------------------------------------------------

// Everything random about one loss evaluation, drawn up front so the loss itself is
// a pure function of the parameters (which is what gradient checks need).
template <typename S>
struct SpatialDraw {
  Index frame = 0;
  Index t = 1;
  Tensor<S> eps;  // one-frame shape
};

template <typename S>
struct TemporalDraw {
  Index t = 1;
  Index anchor = 0;
  Tensor<S> eps;  // full-clip shape
};

template <typename S>
inline SpatialDraw<S> sample_spatial_draw(const Video<S>& clip, const NoiseSchedule<S>& sched,
                                          Rng& rng) {
  check_video_shape(clip);
  SpatialDraw<S> d;
  d.frame = rng.uniform_int(0, clip.shape[1] - 1);
  d.t = rng.uniform_int(1, sched.num_steps);
  Shape s = clip.shape;
  s[1] = 1;
  d.eps = Tensor<S>::randn(s, rng);
  return d;
}

template <typename S>
inline TemporalDraw<S> sample_temporal_draw(const Video<S>& clip, const NoiseSchedule<S>& sched,
                                            Rng& rng) {
  check_video_shape(clip);
  TemporalDraw<S> d;
  d.t = rng.uniform_int(1, sched.num_steps);
  d.anchor = rng.uniform_int(0, clip.shape[1] - 1);
  d.eps = Tensor<S>::randn(clip.shape, rng);
  return d;
}

// phi applied to a plain tensor (the ground-truth noise side of the debiased loss).
template <typename S>
inline Tensor<S> debias_tensor(const Tensor<S>& x, Index anchor, S beta) {
  VL_CHECK(x.shape.size() >= 2, "debias_tensor: rank >= 2");
  const Index B = x.shape[0], F = x.shape[1];
  VL_CHECK(anchor >= 0 && anchor < F, "debias_tensor: anchor out of range");
  const Index M = x.size() / (B * F);
  const S c1 = std::sqrt(beta * beta + S(1));
  Tensor<S> out = Tensor<S>::zeros(x.shape);
  for (Index b = 0; b < B; ++b) {
    const S* xa = x.data.data() + (b * F + anchor) * M;
    for (Index f = 0; f < F; ++f) {
      const S* xi = x.data.data() + (b * F + f) * M;
      S* yi = out.data.data() + (b * F + f) * M;
      for (Index j = 0; j < M; ++j) yi[j] = c1 * xi[j] - beta * xa[j];
    }
  }
  return out;
}

// Debias a whole set of per-frame tensors with one shared anchor.
template <typename S>
inline std::vector<Tensor<S>> debias(const std::vector<Tensor<S>>& eps_set, Index anchor, S beta) {
  VL_CHECK(!eps_set.empty(), "debias: empty set");
  VL_CHECK(anchor >= 0 && anchor < static_cast<Index>(eps_set.size()), "debias: anchor out of range");
  const S c1 = std::sqrt(beta * beta + S(1));
  std::vector<Tensor<S>> out;
  out.reserve(eps_set.size());
  for (const auto& e : eps_set) {
    VL_CHECK(e.shape == eps_set[0].shape, "debias: inconsistent shapes");
    out.push_back(Tensor<S>(e.shape, ArrX<S>(c1 * e.data - beta * eps_set[static_cast<size_t>(anchor)].data)));
  }
  return out;
}

// Single-frame denoising loss: the sampled frame runs as a one-frame clip.
template <typename S, typename Model>
inline Var<S> spatial_loss_from_draw(const Model& model, const Video<S>& clip,
                                     const PromptSpec& prompt, const NoiseSchedule<S>& sched,
                                     const SpatialDraw<S>& draw, ForwardCtx<S>& ctx) {
  VL_CHECK(clip.shape[1] >= 1, "spatial_loss: empty clip");
  Tensor<S> z0 = take_frame(clip, draw.frame);
  Tensor<S> zt = forward_diffuse(z0, draw.eps, draw.t, sched);
  Var<S> eps_hat = model.denoise(Var<S>::constant(zt), draw.t, model.encode_prompt_var(prompt), ctx);
  return mse_vs(eps_hat, draw.eps);
}

template <typename S, typename Model>
inline Var<S> spatial_loss(const Model& model, const Video<S>& clip, const PromptSpec& prompt,
                           const NoiseSchedule<S>& sched, Rng& rng, ForwardCtx<S>& ctx) {
  return spatial_loss_from_draw(model, clip, prompt, sched, sample_spatial_draw(clip, sched, rng),
                                ctx);
}

// Full-clip losses: (plain, appearance-debiased), sharing one anchor between the
// true and predicted noise sets.
template <typename S, typename Model>
inline std::pair<Var<S>, Var<S>> temporal_loss_from_draw(const Model& model, const Video<S>& clip,
                                                         const PromptSpec& prompt,
                                                         const NoiseSchedule<S>& sched,
                                                         const DebiasConfig& debias_cfg,
                                                         const TemporalDraw<S>& draw,
                                                         ForwardCtx<S>& ctx) {
  Tensor<S> zt = forward_diffuse(clip, draw.eps, draw.t, sched);
  Var<S> eps_hat = model.denoise(Var<S>::constant(zt), draw.t, model.encode_prompt_var(prompt), ctx);
  Var<S> l_org = mse_vs(eps_hat, draw.eps);
  const S beta = static_cast<S>(debias_cfg.beta);
  Tensor<S> target = debias_tensor(draw.eps, draw.anchor, beta);
  Var<S> l_ad = mse_vs(debias_frames(eps_hat, draw.anchor, beta), target);
  return {l_org, l_ad};
}

template <typename S, typename Model>
inline std::pair<Var<S>, Var<S>> temporal_loss(const Model& model, const Video<S>& clip,
                                               const PromptSpec& prompt,
                                               const NoiseSchedule<S>& sched,
                                               const DebiasConfig& debias_cfg, Rng& rng,
                                               ForwardCtx<S>& ctx) {
  return temporal_loss_from_draw(model, clip, prompt, sched, debias_cfg,
                                 sample_temporal_draw(clip, sched, rng), ctx);
}

// ---- base pre-training -------------------------------------------------------------

// On-the-fly pretraining stream over the full synthetic distribution. The prompt is
// dropped to the null token with probability 0.1 (classifier-free guidance) and the
// motion phrase alone is dropped sometimes so appearance-only prompts stay
// in-distribution at inference.
struct PretrainStream {
  Index frames = 8;
  Index res = 32;
  double null_prompt_prob = 0.1;
  double motion_drop_prob = 0.3;

  template <typename S>
  std::pair<Video<S>, PromptSpec> draw(Rng& rng) const {
    SceneSpec spec = sample_scene(rng, frames, res);
    Video<S> clip = render_video<S>(spec, frames, res);
    PromptSpec prompt;
    const double u = rng.uniform();
    if (u < null_prompt_prob) {
      prompt = Vocab::null_prompt();
    } else {
      prompt = make_prompt(spec, rng.uniform() >= motion_drop_prob);
    }
    return {std::move(clip), std::move(prompt)};
  }
};

template <typename S, typename Model>
inline std::vector<double> pretrain_base(Model& model, const PretrainStream& stream, Index steps,
                                         const NoiseSchedule<S>& sched, const AdamConfig& adam_cfg,
                                         uint64_t seed,
                                         const std::function<void(Index, double)>& progress = {}) {
  std::vector<double> history;
  if (steps <= 0) return history;
  history.reserve(static_cast<size_t>(steps));
  model.set_all_trainable(true);
  Adam<S> opt(model.parameters(), adam_cfg);
  Rng rng(mix_seed(seed, 0xBA5Eu));
  ForwardCtx<S> ctx;
  ctx.training = true;
  for (Index step = 0; step < steps; ++step) {
    auto [clip, prompt] = stream.template draw<S>(rng);
    TemporalDraw<S> draw = sample_temporal_draw(clip, sched, rng);
    Tensor<S> zt = forward_diffuse(clip, draw.eps, draw.t, sched);
    Var<S> eps_hat =
        model.denoise(Var<S>::constant(zt), draw.t, model.encode_prompt_var(prompt), ctx);
    Var<S> loss = mse_vs(eps_hat, draw.eps);
    const double lv = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(lv))
      fail("pretrain: non-finite loss at step " + std::to_string(step));
    opt.zero_grad();
    backward(loss);
    opt.step();
    history.push_back(lv);
    if (progress) progress(step, lv);
  }
  model.set_all_trainable(false);
  return history;
}

// ---- customization -----------------------------------------------------------------

struct StepRecord {
  double spatial = std::numeric_limits<double>::quiet_NaN();
  double org_temp = std::numeric_limits<double>::quiet_NaN();
  double ad_temp = std::numeric_limits<double>::quiet_NaN();
};

enum class TrainMode { dual_path, coupled };

inline const char* train_mode_name(TrainMode m) {
  return m == TrainMode::dual_path ? "dual_path" : "coupled";
}

template <typename S>
struct TrainRun {
  std::map<std::string, AdapterSet<S>> spatial_sets;  // one per source video
  AdapterSet<S> temporal_set;                         // shared across all videos
  TrainConfig config;
  DebiasConfig debias;
  TrainMode mode = TrainMode::dual_path;
  std::vector<StepRecord> loss_history;
};

// Per step: (a) pick a clip round-robin over a seeded shuffle; (b) spatial pass with
// that clip's spatial set trainable; (c) temporal pass with the same spatial set
// frozen plus the shared temporal set trainable. Base weights stay frozen throughout.
// Coupled mode replaces (b)+(c) with one joint full-clip pass on the plain loss.
template <typename S, typename Model>
inline TrainRun<S> train_customization(Model& model, const std::vector<DatasetItem>& clips,
                                       const NoiseSchedule<S>& sched, const TrainConfig& cfg,
                                       const DebiasConfig& debias_cfg,
                                       TrainMode mode = TrainMode::dual_path,
                                       const std::function<void(Index, const StepRecord&)>& progress = {}) {
  VL_CHECK(!clips.empty(), "train_customization: empty clip list");
  model.set_all_trainable(false);

  TrainRun<S> run;
  run.config = cfg;
  run.debias = debias_cfg;
  run.mode = mode;

  std::vector<Video<S>> clip_tensors;
  clip_tensors.reserve(clips.size());
  for (const auto& c : clips) {
    VL_CHECK(!c.source_id.empty(), "train_customization: missing source_id");
    VL_CHECK(run.spatial_sets.find(c.source_id) == run.spatial_sets.end(),
             "train_customization: duplicate source_id " + c.source_id);
    clip_tensors.push_back(c.clip.template cast<S>());
  }

  std::map<std::string, Adam<S>> spatial_opts;
  for (size_t i = 0; i < clips.size(); ++i) {
    const std::string& sid = clips[i].source_id;
    run.spatial_sets.emplace(sid, make_adapter_set<S>(model, AdapterKind::spatial, sid, cfg.rank,
                                                      mix_seed(cfg.seed, 0x57A7 + i)));
    spatial_opts.emplace(sid, Adam<S>(run.spatial_sets.at(sid).parameters(), cfg.adam));
  }
  run.temporal_set =
      make_adapter_set<S>(model, AdapterKind::temporal, "shared", cfg.rank, mix_seed(cfg.seed, 0x7E39));
  Adam<S> temporal_opt(run.temporal_set.parameters(), cfg.adam);

  const Index steps = cfg.steps_for(clips.size());
  Rng order_rng(mix_seed(cfg.seed, 1));
  Rng draw_rng(mix_seed(cfg.seed, 2));
  Rng dropout_rng(mix_seed(cfg.seed, 3));
  ForwardCtx<S> ctx;
  ctx.training = true;
  ctx.rng = &dropout_rng;
  ctx.adapter_dropout = static_cast<S>(cfg.adapter_dropout);

  std::vector<size_t> order(clips.size());
  size_t order_pos = order.size();  // force reshuffle on first use
  auto next_clip = [&]() -> size_t {
    if (order_pos >= order.size()) {
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(order_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
      order_pos = 0;
    }
    return order[order_pos++];
  };

  for (Index step = 0; step < steps; ++step) {
    const size_t ci = next_clip();
    const std::string& sid = clips[ci].source_id;
    const Video<S>& clip = clip_tensors[ci];
    const PromptSpec& prompt = clips[ci].prompt;
    AdapterSet<S>& sset = run.spatial_sets.at(sid);
    StepRecord rec;

    if (mode == TrainMode::dual_path) {
      {
        Injection<S, Model> inj(model, {{&sset, InjectSpec{true}}});
        Var<S> ls = spatial_loss(model, clip, prompt, sched, draw_rng, ctx);
        rec.spatial = static_cast<double>(ls.value()[0]);
        spatial_opts.at(sid).zero_grad();
        backward(ls);
        spatial_opts.at(sid).step();
      }
      {
        Injection<S, Model> inj(
            model, {{&sset, InjectSpec{false}}, {&run.temporal_set, InjectSpec{true}}});
        auto [l_org, l_ad] = temporal_loss(model, clip, prompt, sched, debias_cfg, draw_rng, ctx);
        rec.org_temp = static_cast<double>(l_org.value()[0]);
        rec.ad_temp = static_cast<double>(l_ad.value()[0]);
        Var<S> total = add(scale(l_org, static_cast<S>(cfg.w_org)), scale(l_ad, static_cast<S>(cfg.w_ad)));
        temporal_opt.zero_grad();
        backward(total);
        temporal_opt.step();
      }
    } else {
      Injection<S, Model> inj(
          model, {{&sset, InjectSpec{true}}, {&run.temporal_set, InjectSpec{true}}});
      TemporalDraw<S> draw = sample_temporal_draw(clip, sched, draw_rng);
      Tensor<S> zt = forward_diffuse(clip, draw.eps, draw.t, sched);
      Var<S> eps_hat =
          model.denoise(Var<S>::constant(zt), draw.t, model.encode_prompt_var(prompt), ctx);
      Var<S> loss = mse_vs(eps_hat, draw.eps);
      rec.org_temp = static_cast<double>(loss.value()[0]);
      spatial_opts.at(sid).zero_grad();
      temporal_opt.zero_grad();
      backward(loss);
      spatial_opts.at(sid).step();
      temporal_opt.step();
    }

    const bool bad = mode == TrainMode::dual_path
                         ? !(std::isfinite(rec.spatial) && std::isfinite(rec.org_temp) &&
                             std::isfinite(rec.ad_temp))
                         : !std::isfinite(rec.org_temp);
    if (bad) fail("train_customization: non-finite loss at step " + std::to_string(step));
    run.loss_history.push_back(rec);
    if (progress) progress(step, rec);
  }
  return run;
}

}  // namespace vidlora
