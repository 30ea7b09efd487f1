// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0
//
// Deployment modes: temporal-only motion customization, mixing appearance and
// motion adapters from different runs, animating a still image, and the
// latent-geometry probe that visualizes what debiasing does to noised latents.

#pragma once

#include "vidlora/evalkit.hpp"
#include "vidlora/svg.hpp"

#include <Eigen/SVD>

namespace vidlora {

// Temporal adapters only, at scale gamma_t; appearance stays prompt-controlled.
template <typename S, typename Model>
inline Video<S> customize_motion(Model& model, const NoiseSchedule<S>& sched,
                                 AdapterSet<S>& temporal_set, const PromptSpec& prompt,
                                 S gamma_t, uint64_t seed, const Shape& shape,
                                 Index steps = kDefaultSamplingSteps,
                                 S guidance = static_cast<S>(kDefaultGuidanceScale)) {
  VL_CHECK(temporal_set.kind == AdapterKind::temporal,
           "customize_motion: set must be temporal");
  Injection<S, Model> inj(model,
                          {{&temporal_set, InjectSpec{false, false, static_cast<double>(gamma_t)}}});
  return sample<S>(model, sched, prompt, steps, guidance, shape, seed);
}

// Appearance from one run's spatial set plus motion from another run's temporal set.
template <typename S, typename Model>
inline Video<S> mix_videos(Model& model, const NoiseSchedule<S>& sched,
                           AdapterSet<S>& spatial_set, AdapterSet<S>& temporal_set, S gamma_s,
                           S gamma_t, const PromptSpec& prompt, uint64_t seed, const Shape& shape,
                           Index steps = kDefaultSamplingSteps,
                           S guidance = static_cast<S>(kDefaultGuidanceScale)) {
  VL_CHECK(spatial_set.kind == AdapterKind::spatial, "mix_videos: first set must be spatial");
  VL_CHECK(temporal_set.kind == AdapterKind::temporal, "mix_videos: second set must be temporal");
  for (const auto& [p, a] : spatial_set.adapters)
    VL_CHECK(temporal_set.adapters.find(p) == temporal_set.adapters.end(),
             "mix_videos: overlapping target path " + p);
  Injection<S, Model> inj(
      model, {{&spatial_set, InjectSpec{false, false, static_cast<double>(gamma_s)}},
              {&temporal_set, InjectSpec{false, false, static_cast<double>(gamma_t)}}});
  return sample<S>(model, sched, prompt, steps, guidance, shape, seed);
}

// Fits a spatial adapter set to one still image (single-frame spatial passes only).
template <typename S, typename Model>
inline AdapterSet<S> fit_image_spatial_set(Model& model, const Video<S>& image,
                                           const PromptSpec& prompt,
                                           const NoiseSchedule<S>& sched, const TrainConfig& cfg,
                                           Index steps) {
  check_video_shape(image);
  VL_CHECK(image.shape[1] == 1, "fit_image_spatial_set: expected a single frame");
  model.set_all_trainable(false);
  AdapterSet<S> set =
      make_adapter_set<S>(model, AdapterKind::spatial, "image", cfg.rank, mix_seed(cfg.seed, 0x1A6));
  Adam<S> opt(set.parameters(), cfg.adam);
  Rng draw_rng(mix_seed(cfg.seed, 2));
  Rng dropout_rng(mix_seed(cfg.seed, 3));
  ForwardCtx<S> ctx;
  ctx.training = true;
  ctx.rng = &dropout_rng;
  ctx.adapter_dropout = static_cast<S>(cfg.adapter_dropout);
  for (Index step = 0; step < steps; ++step) {
    Injection<S, Model> inj(model, {{&set, InjectSpec{true}}});
    Var<S> loss = spatial_loss(model, image, prompt, sched, draw_rng, ctx);
    if (!std::isfinite(static_cast<double>(loss.value()[0])))
      fail("animate_image: non-finite loss at step " + std::to_string(step));
    opt.zero_grad();
    backward(loss);
    opt.step();
  }
  return set;
}

// Animates a still image with a learned motion: spatial set trained on the image,
// then mixed with the given temporal set. Zero fitting steps reduces this to
// prompt-only motion customization.
template <typename S, typename Model>
inline Video<S> animate_image(Model& model, const NoiseSchedule<S>& sched, const Video<S>& image,
                              AdapterSet<S>& temporal_set, const PromptSpec& prompt,
                              const TrainConfig& cfg, Index fit_steps, S gamma_s, S gamma_t,
                              uint64_t seed, Index frames,
                              Index steps = kDefaultSamplingSteps,
                              S guidance = static_cast<S>(kDefaultGuidanceScale)) {
  check_video_shape(image);
  VL_CHECK(image.shape[2] == image.shape[3], "animate_image: square frames required");
  VL_CHECK(image.shape[2] == model.config().frame_size,
           "animate_image: image resolution does not match the model");
  Shape shape = {1, frames, image.shape[2], image.shape[3], image.shape[4]};
  AdapterSet<S> sset = fit_image_spatial_set(model, image, prompt, sched, cfg, fit_steps);
  return mix_videos<S>(model, sched, sset, temporal_set, gamma_s, gamma_t, prompt, seed, shape,
                       steps, guidance);
}

// ---- latent-geometry probe -------------------------------------------------------

struct ProbeTrace {
  std::string label;
  std::vector<std::pair<double, double>> pts2d_raw;       // per frame, PCA plane
  std::vector<std::pair<double, double>> pts2d_debiased;
  std::vector<double> diff_norms_raw;        // full-space successive-difference norms
  std::vector<double> diff_norms_debiased;
  std::vector<double> diff_cos_raw;          // angles between successive differences
  std::vector<double> diff_cos_debiased;
};

struct ProbeSlice {
  Index t = 0;
  std::vector<ProbeTrace> traces;
  MatRM<double> centroid_dist_raw;       // pairwise inter-clip distances, full space
  MatRM<double> centroid_dist_debiased;
};

struct ProbeReport {
  double beta = 1.0;
  Index anchor = 0;
  std::vector<ProbeSlice> slices;
};

namespace detail {

inline void pca_2d(const MatRM<double>& rows, std::vector<std::pair<double, double>>& out) {
  MatRM<double> centered = rows;
  Eigen::RowVectorXd mean = rows.colwise().mean();
  centered.rowwise() -= mean;
  Eigen::JacobiSVD<MatRM<double>> svd(centered, Eigen::ComputeThinV);
  const auto& V = svd.matrixV();
  out.resize(static_cast<size_t>(rows.rows()));
  for (Index i = 0; i < rows.rows(); ++i) {
    out[static_cast<size_t>(i)] = {centered.row(i).dot(V.col(0)),
                                   V.cols() > 1 ? centered.row(i).dot(V.col(1)) : 0.0};
  }
}

inline void diff_descriptors(const MatRM<double>& frames, std::vector<double>& norms,
                             std::vector<double>& cosines) {
  const Index F = frames.rows();
  norms.clear();
  cosines.clear();
  for (Index i = 0; i + 1 < F; ++i)
    norms.push_back((frames.row(i + 1) - frames.row(i)).norm());
  for (Index i = 0; i + 2 < F; ++i) {
    Eigen::RowVectorXd a = frames.row(i + 1) - frames.row(i);
    Eigen::RowVectorXd b = frames.row(i + 2) - frames.row(i + 1);
    const double na = a.norm(), nb = b.norm();
    cosines.push_back(na > 0 && nb > 0 ? a.dot(b.transpose()) / (na * nb) : 0.0);
  }
}

}  // namespace detail

// Noise the clips with one shared per-clip epsilon (one frame's worth, reused across
// that clip's frames), flatten per-frame latents, and report the 2-D PCA scatter plus
// connectivity descriptors before and after the debias transform. One anchor index
// is shared by every clip so inter-clip offsets transform predictably.
template <typename S>
inline ProbeReport probe_latents(const std::vector<Video<S>>& clips,
                                 const std::vector<std::string>& labels,
                                 const NoiseSchedule<S>& sched, const std::vector<Index>& t_grid,
                                 double beta, uint64_t seed) {
  VL_CHECK(clips.size() >= 2, "probe_latents: need at least two clips");
  VL_CHECK(!t_grid.empty(), "probe_latents: empty t grid");
  const Index F = clips[0].shape[1];
  for (const auto& c : clips) {
    check_video_shape(c);
    VL_CHECK(c.shape == clips[0].shape, "probe_latents: clips must share a shape");
  }

  Rng rng(mix_seed(seed, 0x9C0B));
  const Index per = clips[0].size() / F;  // one frame, flattened
  std::vector<ArrX<double>> clip_eps;
  for (size_t j = 0; j < clips.size(); ++j) {
    ArrX<double> e(per);
    rng.normal_fill(e);
    clip_eps.push_back(std::move(e));
  }
  const Index anchor = rng.uniform_int(0, F - 1);

  ProbeReport report;
  report.beta = beta;
  report.anchor = anchor;

  const double c1 = std::sqrt(beta * beta + 1.0);
  for (Index t : t_grid) {
    VL_CHECK(t >= 1 && t <= sched.num_steps, "probe_latents: t out of schedule range");
    const double ab = static_cast<double>(sched.alpha_bar(t));
    ProbeSlice slice;
    slice.t = t;

    const Index n_clips = static_cast<Index>(clips.size());
    MatRM<double> raw(n_clips * F, per), deb(n_clips * F, per);
    for (Index j = 0; j < n_clips; ++j) {
      for (Index i = 0; i < F; ++i) {
        const S* z0 = clips[static_cast<size_t>(j)].data.data() + i * per;
        for (Index k = 0; k < per; ++k)
          raw(j * F + i, k) =
              std::sqrt(ab) * static_cast<double>(z0[k]) +
              std::sqrt(1.0 - ab) * clip_eps[static_cast<size_t>(j)][k];
      }
      for (Index i = 0; i < F; ++i)
        deb.row(j * F + i) = c1 * raw.row(j * F + i) - beta * raw.row(j * F + anchor);
    }

    std::vector<std::pair<double, double>> p2raw, p2deb;
    detail::pca_2d(raw, p2raw);
    detail::pca_2d(deb, p2deb);

    slice.centroid_dist_raw = MatRM<double>::Zero(n_clips, n_clips);
    slice.centroid_dist_debiased = MatRM<double>::Zero(n_clips, n_clips);
    std::vector<Eigen::RowVectorXd> cent_raw(static_cast<size_t>(n_clips)),
        cent_deb(static_cast<size_t>(n_clips));
    for (Index j = 0; j < n_clips; ++j) {
      cent_raw[static_cast<size_t>(j)] = raw.middleRows(j * F, F).colwise().mean();
      cent_deb[static_cast<size_t>(j)] = deb.middleRows(j * F, F).colwise().mean();
    }
    for (Index a = 0; a < n_clips; ++a)
      for (Index b = 0; b < n_clips; ++b) {
        slice.centroid_dist_raw(a, b) =
            (cent_raw[static_cast<size_t>(a)] - cent_raw[static_cast<size_t>(b)]).norm();
        slice.centroid_dist_debiased(a, b) =
            (cent_deb[static_cast<size_t>(a)] - cent_deb[static_cast<size_t>(b)]).norm();
      }

    for (Index j = 0; j < n_clips; ++j) {
      ProbeTrace trace;
      trace.label = j < static_cast<Index>(labels.size()) ? labels[static_cast<size_t>(j)]
                                                          : "clip" + std::to_string(j);
      for (Index i = 0; i < F; ++i) {
        trace.pts2d_raw.push_back(p2raw[static_cast<size_t>(j * F + i)]);
        trace.pts2d_debiased.push_back(p2deb[static_cast<size_t>(j * F + i)]);
      }
      detail::diff_descriptors(raw.middleRows(j * F, F), trace.diff_norms_raw,
                               trace.diff_cos_raw);
      detail::diff_descriptors(deb.middleRows(j * F, F), trace.diff_norms_debiased,
                               trace.diff_cos_debiased);
      slice.traces.push_back(std::move(trace));
    }
    report.slices.push_back(std::move(slice));
  }
  return report;
}

// One scatter panel per slice and phase; per-clip frame-order polylines.
inline std::string probe_slice_svg(const ProbeSlice& slice, bool debiased) {
  static const char* colors[] = {"#d33", "#36c", "#2a2", "#c93", "#939", "#099"};
  const double W = 420, H = 420, pad = 40;
  double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
  for (const auto& tr : slice.traces)
    for (const auto& [x, y] : (debiased ? tr.pts2d_debiased : tr.pts2d_raw)) {
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
    }
  const double sx = (W - 2 * pad) / std::max(1e-12, maxx - minx);
  const double sy = (H - 2 * pad) / std::max(1e-12, maxy - miny);
  SvgCanvas svg(W, H);
  svg.text(pad, 20, std::string(debiased ? "debiased" : "raw") + " latents, t = " +
                        std::to_string(slice.t));
  for (size_t j = 0; j < slice.traces.size(); ++j) {
    const auto& tr = slice.traces[j];
    const auto& pts = debiased ? tr.pts2d_debiased : tr.pts2d_raw;
    std::vector<std::pair<double, double>> mapped;
    for (const auto& [x, y] : pts)
      mapped.push_back({pad + (x - minx) * sx, H - pad - (y - miny) * sy});
    const std::string color = colors[j % 6];
    svg.polyline(mapped, color, 1.2);
    for (const auto& [x, y] : mapped) svg.circle(x, y, 2.4, color);
    svg.text(pad, H - 8 - 14 * static_cast<double>(j), tr.label, 11, color);
  }
  return svg.finish();
}

}  // namespace vidlora
