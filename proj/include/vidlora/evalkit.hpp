// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic metrics for the synthetic domain. On rendered clips these act as
// oracles (hue and shape classification are exact by construction); on generated
// clips they quantify motion transfer and appearance leakage without any
// pretrained perception model.

#pragma once

#include "vidlora/synthvid.hpp"
#include "vidlora/trainer.hpp"

#include <algorithm>
#include <optional>
#include <sstream>

namespace vidlora {

// ---- centroid tracking -----------------------------------------------------------

struct CentroidTrack {
  std::vector<std::optional<std::pair<double, double>>> points;

  bool complete() const {
    for (const auto& p : points)
      if (!p) return false;
    return !points.empty();
  }
  Index missing_count() const {
    Index n = 0;
    for (const auto& p : points)
      if (!p) ++n;
    return n;
  }
};

// Foreground = pixels deviating from the per-frame median color by more than
// `threshold` of the [-1,1] dynamic range; centroid weighted by the deviation.
template <typename S>
inline CentroidTrack centroid_track(const Video<S>& video, double threshold = 0.1, Index batch = 0) {
  check_video_shape(video);
  const Index F = video.shape[1], H = video.shape[2], W = video.shape[3], C = video.shape[4];
  const double cut = threshold * 2.0;
  CentroidTrack track;
  track.points.resize(static_cast<size_t>(F));
  std::vector<double> chan(static_cast<size_t>(H * W));
  for (Index f = 0; f < F; ++f) {
    const S* fr = video.data.data() + (batch * F + f) * H * W * C;
    double median[8] = {0};
    for (Index c = 0; c < C; ++c) {
      for (Index i = 0; i < H * W; ++i) chan[static_cast<size_t>(i)] = fr[i * C + c];
      auto mid = chan.begin() + chan.size() / 2;
      std::nth_element(chan.begin(), mid, chan.end());
      median[c] = *mid;
    }
    double sw = 0, sx = 0, sy = 0;
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double dev = 0;
        for (Index c = 0; c < C; ++c)
          dev = std::max(dev, std::abs(static_cast<double>(fr[(y * W + x) * C + c]) - median[c]));
        if (dev > cut) {
          sw += dev;
          sx += dev * (static_cast<double>(x) + 0.5);
          sy += dev * (static_cast<double>(y) + 0.5);
        }
      }
    if (sw > 0) track.points[static_cast<size_t>(f)] = {sx / sw, sy / sw};
  }
  return track;
}

inline std::optional<std::pair<double, double>> net_displacement(const CentroidTrack& track) {
  if (!track.complete()) return std::nullopt;
  auto first = *track.points.front();
  auto last = *track.points.back();
  return std::make_pair(last.first - first.first, last.second - first.second);
}

// ---- motion fidelity --------------------------------------------------------------

struct MotionScore {
  double score = 0.5;       // in [0,1]
  bool defined = false;     // false when centroids are missing
  bool zero_motion = false; // generated clip barely moves
  double net_dx = 0, net_dy = 0;
};

// Cosine similarity between the generated per-frame displacement sequence and the
// canonical unit-speed trajectory of the reference class, mapped to [0,1].
template <typename S>
inline MotionScore motion_fidelity(const Video<S>& gen, TrajectoryKind ref_motion,
                                   double threshold = 0.1) {
  MotionScore out;
  CentroidTrack track = centroid_track(gen, threshold);
  if (!track.complete() || track.points.size() < 2) return out;
  out.defined = true;

  const size_t n = track.points.size() - 1;
  auto ref = canonical_displacements(ref_motion, static_cast<Index>(track.points.size()));
  double dot = 0, ng = 0, nr = 0;
  double sx = 0, sy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double gx = track.points[i + 1]->first - track.points[i]->first;
    const double gy = track.points[i + 1]->second - track.points[i]->second;
    dot += gx * ref[i].first + gy * ref[i].second;
    ng += gx * gx + gy * gy;
    nr += ref[i].first * ref[i].first + ref[i].second * ref[i].second;
    sx += gx;
    sy += gy;
  }
  out.net_dx = sx;
  out.net_dy = sy;
  if (std::sqrt(ng) < 0.5) {
    out.zero_motion = true;
    out.score = 0.5;
    return out;
  }
  const double cosine = dot / std::sqrt(ng * nr);
  out.score = 0.5 * (cosine + 1.0);
  return out;
}

// ---- appearance ------------------------------------------------------------------

struct AppearanceScore {
  bool defined = false;   // false when no usable foreground was found
  std::string hue_name;   // dominant hue, classified against the palette
  bool hue_match = false;
  ShapeKind shape_pred = ShapeKind::square;
  double shape_score = 0;  // in [0,1], 1 = exact template match
  bool shape_match = false;
};

namespace detail {

inline double hue_degrees(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double c = mx - mn;
  if (c <= 1e-9) return -1;
  double h;
  if (mx == r) h = std::fmod((g - b) / c, 6.0);
  else if (mx == g) h = (b - r) / c + 2.0;
  else h = (r - g) / c + 4.0;
  h *= 60.0;
  return h < 0 ? h + 360.0 : h;
}

inline double hue_dist(double a, double b) {
  double d = std::abs(a - b);
  return d > 180.0 ? 360.0 - d : d;
}

}  // namespace detail

// Dominant foreground hue against the palette plus a normalized-moment shape match
// (bounding-box fill ratio and vertical mass asymmetry against analytic templates).
template <typename S>
inline AppearanceScore appearance_score(const Video<S>& gen, const std::string& target_color,
                                        ShapeKind target_shape, double threshold = 0.1) {
  check_video_shape(gen);
  const Index F = gen.shape[1], H = gen.shape[2], W = gen.shape[3], C = gen.shape[4];
  VL_CHECK(C == 3, "appearance_score: need 3 channels");
  const double cut = threshold * 2.0;

  AppearanceScore out;
  double fsum[3] = {0, 0, 0};
  double wsum = 0;
  double fill_acc = 0, asym_acc = 0;
  Index frames_used = 0;

  std::vector<double> chan(static_cast<size_t>(H * W));
  for (Index f = 0; f < F; ++f) {
    const S* fr = gen.data.data() + f * H * W * C;
    double median[3];
    for (Index c = 0; c < 3; ++c) {
      for (Index i = 0; i < H * W; ++i) chan[static_cast<size_t>(i)] = fr[i * C + c];
      auto mid = chan.begin() + chan.size() / 2;
      std::nth_element(chan.begin(), mid, chan.end());
      median[c] = *mid;
    }
    double minx = 1e9, maxx = -1e9, miny = 1e9, maxy = -1e9;
    double msum = 0, my = 0;
    Index area = 0;
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double dev = 0;
        for (Index c = 0; c < 3; ++c)
          dev = std::max(dev, std::abs(static_cast<double>(fr[(y * W + x) * C + c]) - median[c]));
        if (dev <= cut) continue;
        for (Index c = 0; c < 3; ++c) fsum[c] += dev * fr[(y * W + x) * C + c];
        wsum += dev;
        ++area;
        msum += 1.0;
        my += static_cast<double>(y) + 0.5;
        minx = std::min(minx, static_cast<double>(x));
        maxx = std::max(maxx, static_cast<double>(x));
        miny = std::min(miny, static_cast<double>(y));
        maxy = std::max(maxy, static_cast<double>(y));
      }
    if (area >= 4) {
      const double bw = maxx - minx + 1, bh = maxy - miny + 1;
      fill_acc += static_cast<double>(area) / (bw * bh);
      asym_acc += (my / msum - (miny + 0.5 * bh)) / bh;
      ++frames_used;
    }
  }
  if (wsum <= 0 || frames_used == 0) return out;  // degenerate foreground
  out.defined = true;

  // hue classification of the weighted mean color, mapped back to [0,1]
  const double r = 0.5 * (fsum[0] / wsum + 1.0);
  const double g = 0.5 * (fsum[1] / wsum + 1.0);
  const double b = 0.5 * (fsum[2] / wsum + 1.0);
  const double h = detail::hue_degrees(r, g, b);
  if (h < 0) {
    out.hue_name = "achromatic";
  } else {
    double best = 1e9;
    for (const auto& e : palette()) {
      const double eh = detail::hue_degrees(e.r, e.g, e.b);
      const double d = detail::hue_dist(h, eh);
      if (d < best) {
        best = d;
        out.hue_name = e.name;
      }
    }
  }
  out.hue_match = out.hue_name == target_color;

  // shape templates: (bbox fill ratio, vertical asymmetry)
  const double fill = fill_acc / frames_used;
  const double asym = asym_acc / frames_used;
  struct Tpl {
    ShapeKind kind;
    double fill, asym;
  };
  static const Tpl templates[3] = {{ShapeKind::square, 1.0, 0.0},
                                   {ShapeKind::circle, 0.7854, 0.0},
                                   {ShapeKind::triangle, 0.5, 0.1667}};
  double best_d = 1e9;
  for (const auto& t : templates) {
    const double d = std::hypot(fill - t.fill, 3.0 * (asym - t.asym));
    if (d < best_d) {
      best_d = d;
      out.shape_pred = t.kind;
    }
  }
  out.shape_score = std::exp(-8.0 * best_d);
  out.shape_match = out.shape_pred == target_shape;
  return out;
}

// ---- temporal consistency -----------------------------------------------------------

// Mean over adjacent frame pairs of the clamped Pearson correlation.
template <typename S>
inline double temporal_consistency(const Video<S>& video) {
  check_video_shape(video);
  const Index F = video.shape[1];
  VL_CHECK(F >= 2, "temporal_consistency: need at least two frames");
  const Index per = video.size() / (video.shape[0] * F);
  double acc = 0;
  for (Index f = 0; f + 1 < F; ++f) {
    const S* a = video.data.data() + f * per;
    const S* b = video.data.data() + (f + 1) * per;
    double ma = 0, mb = 0;
    for (Index i = 0; i < per; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= static_cast<double>(per);
    mb /= static_cast<double>(per);
    double va = 0, vb = 0, cov = 0;
    for (Index i = 0; i < per; ++i) {
      va += (a[i] - ma) * (a[i] - ma);
      vb += (b[i] - mb) * (b[i] - mb);
      cov += (a[i] - ma) * (b[i] - mb);
    }
    double ncc;
    if (va < 1e-12 && vb < 1e-12) {
      ncc = std::abs(ma - mb) < 1e-9 ? 1.0 : 0.0;
    } else if (va < 1e-12 || vb < 1e-12) {
      ncc = 0.0;
    } else {
      ncc = cov / std::sqrt(va * vb);
    }
    acc += std::max(0.0, ncc);
  }
  return acc / static_cast<double>(F - 1);
}

// ---- evaluation protocol ---------------------------------------------------------------

struct EvalPrompt {
  std::string text;
  std::string target_color;
  ShapeKind target_shape = ShapeKind::circle;
  TrajectoryKind ref_motion = TrajectoryKind::slide_right;
};

struct EvalProtocol {
  std::string name = "decoupling";
  std::vector<EvalPrompt> prompts;
  std::vector<uint64_t> seeds;
  Index steps = kDefaultSamplingSteps;
  double guidance_scale = kDefaultGuidanceScale;
  double gamma_spatial = 1.0;  // used by arms that inject spatial sets
  double gamma_temporal = 1.0;
  Index frames = 8;
  Index res = 32;
  double motion_fidelity_min = 0.7;
};

struct SampleRow {
  std::string arm;
  std::string prompt;
  uint64_t seed = 0;
  bool defined = false;
  double net_dx = 0, net_dy = 0;
  double motion_fid = 0;
  bool motion_pass = false;
  std::string hue;
  bool hue_match = false;
  double shape_score = 0;
  double temp_consistency = 0;
};

struct ArmAggregate {
  Index n = 0;
  Index motion_pass = 0;
  Index hue_pass = 0;
  double mean_motion_fid = 0;
  double mean_consistency = 0;
};

struct EvalReport {
  std::vector<SampleRow> rows;
  std::map<std::string, ArmAggregate> arms;

  std::string to_csv() const {
    std::ostringstream os;
    os << "arm,prompt,seed,defined,net_dx,net_dy,motion_fidelity,motion_pass,hue,hue_match,"
          "shape_score,temporal_consistency\n";
    for (const auto& r : rows) {
      os << r.arm << ",\"" << r.prompt << "\"," << r.seed << "," << (r.defined ? 1 : 0) << ","
         << r.net_dx << "," << r.net_dy << "," << r.motion_fid << "," << (r.motion_pass ? 1 : 0)
         << "," << r.hue << "," << (r.hue_match ? 1 : 0) << "," << r.shape_score << ","
         << r.temp_consistency << "\n";
    }
    return os.str();
  }

  std::string summary() const {
    std::ostringstream os;
    os << "arm  n  motion_pass  hue_pass  mean_motion_fidelity  mean_consistency\n";
    for (const auto& [arm, a] : arms) {
      os << arm << "  " << a.n << "  " << a.motion_pass << "  " << a.hue_pass << "  "
         << (a.n ? a.mean_motion_fid / a.n : 0.0) << "  " << (a.n ? a.mean_consistency / a.n : 0.0)
         << "\n";
    }
    return os.str();
  }
};

// Samples every (prompt, seed) under the given adapter injection and scores it.
// `sets` may be empty (base arm). Deterministic: identical protocol, identical report.
template <typename S, typename Model>
inline void evaluate_arm(EvalReport& report, const std::string& arm, Model& model,
                         const NoiseSchedule<S>& sched,
                         std::vector<std::pair<AdapterSet<S>*, InjectSpec>> sets,
                         const EvalProtocol& proto) {
  std::optional<Injection<S, Model>> inj;
  if (!sets.empty()) inj.emplace(model, std::move(sets));
  for (const auto& p : proto.prompts) {
    PromptSpec prompt = Vocab::instance().tokenize(p.text);
    for (uint64_t seed : proto.seeds) {
      Video<S> v = sample<S>(model, sched, prompt, proto.steps,
                             static_cast<S>(proto.guidance_scale),
                             {1, proto.frames, proto.res, proto.res, 3}, seed);
      v = clamp_video(std::move(v));
      SampleRow row;
      row.arm = arm;
      row.prompt = p.text;
      row.seed = seed;
      MotionScore ms = motion_fidelity(v, p.ref_motion);
      AppearanceScore as = appearance_score(v, p.target_color, p.target_shape);
      row.defined = ms.defined && as.defined;
      row.net_dx = ms.net_dx;
      row.net_dy = ms.net_dy;
      row.motion_fid = ms.score;
      // direction gate along the canonical net displacement of the reference class
      auto ref = canonical_displacements(p.ref_motion, proto.frames);
      double rx = 0, ry = 0;
      for (auto& d : ref) {
        rx += d.first;
        ry += d.second;
      }
      row.motion_pass = ms.defined && !ms.zero_motion &&
                        (ms.net_dx * rx + ms.net_dy * ry) > 0 &&
                        ms.score >= proto.motion_fidelity_min;
      row.hue = as.defined ? as.hue_name : "undefined";
      row.hue_match = as.hue_match;
      row.shape_score = as.shape_score;
      row.temp_consistency = proto.frames >= 2 ? temporal_consistency(v) : 1.0;
      report.rows.push_back(row);
      ArmAggregate& agg = report.arms[arm];
      agg.n++;
      agg.motion_pass += row.motion_pass ? 1 : 0;
      agg.hue_pass += row.hue_match ? 1 : 0;
      agg.mean_motion_fid += row.motion_fid;
      agg.mean_consistency += row.temp_consistency;
    }
  }
  if (report.arms.find(arm) == report.arms.end()) report.arms[arm] = ArmAggregate{};
}

// Full report: dual-path arm (temporal adapters only) plus, when given, the base
// arm and the coupled-baseline arm (all of its adapters injected, as trained).
template <typename S, typename Model>
inline EvalReport evaluate_run(Model& model, const NoiseSchedule<S>& sched, TrainRun<S>& run,
                               std::type_identity_t<TrainRun<S>*> coupled,
                               const EvalProtocol& proto, bool include_base = true) {
  EvalReport report;
  if (include_base) evaluate_arm<S>(report, "base", model, sched, {}, proto);
  evaluate_arm<S>(report, "dual_path", model, sched,
                  {{&run.temporal_set, InjectSpec{false, false, proto.gamma_temporal}}}, proto);
  if (coupled) {
    std::vector<std::pair<AdapterSet<S>*, InjectSpec>> sets;
    for (auto& [sid, set] : coupled->spatial_sets)
      sets.push_back({&set, InjectSpec{false, false, proto.gamma_spatial}});
    sets.push_back({&coupled->temporal_set, InjectSpec{false, false, proto.gamma_temporal}});
    evaluate_arm<S>(report, "coupled", model, sched, std::move(sets), proto);
  }
  return report;
}

}  // namespace vidlora
