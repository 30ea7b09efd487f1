// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural moving-shapes clips. Appearance (shape, color) and motion (trajectory,
// camera pan) are independent knobs, so decoupling claims can be checked against
// exact ground truth.

#pragma once

#include "vidlora/rng.hpp"
#include "vidlora/tensor.hpp"
#include "vidlora/vocab.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace vidlora {

enum class ShapeKind { square, circle, triangle };
enum class TrajectoryKind { slide_right, slide_left, slide_up, arc, zigzag, forward_then_left };
enum class BackgroundKind { plain, gradient };

inline const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::square: return "square";
    case ShapeKind::circle: return "circle";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

inline const char* trajectory_name(TrajectoryKind t) {
  switch (t) {
    case TrajectoryKind::slide_right: return "slide_right";
    case TrajectoryKind::slide_left: return "slide_left";
    case TrajectoryKind::slide_up: return "slide_up";
    case TrajectoryKind::arc: return "arc";
    case TrajectoryKind::zigzag: return "zigzag";
    case TrajectoryKind::forward_then_left: return "forward_then_left";
  }
  return "?";
}

inline TrajectoryKind trajectory_from_name(const std::string& s) {
  for (TrajectoryKind t : {TrajectoryKind::slide_right, TrajectoryKind::slide_left,
                           TrajectoryKind::slide_up, TrajectoryKind::arc, TrajectoryKind::zigzag,
                           TrajectoryKind::forward_then_left})
    if (s == trajectory_name(t)) return t;
  fail("unknown trajectory '" + s + "'");
}

inline ShapeKind shape_from_name(const std::string& s) {
  for (ShapeKind k : {ShapeKind::square, ShapeKind::circle, ShapeKind::triangle})
    if (s == shape_name(k)) return k;
  fail("unknown shape '" + s + "'");
}

struct PaletteEntry {
  const char* name;
  double r, g, b;  // in [0,1]
};

// Chromatic object palette; the background stays gray so hue identifies the object.
inline const std::array<PaletteEntry, 7>& palette() {
  static const std::array<PaletteEntry, 7> p = {{
      {"red", 0.90, 0.10, 0.10},
      {"green", 0.10, 0.80, 0.15},
      {"blue", 0.15, 0.25, 0.95},
      {"yellow", 0.95, 0.85, 0.10},
      {"cyan", 0.10, 0.85, 0.90},
      {"magenta", 0.90, 0.15, 0.85},
      {"orange", 0.95, 0.55, 0.10},
  }};
  return p;
}

inline const PaletteEntry& palette_color(const std::string& name) {
  for (const auto& e : palette())
    if (name == e.name) return e;
  fail("unknown color '" + name + "'");
}

struct SceneSpec {
  ShapeKind shape = ShapeKind::square;
  std::string color = "red";
  double size = 0.30;        // object extent as a fraction of the frame
  TrajectoryKind trajectory = TrajectoryKind::slide_right;
  double speed = 1.0;        // px/frame at the render resolution
  double camera_pan = 0.0;   // signed px/frame, whole-scene horizontal shift
  BackgroundKind background = BackgroundKind::plain;
  uint64_t seed = 0;
};

// ---- trajectory ground truth ------------------------------------------------

// Start position depends only on (seed, resolution): changing the trajectory leaves
// frame 0 untouched, which is what makes appearance/motion orthogonality testable.
inline std::pair<double, double> start_position(uint64_t seed, Index res) {
  Rng r(mix_seed(seed, 901));
  const double jit = 0.04 * static_cast<double>(res);
  const double cx = 0.5 * static_cast<double>(res) + (2.0 * r.uniform() - 1.0) * jit;
  const double cy = 0.5 * static_cast<double>(res) + (2.0 * r.uniform() - 1.0) * jit;
  return {cx, cy};
}

// Object-center path in camera coordinates (camera pan already subtracted).
// All trajectories start at the seed-determined position; frame index k is 0-based.
inline std::vector<std::pair<double, double>> trajectory_positions(const SceneSpec& spec,
                                                                   Index frames, Index res) {
  VL_CHECK(frames >= 1, "trajectory_positions: frames >= 1");
  auto [x0, y0] = start_position(spec.seed, res);
  const double s = spec.speed;
  std::vector<std::pair<double, double>> pos(static_cast<size_t>(frames));
  const Index half = (frames - 1) / 2;
  for (Index k = 0; k < frames; ++k) {
    double dx = 0, dy = 0;
    const double kd = static_cast<double>(k);
    switch (spec.trajectory) {
      case TrajectoryKind::slide_right: dx = s * kd; break;
      case TrajectoryKind::slide_left: dx = -s * kd; break;
      case TrajectoryKind::slide_up: dy = -s * kd; break;
      case TrajectoryKind::arc: {
        // quarter-circle arc, rightward then curling up, arc length ~ s per frame
        const double span = 1.5707963267948966;
        const double omega = frames > 1 ? span / static_cast<double>(frames - 1) : 0.0;
        const double radius = frames > 1 ? s * static_cast<double>(frames - 1) / span : 0.0;
        dx = radius * std::sin(omega * kd);
        dy = -radius * (1.0 - std::cos(omega * kd));
        break;
      }
      case TrajectoryKind::zigzag:
        dx = s * kd;
        dy = (k % 2 == 1) ? 1.5 * s : 0.0;
        break;
      case TrajectoryKind::forward_then_left:
        dx = s * static_cast<double>(std::min(k, half));
        dy = -s * static_cast<double>(std::max<Index>(0, k - half));
        break;
    }
    pos[static_cast<size_t>(k)] = {x0 + dx - spec.camera_pan * kd, y0 + dy};
  }
  return pos;
}

// Unit-speed canonical displacement sequence for a trajectory class; the reference
// for motion-fidelity scoring.
inline std::vector<std::pair<double, double>> canonical_displacements(TrajectoryKind t,
                                                                      Index frames) {
  SceneSpec ref;
  ref.trajectory = t;
  ref.speed = 1.0;
  ref.camera_pan = 0.0;
  ref.seed = 0;
  auto pos = trajectory_positions(ref, frames, 64);
  std::vector<std::pair<double, double>> d(pos.size() - 1);
  for (size_t i = 0; i + 1 < pos.size(); ++i)
    d[i] = {pos[i + 1].first - pos[i].first, pos[i + 1].second - pos[i].second};
  return d;
}

// ---- rendering ---------------------------------------------------------------

namespace detail {

inline double shape_sdf(ShapeKind kind, double px, double py, double cx, double cy, double r) {
  const double dx = px - cx, dy = py - cy;
  switch (kind) {
    case ShapeKind::square:
      return std::max(std::abs(dx), std::abs(dy)) - r;
    case ShapeKind::circle:
      return std::sqrt(dx * dx + dy * dy) - r;
    case ShapeKind::triangle: {
      // equilateral, apex up (screen y down); circumradius r, centroid at (cx, cy)
      double d = -1e30;
      for (int i = 0; i < 3; ++i) {
        const double phi = 1.5707963267948966 + 2.0943951023931953 * i;
        const double vx0 = cx + r * std::cos(phi), vy0 = cy - r * std::sin(phi);
        const double phi2 = 1.5707963267948966 + 2.0943951023931953 * ((i + 1) % 3);
        const double vx1 = cx + r * std::cos(phi2), vy1 = cy - r * std::sin(phi2);
        const double ex = vx1 - vx0, ey = vy1 - vy0;
        const double len = std::sqrt(ex * ex + ey * ey);
        // outward normal for this vertex order in screen coordinates (y down)
        const double nx = -ey / len, ny = ex / len;
        d = std::max(d, (px - vx0) * nx + (py - vy0) * ny);
      }
      return d;
    }
  }
  return 0;
}

}  // namespace detail

// Required free space around the object center, including the 1 px anti-alias skirt.
inline double containment_margin(double size, Index res) {
  return 0.5 * size * static_cast<double>(res) + 1.0;
}

// Renders the clip as (1, frames, res, res, 3) in [-1, 1]. Throws with the offending
// frame index if the object leaves the frame.
template <typename S>
inline Video<S> render_video(const SceneSpec& spec, Index frames, Index res) {
  VL_CHECK(frames >= 1 && res >= 8, "render_video: bad dims");
  VL_CHECK(spec.size > 0 && spec.size < 1, "render_video: size must be in (0,1)");
  palette_color(spec.color);  // validates

  const auto pos = trajectory_positions(spec, frames, res);
  const double margin = containment_margin(spec.size, res);
  for (Index k = 0; k < frames; ++k) {
    const auto [cx, cy] = pos[static_cast<size_t>(k)];
    if (cx - margin < 0 || cx + margin > static_cast<double>(res - 1) || cy - margin < 0 ||
        cy + margin > static_cast<double>(res - 1))
      fail("render_video: object leaves the frame at frame " + std::to_string(k));
  }

  const PaletteEntry& col = palette_color(spec.color);
  const double obj[3] = {2 * col.r - 1, 2 * col.g - 1, 2 * col.b - 1};
  const double bg_base = -0.8;
  const double r = 0.5 * spec.size * static_cast<double>(res);

  Video<S> out = Video<S>::zeros({1, frames, res, res, 3});
  for (Index k = 0; k < frames; ++k) {
    const auto [cx, cy] = pos[static_cast<size_t>(k)];
    const double pan_off = spec.camera_pan * static_cast<double>(k);
    S* fr = out.data.data() + k * res * res * 3;
    for (Index y = 0; y < res; ++y) {
      for (Index x = 0; x < res; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        double bg[3] = {bg_base, bg_base, bg_base};
        if (spec.background == BackgroundKind::gradient) {
          // scene-fixed gradient: pans with the camera
          const double g = 0.14 * std::sin(2.0 * 3.14159265358979 * (px + pan_off) /
                                           static_cast<double>(res));
          bg[0] += g;
          bg[1] += g;
          bg[2] += g;
        }
        const double d = detail::shape_sdf(spec.shape, px, py, cx, cy, r);
        double a = 0.5 - d;
        a = a < 0 ? 0 : (a > 1 ? 1 : a);
        S* px_out = fr + (y * res + x) * 3;
        for (int c = 0; c < 3; ++c)
          px_out[c] = static_cast<S>(bg[c] * (1.0 - a) + obj[c] * a);
      }
    }
  }
  return out;
}

// ---- prompts -------------------------------------------------------------------

inline std::string motion_phrase(TrajectoryKind t) {
  switch (t) {
    case TrajectoryKind::slide_right: return "sliding right";
    case TrajectoryKind::slide_left: return "sliding left";
    case TrajectoryKind::slide_up: return "sliding up";
    case TrajectoryKind::arc: return "moving in an arc";
    case TrajectoryKind::zigzag: return "zigzagging";
    case TrajectoryKind::forward_then_left: return "moving forward then turning left";
  }
  return "";
}

inline PromptSpec make_prompt(const SceneSpec& spec, bool include_motion = true) {
  std::string text = std::string("a ") + spec.color + " " + shape_name(spec.shape);
  if (include_motion) text += " " + motion_phrase(spec.trajectory);
  return Vocab::instance().tokenize(text);
}

// ---- datasets --------------------------------------------------------------------

struct DatasetItem {
  Video<float> clip;
  PromptSpec prompt;
  std::string source_id;
  SceneSpec spec;
};

// Largest per-frame speed that keeps every trajectory inside the frame for the
// worst-case seed jitter of the start position. The envelope divisor covers the
// zigzag's 1.5x vertical amplitude, which dominates for very short clips.
inline double feasible_speed_cap(double size, Index res, Index frames) {
  const double margin = containment_margin(size, res) + 0.04 * static_cast<double>(res);
  const double span = 0.995 * (0.5 * static_cast<double>(res) - 1.0 - margin);
  const double envelope = std::max(static_cast<double>(frames - 1), 1.5);
  return std::max(0.05, span / envelope);
}

// n clips sharing one motion class; appearances cycle through the pool with
// per-clip speed jitter and seed-controlled start positions.
inline std::vector<DatasetItem> make_dataset(TrajectoryKind motion, Index n_videos,
                                             const std::vector<std::pair<std::string, ShapeKind>>& appearance_pool,
                                             uint64_t seed, Index frames = 8, Index res = 32) {
  VL_CHECK(n_videos >= 1, "make_dataset: n_videos >= 1");
  VL_CHECK(!appearance_pool.empty(), "make_dataset: empty appearance pool");
  Rng rng(mix_seed(seed, 77));
  std::vector<DatasetItem> out;
  out.reserve(static_cast<size_t>(n_videos));
  for (Index i = 0; i < n_videos; ++i) {
    const auto& [color, shape] = appearance_pool[static_cast<size_t>(i) % appearance_pool.size()];
    SceneSpec spec;
    spec.shape = shape;
    spec.color = color;
    spec.size = 0.28 + 0.04 * rng.uniform();
    spec.trajectory = motion;
    const double cap = feasible_speed_cap(spec.size, res, frames);
    spec.speed = std::min(cap, (0.85 + 0.25 * rng.uniform()) * cap);
    spec.camera_pan = 0.0;
    spec.background = BackgroundKind::plain;
    spec.seed = mix_seed(seed, 1000 + static_cast<uint64_t>(i));
    DatasetItem item;
    item.clip = render_video<float>(spec, frames, res);
    item.prompt = make_prompt(spec);
    item.source_id = "vid" + std::to_string(i) + "_" + color + "_" + shape_name(shape) + "_" +
                     trajectory_name(motion);
    item.spec = spec;
    out.push_back(std::move(item));
  }
  return out;
}

// Broad pretraining distribution over every appearance/motion combination.
inline SceneSpec sample_scene(Rng& rng, Index frames, Index res) {
  SceneSpec spec;
  spec.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
  spec.color = palette()[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(palette().size()) - 1))].name;
  spec.size = 0.26 + 0.08 * rng.uniform();
  spec.trajectory = static_cast<TrajectoryKind>(rng.uniform_int(0, 5));
  const double cap = feasible_speed_cap(spec.size, res, frames);
  spec.speed = (0.6 + 0.4 * rng.uniform()) * cap;
  spec.background = rng.uniform() < 0.8 ? BackgroundKind::plain : BackgroundKind::gradient;
  spec.camera_pan = 0.0;
  if (rng.uniform() < 0.15) {
    // mild pan; shrink the pan so the combined drift still fits
    const double leftover = cap - spec.speed;
    spec.camera_pan = (rng.uniform() < 0.5 ? 1.0 : -1.0) * 0.5 * std::max(0.0, leftover);
  }
  spec.seed = rng.next_u64();
  return spec;
}

}  // namespace vidlora
