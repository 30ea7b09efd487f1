// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vidlora/synthvid.hpp"

using namespace vidlora;

namespace {

// Test-side centroid: coverage-weighted mean of deviation from the background,
// independent of the evaluation module.
std::pair<double, double> mask_centroid(const Video<float>& v, Index frame) {
  const Index H = v.shape[2], W = v.shape[3];
  double sw = 0, sx = 0, sy = 0;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      double dev = 0;
      for (Index c = 0; c < 3; ++c) {
        double d = std::abs(static_cast<double>(v.at({0, frame, y, x, c})) - (-0.8));
        dev = std::max(dev, d);
      }
      if (dev > 0.25) {
        sw += dev;
        sx += dev * (static_cast<double>(x) + 0.5);
        sy += dev * (static_cast<double>(y) + 0.5);
      }
    }
  REQUIRE(sw > 0);
  return {sx / sw, sy / sw};
}

}  // namespace

TEST_CASE("static scene renders identical frames") {
  SceneSpec spec;
  spec.speed = 0;
  spec.camera_pan = 0;
  spec.trajectory = TrajectoryKind::slide_right;
  spec.seed = 3;
  auto v = render_video<float>(spec, 8, 32);
  const Index per = 32 * 32 * 3;
  for (Index f = 1; f < 8; ++f)
    for (Index i = 0; i < per; ++i) CHECK(v.data[f * per + i] == v.data[i]);
  for (Index i = 0; i < v.size(); ++i) {
    CHECK(v.data[i] >= -1.0f);
    CHECK(v.data[i] <= 1.0f);
  }
}

TEST_CASE("slide_right at 2 px/frame displaces the centroid by 14 px") {
  SceneSpec spec;
  spec.shape = ShapeKind::circle;
  spec.color = "blue";
  spec.size = 0.25;
  spec.trajectory = TrajectoryKind::slide_right;
  spec.speed = 2.0;
  spec.seed = 11;
  auto v = render_video<float>(spec, 8, 64);
  auto [x0, y0] = mask_centroid(v, 0);
  auto [x7, y7] = mask_centroid(v, 7);
  CHECK(std::abs((x7 - x0) - 14.0) < 0.5);
  CHECK(std::abs(y7 - y0) < 0.5);
}

TEST_CASE("rendered centroid tracks the trajectory function within half a pixel") {
  for (auto traj : {TrajectoryKind::arc, TrajectoryKind::zigzag, TrajectoryKind::forward_then_left,
                    TrajectoryKind::slide_up}) {
    SceneSpec spec;
    spec.shape = ShapeKind::square;
    spec.color = "green";
    spec.size = 0.22;
    spec.trajectory = traj;
    spec.speed = 1.6;
    spec.seed = 21;
    auto v = render_video<float>(spec, 8, 64);
    auto pos = trajectory_positions(spec, 8, 64);
    for (Index f = 0; f < 8; ++f) {
      auto [cx, cy] = mask_centroid(v, f);
      CHECK(std::abs(cx - pos[static_cast<size_t>(f)].first) < 0.5);
      CHECK(std::abs(cy - pos[static_cast<size_t>(f)].second) < 0.5);
    }
  }
}

TEST_CASE("triangle renders with mass centered on the trajectory") {
  SceneSpec spec;
  spec.shape = ShapeKind::triangle;
  spec.color = "cyan";
  spec.size = 0.3;
  spec.speed = 0.8;
  spec.seed = 9;
  auto v = render_video<float>(spec, 8, 32);
  auto pos = trajectory_positions(spec, 8, 32);
  for (Index f = 0; f < 8; ++f) {
    auto [cx, cy] = mask_centroid(v, f);
    CHECK(std::abs(cx - pos[static_cast<size_t>(f)].first) < 0.6);
    CHECK(std::abs(cy - pos[static_cast<size_t>(f)].second) < 0.6);
  }
}

TEST_CASE("identical spec renders bit-identical videos") {
  SceneSpec spec;
  spec.shape = ShapeKind::triangle;
  spec.color = "magenta";
  spec.trajectory = TrajectoryKind::arc;
  spec.speed = 1.0;
  spec.seed = 1234;
  auto a = render_video<float>(spec, 8, 32);
  auto b = render_video<float>(spec, 8, 32);
  for (Index i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("appearance/motion orthogonality") {
  SceneSpec spec;
  spec.shape = ShapeKind::square;
  spec.color = "red";
  spec.trajectory = TrajectoryKind::slide_right;
  spec.speed = 1.0;
  spec.size = 0.30;
  spec.seed = 77;

  // color change leaves the ground-truth track bit-identical
  SceneSpec blue = spec;
  blue.color = "blue";
  auto pa = trajectory_positions(spec, 8, 32);
  auto pb = trajectory_positions(blue, 8, 32);
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second == pb[i].second);
  }

  // trajectory change leaves frame 0 bit-identical (pan = 0)
  SceneSpec up = spec;
  up.trajectory = TrajectoryKind::slide_up;
  auto va = render_video<float>(spec, 8, 32);
  auto vb = render_video<float>(up, 8, 32);
  const Index per = 32 * 32 * 3;
  for (Index i = 0; i < per; ++i) CHECK(va.data[i] == vb.data[i]);
}

TEST_CASE("containment violation reports the offending frame") {
  SceneSpec spec;
  spec.size = 0.5;
  spec.speed = 4.0;
  spec.trajectory = TrajectoryKind::slide_right;
  spec.seed = 5;
  try {
    render_video<float>(spec, 8, 32);
    FAIL("expected containment error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("frame") != std::string::npos);
  }
}

TEST_CASE("camera pan shifts the whole scene") {
  SceneSpec spec;
  spec.speed = 0.0;
  spec.camera_pan = 1.0;
  spec.background = BackgroundKind::gradient;
  spec.size = 0.25;
  spec.seed = 8;
  auto v = render_video<float>(spec, 4, 32);
  auto pos = trajectory_positions(spec, 4, 32);
  // object drifts left in camera coordinates when the camera pans right
  CHECK(pos[3].first - pos[0].first == doctest::Approx(-3.0));
  // background is not static under pan
  const Index per = 32 * 32 * 3;
  double diff = 0;
  for (Index i = 0; i < per; ++i)
    diff = std::max(diff, std::abs(static_cast<double>(v.data[3 * per + i]) - v.data[i]));
  CHECK(diff > 0.01);
}

TEST_CASE("make_prompt templates and vocabulary closure") {
  SceneSpec spec;
  spec.color = "red";
  spec.shape = ShapeKind::square;
  spec.trajectory = TrajectoryKind::slide_right;
  auto p = make_prompt(spec);
  CHECK(p.raw_text == "a red square sliding right");
  auto p2 = make_prompt(spec);
  CHECK(p.tokens == p2.tokens);
  for (Index t : p.tokens) {
    CHECK(t >= 0);
    CHECK(t < Vocab::instance().size());
  }

  spec.trajectory = TrajectoryKind::forward_then_left;
  CHECK(make_prompt(spec).raw_text == "a red square moving forward then turning left");
  CHECK(make_prompt(spec, false).raw_text == "a red square");

  for (auto traj : {TrajectoryKind::slide_left, TrajectoryKind::slide_up, TrajectoryKind::arc,
                    TrajectoryKind::zigzag})
    for (const auto& col : palette())
      for (auto sh : {ShapeKind::square, ShapeKind::circle, ShapeKind::triangle}) {
        SceneSpec s2;
        s2.color = col.name;
        s2.shape = sh;
        s2.trajectory = traj;
        auto tokens = make_prompt(s2).tokens;
        for (Index t : tokens) CHECK(t < Vocab::instance().size());
      }
}

TEST_CASE("null prompt is the reserved token") {
  auto p = Vocab::null_prompt();
  CHECK(p.is_null());
  CHECK(p.tokens == std::vector<Index>{0});
  CHECK_THROWS(Vocab::instance().tokenize("a nonexistent word"));
}

TEST_CASE("make_dataset: shared motion, unique sources, distinct appearances") {
  std::vector<std::pair<std::string, ShapeKind>> pool = {
      {"red", ShapeKind::square}, {"blue", ShapeKind::circle}, {"green", ShapeKind::triangle},
      {"yellow", ShapeKind::square}, {"magenta", ShapeKind::circle}};
  auto items = make_dataset(TrajectoryKind::slide_right, 5, pool, 99);
  REQUIRE(items.size() == 5);
  std::set<std::string> ids;
  for (auto& it : items) ids.insert(it.source_id);
  CHECK(ids.size() == 5);

  // all clips share the motion class; displacement directions agree up to jitter
  for (auto& it : items) {
    CHECK(it.spec.trajectory == TrajectoryKind::slide_right);
    auto pos = trajectory_positions(it.spec, 8, 32);
    double dx = pos[7].first - pos[0].first;
    CHECK(dx > 4.0);  // rightward
  }
  CHECK_THROWS(make_dataset(TrajectoryKind::arc, 0, pool, 1));
  CHECK_THROWS(make_dataset(TrajectoryKind::arc, 2, {}, 1));

  // single-video customization setting
  auto single = make_dataset(TrajectoryKind::slide_right, 1, {{"red", ShapeKind::square}}, 7);
  CHECK(single.size() == 1);
}

TEST_CASE("sampled pretraining scenes always render") {
  Rng rng(4242);
  for (int i = 0; i < 200; ++i) {
    SceneSpec spec = sample_scene(rng, 8, 32);
    auto v = render_video<float>(spec, 8, 32);
    CHECK(v.shape == Shape{1, 8, 32, 32, 3});
  }
}
