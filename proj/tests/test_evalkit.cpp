// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vidlora/evalkit.hpp"

using namespace vidlora;

namespace {

SceneSpec basic_spec() {
  SceneSpec s;
  s.shape = ShapeKind::circle;
  s.color = "blue";
  s.size = 0.3;
  s.trajectory = TrajectoryKind::slide_right;
  s.speed = 1.0;
  s.seed = 5;
  return s;
}

UNetConfig micro_config() {
  UNetConfig cfg;
  cfg.base_channels = 8;
  cfg.channel_multipliers = {1};
  cfg.attn_levels = {0};
  cfg.attention_head_dim = 4;
  cfg.num_frames = 2;
  cfg.frame_size = 8;
  cfg.text_embed_dim = 8;
  cfg.time_embed_dim = 16;
  cfg.ff_mult = 2;
  cfg.norm_groups = 4;
  return cfg;
}

}  // namespace

TEST_CASE("centroid_track follows the analytic trajectory") {
  auto spec = basic_spec();
  auto v = render_video<float>(spec, 8, 32);
  auto track = centroid_track(v);
  REQUIRE(track.complete());
  auto pos = trajectory_positions(spec, 8, 32);
  for (size_t f = 0; f < 8; ++f) {
    CHECK(std::abs(track.points[f]->first - pos[f].first) < 1.5);
    CHECK(std::abs(track.points[f]->second - pos[f].second) < 1.5);
  }
}

TEST_CASE("static clip: zero net displacement") {
  auto spec = basic_spec();
  spec.speed = 0;
  auto v = render_video<float>(spec, 8, 32);
  auto net = net_displacement(centroid_track(v));
  REQUIRE(net.has_value());
  CHECK(std::abs(net->first) < 0.5);
  CHECK(std::abs(net->second) < 0.5);
}

TEST_CASE("uniform frames yield missing centroids") {
  Video<float> flat = Video<float>::full({1, 3, 16, 16, 3}, -0.8f);
  auto track = centroid_track(flat);
  CHECK(!track.complete());
  CHECK(track.missing_count() == 3);
}

TEST_CASE("motion fidelity: self, reversed, static") {
  auto spec = basic_spec();
  auto v = render_video<float>(spec, 8, 32);
  auto self_score = motion_fidelity(v, TrajectoryKind::slide_right);
  CHECK(self_score.defined);
  CHECK(self_score.score >= 0.95);
  CHECK(self_score.net_dx > 0);

  // reversed trajectory is antiparallel
  auto rev = motion_fidelity(v, TrajectoryKind::slide_left);
  CHECK(rev.score <= 0.05);

  spec.speed = 0;
  auto stat = render_video<float>(spec, 8, 32);
  auto zs = motion_fidelity(stat, TrajectoryKind::slide_right);
  CHECK(zs.zero_motion);
  CHECK(zs.score == 0.5);
}

TEST_CASE("appearance_score: direct oracle behavior on renders") {
  auto spec = basic_spec();
  auto v = render_video<float>(spec, 8, 32);
  auto s = appearance_score(v, "blue", ShapeKind::circle);
  CHECK(s.defined);
  CHECK(s.hue_match);
  CHECK(s.shape_match);
  CHECK(s.shape_score > 0.5);

  auto wrong = appearance_score(v, "red", ShapeKind::circle);
  CHECK(!wrong.hue_match);

  SceneSpec rs = basic_spec();
  rs.color = "red";
  rs.shape = ShapeKind::square;
  auto v2 = render_video<float>(rs, 8, 32);
  CHECK(!appearance_score(v2, "blue", ShapeKind::square).hue_match);
  CHECK(appearance_score(v2, "red", ShapeKind::square).hue_match);

  // degenerate foreground
  Video<float> flat = Video<float>::full({1, 2, 16, 16, 3}, 0.1f);
  CHECK(!appearance_score(flat, "red", ShapeKind::square).defined);
}

TEST_CASE("renderer-classifier closure: 100 random specs classify perfectly") {
  Rng rng(31337);
  int n = 0;
  while (n < 100) {
    SceneSpec spec = sample_scene(rng, 8, 32);
    auto v = render_video<float>(spec, 8, 32);
    auto s = appearance_score(v, spec.color, spec.shape);
    INFO("spec: " << spec.color << " " << std::string(shape_name(spec.shape)) << " traj "
                  << std::string(trajectory_name(spec.trajectory)) << " size " << spec.size);
    CHECK(s.defined);
    CHECK(s.hue_match);
    CHECK(s.shape_match);
    ++n;
  }
}

TEST_CASE("temporal consistency: identical, noise, smooth") {
  auto spec = basic_spec();
  spec.speed = 0;
  auto stat = render_video<float>(spec, 4, 32);
  CHECK(temporal_consistency(stat) == doctest::Approx(1.0));

  // Monte-Carlo noise baseline over 100 clips
  Rng rng(99);
  double worst = 0;
  double mean = 0;
  for (int i = 0; i < 100; ++i) {
    Video<float> noise = Video<float>::randn({1, 4, 16, 16, 3}, rng);
    double s = temporal_consistency(noise);
    worst = std::max(worst, s);
    mean += s;
  }
  mean /= 100;
  CHECK(worst < 0.2);

  spec.speed = 1.0;
  auto smooth = render_video<float>(spec, 8, 32);
  CHECK(temporal_consistency(smooth) >= mean + 0.3);

  Video<float> single = Video<float>::zeros({1, 1, 8, 8, 3});
  CHECK_THROWS(temporal_consistency(single));
}

TEST_CASE("evaluate_run: empty protocol and determinism") {
  UNet<float> m(micro_config(), 7);
  auto sched = make_schedule<float>(10, 1e-3, 2e-2);
  auto clips = make_dataset(TrajectoryKind::slide_right, 1, {{"red", ShapeKind::square}}, 1, 2, 8);
  TrainConfig cfg;
  cfg.rank = 2;
  cfg.steps_override = 2;
  cfg.adam.lr = 1e-3;
  auto run = train_customization(m, clips, sched, cfg, DebiasConfig{1.0});

  EvalProtocol proto;
  proto.prompts = {{"a blue circle", "blue", ShapeKind::circle, TrajectoryKind::slide_right}};
  proto.seeds = {};  // zero seeds: empty table, no crash
  proto.steps = 2;
  proto.frames = 2;
  proto.res = 8;
  auto empty = evaluate_run(m, sched, run, nullptr, proto);
  CHECK(empty.rows.empty());

  proto.seeds = {11, 12};
  auto r1 = evaluate_run(m, sched, run, nullptr, proto);
  auto r2 = evaluate_run(m, sched, run, nullptr, proto);
  REQUIRE(r1.rows.size() == r2.rows.size());
  REQUIRE(r1.rows.size() == 4);  // base + dual_path arms, 2 seeds
  for (size_t i = 0; i < r1.rows.size(); ++i) {
    CHECK(r1.rows[i].net_dx == r2.rows[i].net_dx);
    CHECK(r1.rows[i].motion_fid == r2.rows[i].motion_fid);
    CHECK(r1.rows[i].hue == r2.rows[i].hue);
  }
  CHECK(r1.to_csv() == r2.to_csv());
  CHECK(!r1.summary().empty());
}
