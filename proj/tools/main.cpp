// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset generation, base pre-training, dual-path
// customization, sampling in the three deployment modes, the latent probe, and
// protocol evaluation. Every command writes a manifest with the fully resolved
// config; re-running a manifest reproduces the artifacts byte-for-byte (the
// timestamp lives only in the manifest itself).

#include "vidlora/evalkit.hpp"
#include "vidlora/io.hpp"
#include "vidlora/studio.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

using namespace vidlora;

namespace {

// ---- presets ---------------------------------------------------------------------

struct Preset {
  Index frames = 8;
  Index res = 32;
  UNetConfig model;
};

Preset make_preset(const std::string& name) {
  Preset p;
  if (name == "desk") {
    p.frames = 8;
    p.res = 32;
    p.model.base_channels = 16;
    p.model.channel_multipliers = {1, 2, 4};
    p.model.attn_levels = {1, 2};
    p.model.attention_head_dim = 8;
    p.model.num_frames = 8;
    p.model.frame_size = 32;
    p.model.text_embed_dim = 32;
    p.model.time_embed_dim = 64;
    p.model.ff_mult = 2;
    p.model.norm_groups = 8;
  } else if (name == "paper-scale") {
    p.frames = 16;
    p.res = 384;
    p.model.base_channels = 64;
    p.model.channel_multipliers = {1, 2, 4, 4};
    p.model.attn_levels = {2, 3};
    p.model.attention_head_dim = 32;
    p.model.num_frames = 16;
    p.model.frame_size = 384;
    p.model.text_embed_dim = 64;
    p.model.time_embed_dim = 256;
    p.model.ff_mult = 4;
    p.model.norm_groups = 32;
  } else {
    fail("unknown preset '" + name + "' (expected desk or paper-scale)");
  }
  return p;
}

// ---- common command state -----------------------------------------------------------

struct Common {
  std::string config_path;
  std::string out_dir;
  std::string preset = "desk";
  std::optional<uint64_t> seed;
  std::optional<Index> steps;
  std::optional<double> gamma_spatial, gamma_temporal, guidance;
};

Json load_command_config(const std::string& path, const std::string& command) {
  if (path.empty()) return Json::object();
  Json j = load_json(path);
  if (j.is_object() && j.contains("command") && j.contains("config")) {
    // replaying a manifest
    VL_CHECK(j.at("command").get<std::string>() == command,
             "manifest was recorded for command '" + j.at("command").get<std::string>() +
                 "', not '" + command + "'");
    return j.at("config");
  }
  return j;
}

void write_manifest(const std::string& dir, const std::string& command, const Json& resolved) {
  Json m;
  m["command"] = command;
  m["code_version"] = kVersion;
  m["config"] = resolved;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  m["timestamp_unix_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  write_text((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
}

uint64_t json_u64(const Json& j, const char* key, uint64_t dflt) {
  return j.contains(key) ? j.at(key).get<uint64_t>() : dflt;
}
double json_num(const Json& j, const char* key, double dflt) {
  return j.contains(key) ? j.at(key).get<double>() : dflt;
}
Index json_idx(const Json& j, const char* key, Index dflt) {
  return j.contains(key) ? j.at(key).get<Index>() : dflt;
}
std::string json_str(const Json& j, const char* key, const std::string& dflt) {
  return j.contains(key) ? j.at(key).get<std::string>() : dflt;
}

NoiseSchedule<float> schedule_from_json(const Json& cfg) {
  Json s = cfg.contains("schedule") ? cfg.at("schedule") : Json::object();
  check_keys(s, {"num_steps", "beta_start", "beta_end"}, "schedule");
  return make_schedule<float>(json_idx(s, "num_steps", 1000), json_num(s, "beta_start", 1e-4),
                              json_num(s, "beta_end", 2e-2));
}

Json schedule_to_json(const NoiseSchedule<float>& s) {
  return Json{{"num_steps", s.num_steps}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}};
}

// Resolves a model config: preset defaults overlaid with the file's "model" object.
UNetConfig model_from_json(const Json& cfg, const Preset& preset) {
  UNetConfig base = preset.model;
  if (!cfg.contains("model")) return base;
  Json merged = unet_config_to_json(base);
  const Json& user = cfg.at("model");
  check_keys(user, {"base_channels", "channel_multipliers", "attn_levels", "attention_head_dim",
                    "num_frames", "frame_size", "in_channels", "text_embed_dim", "time_embed_dim",
                    "ff_mult", "norm_groups", "vocab_size", "zero_init_projections"},
             "model config");
  for (auto it = user.begin(); it != user.end(); ++it) merged[it.key()] = it.value();
  return unet_config_from_json(merged);
}

std::vector<std::pair<std::string, ShapeKind>> pool_from_json(const Json& arr) {
  std::vector<std::pair<std::string, ShapeKind>> pool;
  for (const auto& e : arr) {
    check_keys(e, {"color", "shape"}, "appearance_pool entry");
    pool.push_back({e.at("color").get<std::string>(),
                    shape_from_name(e.at("shape").get<std::string>())});
  }
  return pool;
}

// One TrainRun source for sampling commands: either a run directory or a bare
// adapter archive.
AdapterSet<float> load_adapter_source(const Json& j, AdapterKind want,
                                      const std::string& ctx) {
  check_keys(j, {"run", "archive", "source_id"}, ctx);
  if (j.contains("archive")) {
    auto set = load_adapter_set(j.at("archive").get<std::string>());
    VL_CHECK(set.kind == want, ctx + ": archive holds the wrong adapter kind");
    return set;
  }
  VL_CHECK(j.contains("run"), ctx + ": need 'run' or 'archive'");
  auto run = load_train_run(j.at("run").get<std::string>());
  if (want == AdapterKind::temporal) return std::move(run.temporal_set);
  VL_CHECK(!run.spatial_sets.empty(), ctx + ": run has no spatial sets");
  if (j.contains("source_id")) {
    const std::string sid = j.at("source_id").get<std::string>();
    auto it = run.spatial_sets.find(sid);
    VL_CHECK(it != run.spatial_sets.end(), ctx + ": no spatial set for source '" + sid + "'");
    return std::move(it->second);
  }
  VL_CHECK(run.spatial_sets.size() == 1,
           ctx + ": run has several spatial sets, pick one with 'source_id'");
  return std::move(run.spatial_sets.begin()->second);
}

void save_video_artifacts(const Video<float>& v, const std::string& dir,
                          const std::string& stem) {
  write_f32((fs::path(dir) / (stem + ".f32")).string(), v.data);
  write_clip_gif((fs::path(dir) / (stem + ".gif")).string(), v);
}

// ---- commands -----------------------------------------------------------------------

int cmd_gen_data(const Common& common) {
  Json cfg = load_command_config(common.config_path, "gen-data");
  check_keys(cfg, {"preset", "frames", "res", "gifs", "mode", "dataset", "scenes"}, "gen-data");
  const std::string preset_name = json_str(cfg, "preset", common.preset);
  Preset preset = make_preset(preset_name);
  const Index frames = json_idx(cfg, "frames", preset.frames);
  const Index res = json_idx(cfg, "res", preset.res);
  const bool gifs = cfg.contains("gifs") ? cfg.at("gifs").get<bool>() : true;
  const std::string mode = json_str(cfg, "mode", "dataset");

  std::vector<DatasetItem> items;
  if (mode == "dataset") {
    Json d = cfg.contains("dataset") ? cfg.at("dataset") : Json::object();
    check_keys(d, {"motion", "n_videos", "seed", "appearance_pool"}, "gen-data.dataset");
    const TrajectoryKind motion = trajectory_from_name(json_str(d, "motion", "slide_right"));
    const Index n = json_idx(d, "n_videos", 1);
    uint64_t seed = common.seed.value_or(json_u64(d, "seed", 42));
    std::vector<std::pair<std::string, ShapeKind>> pool =
        d.contains("appearance_pool") ? pool_from_json(d.at("appearance_pool"))
                                      : std::vector<std::pair<std::string, ShapeKind>>{
                                            {"red", ShapeKind::square}};
    items = make_dataset(motion, n, pool, seed, frames, res);
    cfg["dataset"] = {{"motion", trajectory_name(motion)},
                      {"n_videos", n},
                      {"seed", seed},
                      {"appearance_pool", Json::array()}};
    for (auto& [c, s] : pool)
      cfg["dataset"]["appearance_pool"].push_back({{"color", c}, {"shape", shape_name(s)}});
  } else if (mode == "scenes") {
    VL_CHECK(cfg.contains("scenes") && cfg.at("scenes").is_array() && !cfg.at("scenes").empty(),
             "gen-data: 'scenes' must be a non-empty array");
    Index i = 0;
    for (const auto& e : cfg.at("scenes")) {
      DatasetItem item;
      item.spec = scene_spec_from_json(e);
      item.clip = render_video<float>(item.spec, frames, res);
      item.prompt = make_prompt(item.spec);
      item.source_id = "scene" + std::to_string(i++) + "_" + item.spec.color + "_" +
                       shape_name(item.spec.shape);
      items.push_back(std::move(item));
    }
  } else {
    fail("gen-data: unknown mode '" + mode + "'");
  }

  fs::create_directories(common.out_dir);
  save_dataset(items, common.out_dir, frames, res, gifs);
  cfg["preset"] = preset_name;
  cfg["frames"] = frames;
  cfg["res"] = res;
  cfg["gifs"] = gifs;
  cfg["mode"] = mode;
  write_manifest(common.out_dir, "gen-data", cfg);
  std::printf("gen-data: wrote %zu clips to %s\n", items.size(), common.out_dir.c_str());
  return 0;
}

int cmd_pretrain(const Common& common) {
  Json cfg = load_command_config(common.config_path, "pretrain");
  check_keys(cfg, {"preset", "model", "schedule", "steps", "lr", "weight_decay", "seed", "stream"},
             "pretrain");
  const std::string preset_name = json_str(cfg, "preset", common.preset);
  Preset preset = make_preset(preset_name);
  UNetConfig mc = model_from_json(cfg, preset);
  auto sched = schedule_from_json(cfg);
  const Index steps = common.steps.value_or(json_idx(cfg, "steps", 3000));
  const uint64_t seed = common.seed.value_or(json_u64(cfg, "seed", 7777));

  Json st = cfg.contains("stream") ? cfg.at("stream") : Json::object();
  check_keys(st, {"frames", "res", "null_prompt_prob", "motion_drop_prob"}, "pretrain.stream");
  PretrainStream stream;
  stream.frames = json_idx(st, "frames", preset.frames);
  stream.res = json_idx(st, "res", preset.res);
  stream.null_prompt_prob = json_num(st, "null_prompt_prob", 0.1);
  stream.motion_drop_prob = json_num(st, "motion_drop_prob", 0.3);
  VL_CHECK(stream.res == mc.frame_size, "pretrain: stream res must match the model frame_size");

  AdamConfig adam;
  adam.lr = json_num(cfg, "lr", 1e-3);
  adam.weight_decay = json_num(cfg, "weight_decay", 0.0);

  UNet<float> model(mc, seed);
  std::printf("pretrain: %lld parameters, %lld steps\n", (long long)model.param_count(),
              (long long)steps);
  std::vector<double> history = pretrain_base<float>(
      model, stream, steps, sched, adam, seed, [&](Index step, double loss) {
        if (step % 100 == 0 || step + 1 == steps) {
          std::printf("  step %lld  loss %.5f\n", (long long)step, loss);
          std::fflush(stdout);
        }
      });

  fs::create_directories(common.out_dir);
  save_checkpoint(model, (fs::path(common.out_dir) / "checkpoint").string(), sched);
  std::ostringstream csv;
  csv << "step,loss\n";
  char buf[64];
  for (size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, history[i]);
    csv << buf;
  }
  write_text((fs::path(common.out_dir) / "loss_history.csv").string(), csv.str());

  cfg["preset"] = preset_name;
  cfg["model"] = unet_config_to_json(mc);
  cfg["schedule"] = schedule_to_json(sched);
  cfg["steps"] = steps;
  cfg["seed"] = seed;
  cfg["lr"] = adam.lr;
  cfg["weight_decay"] = adam.weight_decay;
  cfg["stream"] = {{"frames", stream.frames},
                   {"res", stream.res},
                   {"null_prompt_prob", stream.null_prompt_prob},
                   {"motion_drop_prob", stream.motion_drop_prob}};
  write_manifest(common.out_dir, "pretrain", cfg);
  std::printf("pretrain: checkpoint written to %s/checkpoint\n", common.out_dir.c_str());
  return 0;
}

int cmd_customize(const Common& common) {
  Json cfg = load_command_config(common.config_path, "customize");
  check_keys(cfg, {"base", "data", "mode", "train", "debias"}, "customize");
  VL_CHECK(cfg.contains("base"), "customize: missing 'base' checkpoint directory");
  VL_CHECK(cfg.contains("data"), "customize: missing 'data' dataset directory");
  auto base = load_checkpoint(cfg.at("base").get<std::string>());
  auto clips = load_dataset(cfg.at("data").get<std::string>());
  const std::string mode_name = json_str(cfg, "mode", "dual_path");
  VL_CHECK(mode_name == "dual_path" || mode_name == "coupled",
           "customize: mode must be dual_path or coupled");

  TrainConfig tc =
      cfg.contains("train") ? train_config_from_json(cfg.at("train")) : TrainConfig{};
  if (common.seed) tc.seed = *common.seed;
  if (common.steps) tc.steps_override = *common.steps;
  Json db = cfg.contains("debias") ? cfg.at("debias") : Json::object();
  check_keys(db, {"beta", "anchor_policy"}, "customize.debias");
  DebiasConfig dc;
  dc.beta = json_num(db, "beta", 1.0);
  if (db.contains("anchor_policy"))
    VL_CHECK(db.at("anchor_policy").get<std::string>() == "random_frame",
             "customize: only the random_frame anchor policy exists");

  const Index steps = tc.steps_for(clips.size());
  std::printf("customize: %s, %zu clip(s), %lld steps\n", mode_name.c_str(), clips.size(),
              (long long)steps);
  auto run = train_customization(
      *base.model, clips, base.sched, tc, dc,
      mode_name == "coupled" ? TrainMode::coupled : TrainMode::dual_path,
      [&](Index step, const StepRecord& rec) {
        if (step % 50 == 0 || step + 1 == steps) {
          std::printf("  step %lld  spatial %.4f  org %.4f  ad %.4f\n", (long long)step,
                      rec.spatial, rec.org_temp, rec.ad_temp);
          std::fflush(stdout);
        }
      });

  fs::create_directories(common.out_dir);
  save_train_run(run, (fs::path(common.out_dir) / "run").string());
  cfg["mode"] = mode_name;
  cfg["train"] = train_config_to_json(tc);
  cfg["debias"] = {{"beta", dc.beta}, {"anchor_policy", "random_frame"}};
  write_manifest(common.out_dir, "customize", cfg);
  std::printf("customize: run written to %s/run\n", common.out_dir.c_str());
  return 0;
}

int cmd_sample(const Common& common) {
  Json cfg = load_command_config(common.config_path, "sample");
  check_keys(cfg,
             {"base", "temporal", "prompt", "seeds", "seed", "steps", "guidance_scale",
              "gamma_temporal", "frames", "res"},
             "sample");
  VL_CHECK(cfg.contains("base"), "sample: missing 'base' checkpoint directory");
  auto base = load_checkpoint(cfg.at("base").get<std::string>());
  const Index frames = json_idx(cfg, "frames", base.model->config().num_frames);
  const Index res = json_idx(cfg, "res", base.model->config().frame_size);
  const Index steps = common.steps.value_or(json_idx(cfg, "steps", kDefaultSamplingSteps));
  const double guidance =
      common.guidance.value_or(json_num(cfg, "guidance_scale", kDefaultGuidanceScale));
  const double gamma_t = common.gamma_temporal.value_or(json_num(cfg, "gamma_temporal", 1.0));
  const std::string prompt_text = json_str(cfg, "prompt", "a red square");
  PromptSpec prompt = Vocab::instance().tokenize(prompt_text);

  std::vector<uint64_t> seeds;
  if (cfg.contains("seeds"))
    seeds = cfg.at("seeds").get<std::vector<uint64_t>>();
  else
    seeds = {common.seed.value_or(json_u64(cfg, "seed", 1))};
  if (common.seed && cfg.contains("seeds")) seeds = {*common.seed};

  std::optional<AdapterSet<float>> tset;
  if (cfg.contains("temporal")) {
    tset = load_adapter_source(cfg.at("temporal"), AdapterKind::temporal, "sample.temporal");
    validate_adapter_set(*tset, *base.model);
  }

  fs::create_directories(common.out_dir);
  for (uint64_t seed : seeds) {
    Video<float> v;
    const Shape shape = {1, frames, res, res, 3};
    if (tset) {
      v = customize_motion<float>(*base.model, base.sched, *tset, prompt,
                                  static_cast<float>(gamma_t), seed, shape, steps,
                                  static_cast<float>(guidance));
    } else {
      v = sample<float>(*base.model, base.sched, prompt, steps, static_cast<float>(guidance),
                        shape, seed);
    }
    save_video_artifacts(clamp_video(std::move(v)), common.out_dir,
                         "sample_seed" + std::to_string(seed));
  }

  cfg["prompt"] = prompt_text;
  cfg["steps"] = steps;
  cfg["guidance_scale"] = guidance;
  cfg["gamma_temporal"] = gamma_t;
  cfg["frames"] = frames;
  cfg["res"] = res;
  cfg["seeds"] = seeds;
  cfg.erase("seed");
  write_manifest(common.out_dir, "sample", cfg);
  std::printf("sample: wrote %zu clip(s) to %s\n", seeds.size(), common.out_dir.c_str());
  return 0;
}

int cmd_mix(const Common& common) {
  Json cfg = load_command_config(common.config_path, "mix");
  check_keys(cfg,
             {"base", "spatial", "temporal", "prompt", "seeds", "seed", "steps", "guidance_scale",
              "gamma_spatial", "gamma_temporal", "frames", "res"},
             "mix");
  VL_CHECK(cfg.contains("base") && cfg.contains("spatial") && cfg.contains("temporal"),
           "mix: need 'base', 'spatial' and 'temporal'");
  auto base = load_checkpoint(cfg.at("base").get<std::string>());
  auto sset = load_adapter_source(cfg.at("spatial"), AdapterKind::spatial, "mix.spatial");
  auto tset = load_adapter_source(cfg.at("temporal"), AdapterKind::temporal, "mix.temporal");
  validate_adapter_set(sset, *base.model);
  validate_adapter_set(tset, *base.model);

  const Index frames = json_idx(cfg, "frames", base.model->config().num_frames);
  const Index res = json_idx(cfg, "res", base.model->config().frame_size);
  const Index steps = common.steps.value_or(json_idx(cfg, "steps", kDefaultSamplingSteps));
  const double guidance =
      common.guidance.value_or(json_num(cfg, "guidance_scale", kDefaultGuidanceScale));
  const double gs = common.gamma_spatial.value_or(json_num(cfg, "gamma_spatial", 1.0));
  const double gt = common.gamma_temporal.value_or(json_num(cfg, "gamma_temporal", 1.0));
  const std::string prompt_text = json_str(cfg, "prompt", "a red square");
  PromptSpec prompt = Vocab::instance().tokenize(prompt_text);
  std::vector<uint64_t> seeds;
  if (cfg.contains("seeds"))
    seeds = cfg.at("seeds").get<std::vector<uint64_t>>();
  else
    seeds = {common.seed.value_or(json_u64(cfg, "seed", 1))};

  fs::create_directories(common.out_dir);
  for (uint64_t seed : seeds) {
    auto v = mix_videos<float>(*base.model, base.sched, sset, tset, static_cast<float>(gs),
                               static_cast<float>(gt), prompt, seed, {1, frames, res, res, 3},
                               steps, static_cast<float>(guidance));
    save_video_artifacts(clamp_video(std::move(v)), common.out_dir,
                         "mix_seed" + std::to_string(seed));
  }
  cfg["prompt"] = prompt_text;
  cfg["steps"] = steps;
  cfg["guidance_scale"] = guidance;
  cfg["gamma_spatial"] = gs;
  cfg["gamma_temporal"] = gt;
  cfg["frames"] = frames;
  cfg["res"] = res;
  cfg["seeds"] = seeds;
  cfg.erase("seed");
  write_manifest(common.out_dir, "mix", cfg);
  std::printf("mix: wrote %zu clip(s) to %s\n", seeds.size(), common.out_dir.c_str());
  return 0;
}

int cmd_animate(const Common& common) {
  Json cfg = load_command_config(common.config_path, "animate");
  check_keys(cfg,
             {"base", "temporal", "image", "prompt", "seed", "steps", "guidance_scale",
              "gamma_spatial", "gamma_temporal", "frames", "fit_steps", "train"},
             "animate");
  VL_CHECK(cfg.contains("base") && cfg.contains("temporal") && cfg.contains("image"),
           "animate: need 'base', 'temporal' and 'image'");
  auto base = load_checkpoint(cfg.at("base").get<std::string>());
  auto tset = load_adapter_source(cfg.at("temporal"), AdapterKind::temporal, "animate.temporal");
  validate_adapter_set(tset, *base.model);

  // image: frame `frame` of a dataset clip, or a rendered scene spec
  Json im = cfg.at("image");
  check_keys(im, {"data", "source_id", "frame", "scene"}, "animate.image");
  Video<float> image;
  if (im.contains("scene")) {
    SceneSpec spec = scene_spec_from_json(im.at("scene"));
    image = render_video<float>(spec, 1, base.model->config().frame_size);
  } else {
    VL_CHECK(im.contains("data"), "animate.image: need 'data' or 'scene'");
    auto items = load_dataset(im.at("data").get<std::string>());
    const std::string sid = json_str(im, "source_id", items.front().source_id);
    const DatasetItem* found = nullptr;
    for (const auto& it : items)
      if (it.source_id == sid) found = &it;
    VL_CHECK(found != nullptr, "animate.image: no clip named '" + sid + "'");
    image = take_frame(found->clip, json_idx(im, "frame", 0));
  }

  TrainConfig tc =
      cfg.contains("train") ? train_config_from_json(cfg.at("train")) : TrainConfig{};
  if (common.seed) tc.seed = *common.seed;
  const Index fit_steps = json_idx(cfg, "fit_steps", tc.steps_single_video);
  const Index frames = json_idx(cfg, "frames", base.model->config().num_frames);
  const Index steps = common.steps.value_or(json_idx(cfg, "steps", kDefaultSamplingSteps));
  const double guidance =
      common.guidance.value_or(json_num(cfg, "guidance_scale", kDefaultGuidanceScale));
  const double gs = common.gamma_spatial.value_or(json_num(cfg, "gamma_spatial", 1.0));
  const double gt = common.gamma_temporal.value_or(json_num(cfg, "gamma_temporal", 1.0));
  const uint64_t seed = common.seed.value_or(json_u64(cfg, "seed", 1));
  const std::string prompt_text = json_str(cfg, "prompt", "a red square");
  PromptSpec prompt = Vocab::instance().tokenize(prompt_text);

  auto v = animate_image<float>(*base.model, base.sched, image, tset, prompt, tc, fit_steps,
                                static_cast<float>(gs), static_cast<float>(gt), seed, frames,
                                steps, static_cast<float>(guidance));
  fs::create_directories(common.out_dir);
  save_video_artifacts(clamp_video(std::move(v)), common.out_dir, "animated");
  write_f32((fs::path(common.out_dir) / "source_image.f32").string(), image.data);

  cfg["prompt"] = prompt_text;
  cfg["fit_steps"] = fit_steps;
  cfg["frames"] = frames;
  cfg["steps"] = steps;
  cfg["guidance_scale"] = guidance;
  cfg["gamma_spatial"] = gs;
  cfg["gamma_temporal"] = gt;
  cfg["seed"] = seed;
  cfg["train"] = train_config_to_json(tc);
  write_manifest(common.out_dir, "animate", cfg);
  std::printf("animate: wrote %s/animated.gif\n", common.out_dir.c_str());
  return 0;
}

int cmd_probe(const Common& common) {
  Json cfg = load_command_config(common.config_path, "probe");
  check_keys(cfg, {"base", "data", "t_grid", "beta", "seed", "schedule"}, "probe");
  NoiseSchedule<float> sched;
  if (cfg.contains("base"))
    sched = load_checkpoint(cfg.at("base").get<std::string>()).sched;
  else
    sched = schedule_from_json(cfg);
  VL_CHECK(cfg.contains("data"), "probe: missing 'data' dataset directory");
  auto items = load_dataset(cfg.at("data").get<std::string>());
  std::vector<Video<float>> clips;
  std::vector<std::string> labels;
  for (auto& it : items) {
    clips.push_back(it.clip);
    labels.push_back(it.source_id);
  }
  std::vector<Index> t_grid = cfg.contains("t_grid")
                                  ? cfg.at("t_grid").get<std::vector<Index>>()
                                  : std::vector<Index>{1, 250, 500, 750};
  const double beta = json_num(cfg, "beta", 1.0);
  const uint64_t seed = common.seed.value_or(json_u64(cfg, "seed", 1));

  auto report = probe_latents<float>(clips, labels, sched, t_grid, beta, seed);

  fs::create_directories(common.out_dir);
  Json out;
  out["beta"] = report.beta;
  out["anchor"] = report.anchor;
  out["slices"] = Json::array();
  for (const auto& slice : report.slices) {
    Json js;
    js["t"] = slice.t;
    js["traces"] = Json::array();
    for (const auto& tr : slice.traces) {
      Json jt;
      jt["label"] = tr.label;
      jt["diff_norms_raw"] = tr.diff_norms_raw;
      jt["diff_norms_debiased"] = tr.diff_norms_debiased;
      jt["diff_cos_raw"] = tr.diff_cos_raw;
      jt["diff_cos_debiased"] = tr.diff_cos_debiased;
      js["traces"].push_back(jt);
    }
    Json dr = Json::array(), dd = Json::array();
    for (Index i = 0; i < slice.centroid_dist_raw.rows(); ++i) {
      Json r1 = Json::array(), r2 = Json::array();
      for (Index j = 0; j < slice.centroid_dist_raw.cols(); ++j) {
        r1.push_back(slice.centroid_dist_raw(i, j));
        r2.push_back(slice.centroid_dist_debiased(i, j));
      }
      dr.push_back(r1);
      dd.push_back(r2);
    }
    js["centroid_dist_raw"] = dr;
    js["centroid_dist_debiased"] = dd;
    out["slices"].push_back(js);
    write_text((fs::path(common.out_dir) / ("scatter_t" + std::to_string(slice.t) + "_raw.svg"))
                   .string(),
               probe_slice_svg(slice, false));
    write_text(
        (fs::path(common.out_dir) / ("scatter_t" + std::to_string(slice.t) + "_debiased.svg"))
            .string(),
        probe_slice_svg(slice, true));
  }
  write_text((fs::path(common.out_dir) / "probe_report.json").string(), out.dump(2) + "\n");

  cfg["t_grid"] = t_grid;
  cfg["beta"] = beta;
  cfg["seed"] = seed;
  write_manifest(common.out_dir, "probe", cfg);
  std::printf("probe: report and %zu scatter plots written to %s\n", 2 * report.slices.size(),
              common.out_dir.c_str());
  return 0;
}

EvalProtocol protocol_from_json(const Json& p) {
  check_keys(p,
             {"name", "prompts", "seeds", "steps", "guidance_scale", "gamma_spatial",
              "gamma_temporal", "frames", "res", "motion_fidelity_min"},
             "protocol");
  EvalProtocol proto;
  proto.name = json_str(p, "name", "decoupling");
  VL_CHECK(p.contains("prompts"), "protocol: missing prompts");
  for (const auto& e : p.at("prompts")) {
    check_keys(e, {"text", "target_color", "target_shape", "ref_motion"}, "protocol prompt");
    EvalPrompt ep;
    ep.text = e.at("text").get<std::string>();
    ep.target_color = json_str(e, "target_color", "blue");
    ep.target_shape = shape_from_name(json_str(e, "target_shape", "circle"));
    ep.ref_motion = trajectory_from_name(json_str(e, "ref_motion", "slide_right"));
    proto.prompts.push_back(ep);
  }
  proto.seeds = p.contains("seeds") ? p.at("seeds").get<std::vector<uint64_t>>()
                                    : std::vector<uint64_t>{};
  proto.steps = json_idx(p, "steps", kDefaultSamplingSteps);
  proto.guidance_scale = json_num(p, "guidance_scale", kDefaultGuidanceScale);
  proto.gamma_spatial = json_num(p, "gamma_spatial", 1.0);
  proto.gamma_temporal = json_num(p, "gamma_temporal", 1.0);
  proto.frames = json_idx(p, "frames", 8);
  proto.res = json_idx(p, "res", 32);
  proto.motion_fidelity_min = json_num(p, "motion_fidelity_min", 0.7);
  return proto;
}

int cmd_eval(const Common& common) {
  Json cfg = load_command_config(common.config_path, "eval");
  check_keys(cfg, {"base", "run", "coupled_run", "protocol", "include_base"}, "eval");
  VL_CHECK(cfg.contains("base") && cfg.contains("run"), "eval: need 'base' and 'run'");
  auto base = load_checkpoint(cfg.at("base").get<std::string>());
  auto run = load_train_run(cfg.at("run").get<std::string>());
  std::optional<TrainRun<float>> coupled;
  if (cfg.contains("coupled_run"))
    coupled = load_train_run(cfg.at("coupled_run").get<std::string>());

  Json pj = cfg.contains("protocol") ? cfg.at("protocol") : Json::object();
  if (pj.is_string()) pj = load_json(pj.get<std::string>());
  EvalProtocol proto = protocol_from_json(pj);
  const bool include_base = cfg.contains("include_base") ? cfg.at("include_base").get<bool>() : true;

  auto report = evaluate_run<float>(*base.model, base.sched, run,
                                    coupled ? &*coupled : nullptr, proto, include_base);
  fs::create_directories(common.out_dir);
  write_text((fs::path(common.out_dir) / "metrics.csv").string(), report.to_csv());
  write_text((fs::path(common.out_dir) / "summary.txt").string(), report.summary());
  std::printf("%s", report.summary().c_str());

  cfg["protocol"] = pj;
  cfg["include_base"] = include_base;
  write_manifest(common.out_dir, "eval", cfg);
  std::printf("eval: metrics written to %s\n", common.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vidlora: dual-path low-rank motion customization on synthetic videos"};
  app.require_subcommand(1);

  Common common;

  auto add_common = [&](CLI::App* sub, bool needs_out = true) {
    sub->add_option("--config", common.config_path, "JSON config (or a recorded manifest)");
    auto* out = sub->add_option("--out", common.out_dir, "output directory");
    if (needs_out) out->required();
    sub->add_option("--preset", common.preset, "desk or paper-scale")
        ->check(CLI::IsMember({"desk", "paper-scale"}));
    sub->add_option("--seed", common.seed, "seed override");
    sub->add_option("--steps", common.steps, "step-count override");
    sub->add_option("--gamma-spatial", common.gamma_spatial, "spatial adapter scale");
    sub->add_option("--gamma-temporal", common.gamma_temporal, "temporal adapter scale");
    sub->add_option("--guidance-scale", common.guidance, "classifier-free guidance scale");
  };

  auto* c_gen = app.add_subcommand("gen-data", "render a labeled synthetic dataset");
  add_common(c_gen);
  auto* c_pre = app.add_subcommand("pretrain", "pre-train the base denoiser");
  add_common(c_pre);
  auto* c_cus = app.add_subcommand("customize", "dual-path (or coupled) adapter training");
  add_common(c_cus);
  auto* c_sam = app.add_subcommand("sample", "sample videos, optionally with temporal adapters");
  add_common(c_sam);
  auto* c_mix = app.add_subcommand("mix", "mix a spatial set with a temporal set");
  add_common(c_mix);
  auto* c_ani = app.add_subcommand("animate", "animate a still image with a learned motion");
  add_common(c_ani);
  auto* c_prb = app.add_subcommand("probe", "latent-geometry probe with debias comparison");
  add_common(c_prb);
  auto* c_evl = app.add_subcommand("eval", "run the decoupling evaluation protocol");
  add_common(c_evl);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_gen->parsed()) return cmd_gen_data(common);
    if (c_pre->parsed()) return cmd_pretrain(common);
    if (c_cus->parsed()) return cmd_customize(common);
    if (c_sam->parsed()) return cmd_sample(common);
    if (c_mix->parsed()) return cmd_mix(common);
    if (c_ani->parsed()) return cmd_animate(common);
    if (c_prb->parsed()) return cmd_probe(common);
    if (c_evl->parsed()) return cmd_eval(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
