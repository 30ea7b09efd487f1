// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vidlora/io.hpp"

using namespace vidlora;

namespace {

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

fs::path tmpdir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "vidlora_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <typename S>
void randomize_set(AdapterSet<S>& set, uint64_t seed) {
  Rng rng(seed);
  for (auto& [path, a] : set.adapters) {
    rng.normal_fill(a.A.value(), 0.05);
    rng.normal_fill(a.B.value(), 0.05);
  }
}

}  // namespace

TEST_CASE("adapter archive: save -> load -> save is byte-identical") {
  UNet<float> m(micro_config(), 1);
  auto set = make_adapter_set<float>(m, AdapterKind::temporal, "clip0", 2, 2);
  randomize_set(set, 3);
  set.adapters.begin()->second.scale = 0.75f;

  auto d1 = tmpdir("arch1");
  auto d2 = tmpdir("arch2");
  save_adapter_set(set, d1.string());
  auto loaded = load_adapter_set(d1.string());
  save_adapter_set(loaded, d2.string());

  CHECK(hash_tree(d1.string()) == hash_tree(d2.string()));
  CHECK(loaded.kind == AdapterKind::temporal);
  CHECK(loaded.source_id == "clip0");
  CHECK(loaded.rank == 2);
  REQUIRE(loaded.adapters.size() == set.adapters.size());
  for (auto& [path, a] : set.adapters) {
    auto& b = loaded.adapters.at(path);
    CHECK(b.scale == a.scale);
    for (Index i = 0; i < a.A.size(); ++i) CHECK(a.A.value()[i] == b.A.value()[i]);
    for (Index i = 0; i < a.B.size(); ++i) CHECK(a.B.value()[i] == b.B.value()[i]);
  }
}

TEST_CASE("adapter archive: corruption and version mismatch are rejected") {
  UNet<float> m(micro_config(), 4);
  auto set = make_adapter_set<float>(m, AdapterKind::spatial, "s", 2, 5);
  auto dir = tmpdir("arch_bad");
  save_adapter_set(set, dir.string());

  // truncate one matrix file
  auto manifest = load_json((dir / "manifest.json").string());
  const std::string victim = manifest["adapters"][0]["file_a"].get<std::string>();
  write_bytes((dir / victim).string(), "xx", 2);
  CHECK_THROWS(load_adapter_set(dir.string()));

  // version mismatch
  save_adapter_set(set, dir.string());
  manifest = load_json((dir / "manifest.json").string());
  manifest["format_version"] = 999;
  write_text((dir / "manifest.json").string(), manifest.dump(2));
  CHECK_THROWS(load_adapter_set(dir.string()));
}

TEST_CASE("adapter set validation lists paths missing from the model") {
  UNet<float> m(micro_config(), 6);
  auto set = make_adapter_set<float>(m, AdapterKind::spatial, "s", 2, 7);
  CHECK_NOTHROW(validate_adapter_set(set, m));

  // a model without attention at level 0 lacks every one of those paths
  UNetConfig other = micro_config();
  other.base_channels = 16;  // different dims too
  UNet<float> m2(other, 8);
  LoRAAdapter<float> alien = init_adapter<float>("nowhere.q", 4, 4, 2, 9);
  AdapterSet<float> bad;
  bad.kind = AdapterKind::spatial;
  bad.source_id = "x";
  bad.rank = 2;
  bad.adapters.emplace("nowhere.q", std::move(alien));
  try {
    validate_adapter_set(bad, m);
    FAIL("expected validation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("nowhere.q") != std::string::npos);
  }
  // dims mismatch also fails with the path named
  try {
    validate_adapter_set(set, m2);
    FAIL("expected validation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("dims") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip: parameters and outputs bit-identical") {
  UNet<float> m(micro_config(), 10);
  auto sched = make_schedule<float>(10, 1e-3, 2e-2);
  auto dir = tmpdir("ckpt");
  save_checkpoint(m, dir.string(), sched);
  auto loaded = load_checkpoint(dir.string());

  CHECK(loaded.sched.num_steps == 10);
  CHECK(loaded.model->param_count() == m.param_count());
  Rng rng(11);
  Tensor<float> z = Tensor<float>::randn({1, 2, 8, 8, 3}, rng);
  auto prompt = Vocab::instance().tokenize("a red square");
  auto a = m.denoise_tensor(z, 3, prompt);
  auto b = loaded.model->denoise_tensor(z, 3, prompt);
  for (Index i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);

  // save -> load -> save: byte identical
  auto dir2 = tmpdir("ckpt2");
  save_checkpoint(*loaded.model, dir2.string(), loaded.sched);
  CHECK(hash_tree(dir.string()) == hash_tree(dir2.string()));
}

TEST_CASE("dataset round trip preserves clips bit-exactly and writes gifs") {
  auto items = make_dataset(TrajectoryKind::slide_right, 2,
                            {{"red", ShapeKind::square}, {"blue", ShapeKind::circle}}, 12, 4, 16);
  auto dir = tmpdir("dataset");
  save_dataset(items, dir.string(), 4, 16);
  auto loaded = load_dataset(dir.string());
  REQUIRE(loaded.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(loaded[i].source_id == items[i].source_id);
    CHECK(loaded[i].prompt.tokens == items[i].prompt.tokens);
    for (Index j = 0; j < items[i].clip.size(); ++j)
      CHECK(loaded[i].clip.data[j] == items[i].clip.data[j]);
  }
  // gif sanity: magic bytes and trailer
  auto gif = read_bytes((dir / "clips" / (sanitize_path(items[0].source_id) + ".gif")).string());
  REQUIRE(gif.size() > 13);
  CHECK(std::string(gif.begin(), gif.begin() + 6) == "GIF89a");
  CHECK(gif.back() == 0x3B);

  // rewriting the dataset produces identical bytes
  auto dir2 = tmpdir("dataset2");
  save_dataset(items, dir2.string(), 4, 16);
  CHECK(hash_tree(dir.string()) == hash_tree(dir2.string()));
}

TEST_CASE("train run round trip") {
  UNet<float> m(micro_config(), 13);
  auto sched = make_schedule<float>(10, 1e-3, 2e-2);
  auto clips = make_dataset(TrajectoryKind::slide_right, 2,
                            {{"red", ShapeKind::square}, {"blue", ShapeKind::circle}}, 14, 2, 8);
  TrainConfig cfg;
  cfg.rank = 2;
  cfg.steps_override = 2;
  cfg.adam.lr = 1e-3;
  cfg.seed = 15;
  auto run = train_customization(m, clips, sched, cfg, DebiasConfig{0.5});

  auto dir = tmpdir("run");
  save_train_run(run, dir.string());
  auto loaded = load_train_run(dir.string());
  CHECK(loaded.mode == TrainMode::dual_path);
  CHECK(loaded.debias.beta == 0.5);
  CHECK(loaded.config.rank == 2);
  CHECK(loaded.config.seed == 15);
  REQUIRE(loaded.spatial_sets.size() == 2);
  for (auto& [sid, set] : run.spatial_sets) {
    auto& l = loaded.spatial_sets.at(sid);
    for (auto& [p, a] : set.adapters) {
      auto& b = l.adapters.at(p);
      for (Index i = 0; i < a.A.size(); ++i) CHECK(a.A.value()[i] == b.A.value()[i]);
      for (Index i = 0; i < a.B.size(); ++i) CHECK(a.B.value()[i] == b.B.value()[i]);
    }
  }
  // loss history CSV exists with one row per step
  auto csv = read_text((dir / "loss_history.csv").string());
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 steps
}

TEST_CASE("gif writer is deterministic") {
  SceneSpec spec;
  spec.seed = 16;
  auto v = render_video<float>(spec, 4, 16);
  auto dir = tmpdir("gif");
  write_clip_gif((dir / "a.gif").string(), v);
  write_clip_gif((dir / "b.gif").string(), v);
  CHECK(hash_file((dir / "a.gif").string()) == hash_file((dir / "b.gif").string()));
}

TEST_CASE("strict key checking names the offending key") {
  Json j = Json::parse(R"({"lr": 0.1, "lrr": 0.2})");
  try {
    train_config_from_json(j);
    FAIL("expected unknown-key error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("lrr") != std::string::npos);
  }
}

TEST_CASE("unet config json round trip") {
  UNetConfig c = micro_config();
  c.channel_multipliers = {1, 2, 4};
  c.attn_levels = {1, 2};
  Json j = unet_config_to_json(c);
  UNetConfig back = unet_config_from_json(j);
  CHECK(back.base_channels == c.base_channels);
  CHECK(back.channel_multipliers == c.channel_multipliers);
  CHECK(back.attn_levels == c.attn_levels);
  CHECK(back.zero_init_projections == c.zero_init_projections);
}
