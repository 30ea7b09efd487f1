// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats. Archives are a structured-text manifest plus one raw
// little-endian float32 binary per matrix (row-major), so round trips are
// bit-exact and diffable. Checkpoints reuse the same layout for the full model.

#pragma once

#include "vidlora/gif.hpp"
#include "vidlora/trainer.hpp"
#include "vidlora/unet.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

namespace vidlora {

using Json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

// ---- raw bytes -----------------------------------------------------------------

inline void write_bytes(const std::string& path, const void* data, size_t n) {
  std::ofstream f(path, std::ios::binary);
  VL_CHECK(f.good(), "io: cannot open for write: " + path);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  VL_CHECK(f.good(), "io: write failed: " + path);
}

inline std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  VL_CHECK(f.good(), "io: cannot open: " + path);
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> buf(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(buf.data()), n);
  VL_CHECK(f.good(), "io: read failed: " + path);
  return buf;
}

inline void write_f32(const std::string& path, const ArrX<float>& a) {
  write_bytes(path, a.data(), static_cast<size_t>(a.size()) * sizeof(float));
}

inline ArrX<float> read_f32(const std::string& path, Index expected) {
  auto bytes = read_bytes(path);
  VL_CHECK(bytes.size() == static_cast<size_t>(expected) * sizeof(float),
           "io: corrupt archive, wrong size for " + path);
  ArrX<float> out(expected);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  write_bytes(path, text.data(), text.size());
}

inline std::string read_text(const std::string& path) {
  auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

inline uint64_t fnv1a(const uint8_t* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t hash_file(const std::string& path) {
  auto b = read_bytes(path);
  return fnv1a(b.data(), b.size());
}

// Combined hash of every file under a directory except the excluded relative
// paths. Command manifests carry the only timestamps, so replay comparisons
// exclude exactly those.
inline uint64_t hash_tree(const std::string& dir, const std::set<std::string>& exclude = {}) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && !exclude.count(fs::relative(e.path(), dir).string()))
      files.push_back(fs::relative(e.path(), dir).string());
  std::sort(files.begin(), files.end());
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& rel : files) {
    h = fnv1a(reinterpret_cast<const uint8_t*>(rel.data()), rel.size(), h);
    auto b = read_bytes((fs::path(dir) / rel).string());
    h = fnv1a(b.data(), b.size(), h);
  }
  return h;
}

inline std::string sanitize_path(const std::string& layer_path) {
  std::string s = layer_path;
  for (char& c : s)
    if (c == '.' || c == '/') c = '_';
  return s;
}

// ---- strict json helpers ----------------------------------------------------------

inline void check_keys(const Json& j, const std::set<std::string>& allowed,
                       const std::string& ctx) {
  VL_CHECK(j.is_object(), "config: expected an object at " + ctx);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      fail("config: unknown key '" + it.key() + "' in " + ctx);
}

inline Json load_json(const std::string& path) {
  Json j = Json::parse(read_text(path), nullptr, true, true);  // allow comments
  return j;
}

// ---- adapter archives ----------------------------------------------------------------

inline void save_adapter_set(const AdapterSet<float>& set, const std::string& dir) {
  fs::create_directories(dir);
  Json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["kind"] = adapter_kind_name(set.kind);
  manifest["source_id"] = set.source_id;
  manifest["rank"] = set.rank;
  Json entries = Json::array();
  for (const auto& [path, a] : set.adapters) {
    Json e;
    e["path"] = path;
    e["d"] = a.d;
    e["k"] = a.k;
    e["rank"] = a.rank;
    e["scale"] = a.scale;
    const std::string base = sanitize_path(path);
    e["file_a"] = base + "__A.f32";
    e["file_b"] = base + "__B.f32";
    write_f32((fs::path(dir) / (base + "__A.f32")).string(), a.A.value());
    write_f32((fs::path(dir) / (base + "__B.f32")).string(), a.B.value());
    entries.push_back(e);
  }
  manifest["adapters"] = entries;
  write_text((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

inline AdapterSet<float> load_adapter_set(const std::string& dir) {
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  VL_CHECK(fs::exists(mpath), "adapter archive: missing manifest in " + dir);
  Json m = load_json(mpath);
  check_keys(m, {"format_version", "kind", "source_id", "rank", "adapters"}, "adapter manifest");
  VL_CHECK(m.at("format_version").get<int>() == kFormatVersion,
           "adapter archive: format version mismatch in " + dir);
  AdapterSet<float> set;
  set.kind = adapter_kind_from_name(m.at("kind").get<std::string>());
  set.source_id = m.at("source_id").get<std::string>();
  set.rank = m.at("rank").get<Index>();
  for (const auto& e : m.at("adapters")) {
    check_keys(e, {"path", "d", "k", "rank", "scale", "file_a", "file_b"}, "adapter entry");
    LoRAAdapter<float> a;
    a.target_path = e.at("path").get<std::string>();
    a.d = e.at("d").get<Index>();
    a.k = e.at("k").get<Index>();
    a.rank = e.at("rank").get<Index>();
    a.scale = e.at("scale").get<float>();
    VL_CHECK(a.rank >= 1 && a.rank <= std::min(a.d, a.k), "adapter archive: bad rank for " + a.target_path);
    a.A = Var<float>::leaf(
        Tensor<float>({a.rank, a.k},
                      read_f32((fs::path(dir) / e.at("file_a").get<std::string>()).string(),
                               a.rank * a.k)),
        false);
    a.B = Var<float>::leaf(
        Tensor<float>({a.d, a.rank},
                      read_f32((fs::path(dir) / e.at("file_b").get<std::string>()).string(),
                               a.d * a.rank)),
        false);
    VL_CHECK(set.adapters.emplace(a.target_path, std::move(a)).second,
             "adapter archive: duplicate path in manifest");
  }
  return set;
}

// Errors with the full list of archive paths that the model does not expose.
template <typename S, typename Model>
inline void validate_adapter_set(const AdapterSet<S>& set, const Model& model) {
  std::string missing;
  for (const auto& [path, a] : set.adapters) {
    try {
      auto [d, k] = model.injectable_dims(path);
      if (d != a.d || k != a.k) missing += " " + path + "(dims)";
    } catch (const Error&) {
      missing += " " + path;
    }
  }
  if (!missing.empty())
    fail("adapter set does not match the model; unknown or mismatched paths:" + missing);
}

// ---- model config / checkpoints ---------------------------------------------------------

inline Json unet_config_to_json(const UNetConfig& c) {
  Json j;
  j["base_channels"] = c.base_channels;
  j["channel_multipliers"] = c.channel_multipliers;
  j["attn_levels"] = c.attn_levels;
  j["attention_head_dim"] = c.attention_head_dim;
  j["num_frames"] = c.num_frames;
  j["frame_size"] = c.frame_size;
  j["in_channels"] = c.in_channels;
  j["text_embed_dim"] = c.text_embed_dim;
  j["time_embed_dim"] = c.time_embed_dim;
  j["ff_mult"] = c.ff_mult;
  j["norm_groups"] = c.norm_groups;
  j["vocab_size"] = c.vocab_size;
  j["zero_init_projections"] = c.zero_init_projections;
  return j;
}

inline UNetConfig unet_config_from_json(const Json& j) {
  check_keys(j,
             {"base_channels", "channel_multipliers", "attn_levels", "attention_head_dim",
              "num_frames", "frame_size", "in_channels", "text_embed_dim", "time_embed_dim",
              "ff_mult", "norm_groups", "vocab_size", "zero_init_projections"},
             "model config");
  UNetConfig c;
  if (j.contains("base_channels")) c.base_channels = j.at("base_channels").get<Index>();
  if (j.contains("channel_multipliers"))
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<Index>>();
  if (j.contains("attn_levels")) c.attn_levels = j.at("attn_levels").get<std::vector<Index>>();
  if (j.contains("attention_head_dim"))
    c.attention_head_dim = j.at("attention_head_dim").get<Index>();
  if (j.contains("num_frames")) c.num_frames = j.at("num_frames").get<Index>();
  if (j.contains("frame_size")) c.frame_size = j.at("frame_size").get<Index>();
  if (j.contains("in_channels")) c.in_channels = j.at("in_channels").get<Index>();
  if (j.contains("text_embed_dim")) c.text_embed_dim = j.at("text_embed_dim").get<Index>();
  if (j.contains("time_embed_dim")) c.time_embed_dim = j.at("time_embed_dim").get<Index>();
  if (j.contains("ff_mult")) c.ff_mult = j.at("ff_mult").get<Index>();
  if (j.contains("norm_groups")) c.norm_groups = j.at("norm_groups").get<Index>();
  if (j.contains("vocab_size")) c.vocab_size = j.at("vocab_size").get<Index>();
  if (j.contains("zero_init_projections"))
    c.zero_init_projections = j.at("zero_init_projections").get<bool>();
  return c;
}

inline void save_checkpoint(const UNet<float>& model, const std::string& dir,
                            const NoiseSchedule<float>& sched) {
  fs::create_directories(dir);
  Json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["model"] = unet_config_to_json(model.config());
  manifest["schedule"] = {{"num_steps", sched.num_steps},
                          {"beta_start", sched.beta_start},
                          {"beta_end", sched.beta_end}};
  Json params = Json::array();
  for (const auto& [name, v] : model.named_parameters()) {
    Json e;
    e["name"] = name;
    e["size"] = v.size();
    e["file"] = sanitize_path(name) + ".f32";
    write_f32((fs::path(dir) / e["file"].get<std::string>()).string(), v.value());
    params.push_back(e);
  }
  manifest["params"] = params;
  write_text((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

struct LoadedCheckpoint {
  std::unique_ptr<UNet<float>> model;
  NoiseSchedule<float> sched;
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  VL_CHECK(fs::exists(mpath), "checkpoint: missing manifest in " + dir);
  Json m = load_json(mpath);
  check_keys(m, {"format_version", "model", "schedule", "params"}, "checkpoint manifest");
  VL_CHECK(m.at("format_version").get<int>() == kFormatVersion,
           "checkpoint: format version mismatch in " + dir);
  LoadedCheckpoint out;
  out.model = std::make_unique<UNet<float>>(unet_config_from_json(m.at("model")), 0);
  const Json& s = m.at("schedule");
  out.sched = make_schedule<float>(s.at("num_steps").get<Index>(),
                                   s.at("beta_start").get<double>(),
                                   s.at("beta_end").get<double>());
  std::map<std::string, Var<float>> by_name;
  for (const auto& [name, v] : out.model->named_parameters()) by_name.emplace(name, v);
  std::set<std::string> seen;
  for (const auto& e : m.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    auto it = by_name.find(name);
    VL_CHECK(it != by_name.end(), "checkpoint: unknown parameter '" + name + "'");
    ArrX<float> data =
        read_f32((fs::path(dir) / e.at("file").get<std::string>()).string(), it->second.size());
    it->second.value() = data;
    seen.insert(name);
  }
  VL_CHECK(seen.size() == by_name.size(), "checkpoint: missing parameters in " + dir);
  return out;
}

// ---- scene specs / datasets ---------------------------------------------------------------

inline Json scene_spec_to_json(const SceneSpec& s) {
  Json j;
  j["shape"] = shape_name(s.shape);
  j["color"] = s.color;
  j["size"] = s.size;
  j["trajectory"] = trajectory_name(s.trajectory);
  j["speed"] = s.speed;
  j["camera_pan"] = s.camera_pan;
  j["background"] = s.background == BackgroundKind::plain ? "plain" : "gradient";
  j["seed"] = s.seed;
  return j;
}

inline SceneSpec scene_spec_from_json(const Json& j) {
  check_keys(j, {"shape", "color", "size", "trajectory", "speed", "camera_pan", "background", "seed"},
             "scene spec");
  SceneSpec s;
  if (j.contains("shape")) s.shape = shape_from_name(j.at("shape").get<std::string>());
  if (j.contains("color")) s.color = j.at("color").get<std::string>();
  if (j.contains("size")) s.size = j.at("size").get<double>();
  if (j.contains("trajectory"))
    s.trajectory = trajectory_from_name(j.at("trajectory").get<std::string>());
  if (j.contains("speed")) s.speed = j.at("speed").get<double>();
  if (j.contains("camera_pan")) s.camera_pan = j.at("camera_pan").get<double>();
  if (j.contains("background")) {
    const std::string b = j.at("background").get<std::string>();
    VL_CHECK(b == "plain" || b == "gradient", "scene spec: bad background '" + b + "'");
    s.background = b == "plain" ? BackgroundKind::plain : BackgroundKind::gradient;
  }
  if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
  return s;
}

inline void save_dataset(const std::vector<DatasetItem>& items, const std::string& dir,
                         Index frames, Index res, bool with_gifs = true, int gif_delay_cs = 12) {
  VL_CHECK(!items.empty(), "save_dataset: no items");
  fs::create_directories((fs::path(dir) / "clips").string());
  Json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["frames"] = frames;
  manifest["res"] = res;
  Json entries = Json::array();
  for (const auto& item : items) {
    VL_CHECK(item.clip.shape == Shape({1, frames, res, res, 3}),
             "save_dataset: clip shape mismatch for " + item.source_id);
    Json e;
    e["source_id"] = item.source_id;
    e["prompt"] = item.prompt.raw_text;
    e["spec"] = scene_spec_to_json(item.spec);
    const std::string base = "clips/" + sanitize_path(item.source_id);
    e["clip_file"] = base + ".f32";
    write_f32((fs::path(dir) / (base + ".f32")).string(), item.clip.data);
    if (with_gifs) write_clip_gif((fs::path(dir) / (base + ".gif")).string(), item.clip, gif_delay_cs);
    entries.push_back(e);
  }
  manifest["items"] = entries;
  write_text((fs::path(dir) / "dataset.json").string(), manifest.dump(2) + "\n");
}

inline std::vector<DatasetItem> load_dataset(const std::string& dir) {
  const std::string mpath = (fs::path(dir) / "dataset.json").string();
  VL_CHECK(fs::exists(mpath), "dataset: missing dataset.json in " + dir);
  Json m = load_json(mpath);
  check_keys(m, {"format_version", "frames", "res", "items"}, "dataset manifest");
  VL_CHECK(m.at("format_version").get<int>() == kFormatVersion, "dataset: format version mismatch");
  const Index frames = m.at("frames").get<Index>();
  const Index res = m.at("res").get<Index>();
  std::vector<DatasetItem> items;
  for (const auto& e : m.at("items")) {
    check_keys(e, {"source_id", "clip_file", "prompt", "spec"}, "dataset item");
    DatasetItem item;
    item.source_id = e.at("source_id").get<std::string>();
    item.spec = scene_spec_from_json(e.at("spec"));
    item.prompt = Vocab::instance().tokenize(e.at("prompt").get<std::string>());
    ArrX<float> data = read_f32((fs::path(dir) / e.at("clip_file").get<std::string>()).string(),
                                frames * res * res * 3);
    item.clip = Video<float>({1, frames, res, res, 3}, std::move(data));
    items.push_back(std::move(item));
  }
  return items;
}

// ---- train runs ------------------------------------------------------------------------------

inline Json train_config_to_json(const TrainConfig& c) {
  Json j;
  j["lr"] = c.adam.lr;
  j["adam_betas"] = {c.adam.beta1, c.adam.beta2};
  j["adam_eps"] = c.adam.eps;
  j["weight_decay"] = c.adam.weight_decay;
  j["dropout"] = c.adapter_dropout;
  j["rank"] = c.rank;
  j["steps_single_video"] = c.steps_single_video;
  j["steps_multi_video"] = c.steps_multi_video;
  j["steps_override"] = c.steps_override;
  j["loss_weights"] = {c.w_org, c.w_ad};
  j["seed"] = c.seed;
  return j;
}

inline TrainConfig train_config_from_json(const Json& j) {
  check_keys(j,
             {"lr", "adam_betas", "adam_eps", "weight_decay", "dropout", "rank",
              "steps_single_video", "steps_multi_video", "steps_override", "loss_weights", "seed"},
             "train config");
  TrainConfig c;
  if (j.contains("lr")) c.adam.lr = j.at("lr").get<double>();
  if (j.contains("adam_betas")) {
    auto b = j.at("adam_betas");
    VL_CHECK(b.is_array() && b.size() == 2, "train config: adam_betas must be [b1, b2]");
    c.adam.beta1 = b[0].get<double>();
    c.adam.beta2 = b[1].get<double>();
  }
  if (j.contains("adam_eps")) c.adam.eps = j.at("adam_eps").get<double>();
  if (j.contains("weight_decay")) c.adam.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("dropout")) c.adapter_dropout = j.at("dropout").get<double>();
  if (j.contains("rank")) c.rank = j.at("rank").get<Index>();
  if (j.contains("steps_single_video")) c.steps_single_video = j.at("steps_single_video").get<Index>();
  if (j.contains("steps_multi_video")) c.steps_multi_video = j.at("steps_multi_video").get<Index>();
  if (j.contains("steps_override")) c.steps_override = j.at("steps_override").get<Index>();
  if (j.contains("loss_weights")) {
    auto w = j.at("loss_weights");
    VL_CHECK(w.is_array() && w.size() == 2, "train config: loss_weights must be [w_org, w_ad]");
    c.w_org = w[0].get<double>();
    c.w_ad = w[1].get<double>();
  }
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  return c;
}

inline std::string loss_history_csv(const std::vector<StepRecord>& history) {
  std::ostringstream os;
  os << "step,spatial,org_temp,ad_temp\n";
  char buf[128];
  for (size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", i, history[i].spatial,
                  history[i].org_temp, history[i].ad_temp);
    os << buf;
  }
  return os.str();
}

inline void save_train_run(const TrainRun<float>& run, const std::string& dir) {
  fs::create_directories(dir);
  Json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["mode"] = train_mode_name(run.mode);
  manifest["config"] = train_config_to_json(run.config);
  manifest["debias"] = {{"beta", run.debias.beta}};
  Json sources = Json::array();
  for (const auto& [sid, set] : run.spatial_sets) {
    sources.push_back(sid);
    save_adapter_set(set, (fs::path(dir) / ("spatial_" + sanitize_path(sid))).string());
  }
  manifest["sources"] = sources;
  save_adapter_set(run.temporal_set, (fs::path(dir) / "temporal").string());
  manifest["loss_csv"] = "loss_history.csv";
  write_text((fs::path(dir) / "loss_history.csv").string(), loss_history_csv(run.loss_history));
  write_text((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

inline TrainRun<float> load_train_run(const std::string& dir) {
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  VL_CHECK(fs::exists(mpath), "train run: missing manifest in " + dir);
  Json m = load_json(mpath);
  check_keys(m, {"format_version", "mode", "config", "debias", "sources", "loss_csv"},
             "train run manifest");
  VL_CHECK(m.at("format_version").get<int>() == kFormatVersion, "train run: format version mismatch");
  TrainRun<float> run;
  run.mode = m.at("mode").get<std::string>() == "coupled" ? TrainMode::coupled : TrainMode::dual_path;
  run.config = train_config_from_json(m.at("config"));
  run.debias.beta = m.at("debias").at("beta").get<double>();
  for (const auto& sid : m.at("sources")) {
    const std::string s = sid.get<std::string>();
    run.spatial_sets.emplace(
        s, load_adapter_set((fs::path(dir) / ("spatial_" + sanitize_path(s))).string()));
  }
  run.temporal_set = load_adapter_set((fs::path(dir) / "temporal").string());
  return run;
}

}  // namespace vidlora
