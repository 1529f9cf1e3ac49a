// Copyright 2026 The GRAM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gram/pipeline.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "gram/audio_io.h"
#include "gram/featurizer.h"
#include "gram/nn/checkpoint.h"

namespace gram::pipeline {
namespace {

using nlohmann::json;

std::string JoinProblems(const std::vector<std::string>& problems) {
  std::string s = "invalid config";
  for (const auto& p : problems) s += "; " + p;
  return s;
}

std::string ModeName(model::EmbeddingMode mode) {
  return mode == model::EmbeddingMode::kClipLevel ? "clip_level" : "localization";
}

std::string TaskName(ProbeTask task) { return task == ProbeTask::kClass ? "class" : "direction"; }

// Keys of `j` that `reference` does not have, as dotted paths. Objects
// nested under "model", "train" and "probe" are validated by their own
// parsers.
void UnknownKeys(const json& j, const json& reference, const std::string& prefix,
                 std::vector<std::string>& out) {
  if (!j.is_object()) return;
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!reference.contains(key)) {
      out.push_back(path + ": unknown field");
    } else if (value.is_object() && reference.at(key).is_object() && prefix.empty() &&
               key != "model" && key != "train" && key != "probe") {
      UnknownKeys(value, reference.at(key), path, out);
    }
  }
}

template <typename T>
void Field(const json& j, const char* key, T& target, std::vector<std::string>& problems,
           const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception&) {
    problems.push_back(prefix + key + ": wrong type (" + j.at(key).dump() + ")");
  }
}

json ReadJsonText(std::istream& in, const std::string& what) {
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    Fail(ErrorCode::kCorruptHeader, "cannot parse " + what + ": " + e.what());
  }
}

audio::Waveform LoadMonoClip(const audio::ManifestEntry& entry) {
  audio::Waveform wav = audio::ReadWav(entry.audio_path);
  audio::RequireRate(wav);
  Require(wav.num_channels() == 1, ErrorCode::kInvalidArgument,
          "clip '" + entry.id + "' must be mono");
  return wav;
}

std::string LabelName(const audio::ManifestEntry& entry) {
  if (const auto* s = std::get_if<std::string>(&entry.label)) return *s;
  return entry.id;
}

fs::path Prepare(const fs::path& out, const RunConfig& config) {
  WriteEffectiveConfig(out, config);
  return out;
}

json FeatureRow(const FeatureItem& item, const std::string& path) {
  json row = {{"id", item.id}, {"path", path}, {"label", item.label},
              {"frames", item.spec.frames}};
  if (!item.direction.empty()) row["direction"] = item.direction;
  return row;
}

model::ModelParams LoadCheckpointFile(const fs::path& path, model::ModelConfig& config) {
  model::ModelParams params;
  model::FromCheckpoint(nn::LoadCheckpoint(path), config, params);
  return params;
}

struct EmbeddingRow {
  std::string id;
  std::string label;
  std::vector<double> direction;
  std::vector<double> embedding;
};

std::vector<EmbeddingRow> LoadEmbeddings(const fs::path& path) {
  std::vector<EmbeddingRow> rows;
  for (const auto& j : ReadJsonLines(path)) {
    try {
      EmbeddingRow r;
      r.id = j.at("id").get<std::string>();
      r.label = j.value("label", std::string());
      r.direction = j.value("direction", std::vector<double>{});
      r.embedding = j.at("embedding").get<std::vector<double>>();
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      Fail(ErrorCode::kCorruptPayload, path.string() + ": " + e.what());
    }
  }
  Require(!rows.empty(), ErrorCode::kEmptyInput, "no embeddings in " + path.string());
  return rows;
}

eval::Vec3 ToVec3(const std::vector<double>& v, const std::string& id) {
  Require(v.size() == 3, ErrorCode::kShapeMismatch,
          "item '" + id + "' needs a 3-element direction label");
  return {v[0], v[1], v[2]};
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(ErrorCode::kInvalidConfig, JoinProblems(problems)), problems_(std::move(problems)) {}

RunConfig RunConfig::Defaults() {
  RunConfig c;
  c.model = model::ModelConfig::FullScale(model::Backbone::kTransformer,
                                          model::MaskingStrategy::kPatchBased);
  c.train = model::TrainConfig::FullScale();
  return c;
}

RunConfig RunConfig::Toy() {
  RunConfig c;
  c.toy = true;
  c.model = model::ModelConfig::Toy(model::Backbone::kTransformer,
                                    model::MaskingStrategy::kPatchBased);
  c.train = model::TrainConfig::Toy();
  c.probe.epochs = 100;
  return c;
}

json RunConfig::ToJson() const {
  return {{"seed", seed},
          {"toy", toy},
          {"paths",
           {{"target_manifest", paths.target_manifest},
            {"noise_manifest", paths.noise_manifest},
            {"brir_dir", paths.brir_dir},
            {"scene_manifest", paths.scene_manifest},
            {"feature_dir", paths.feature_dir},
            {"checkpoint", paths.checkpoint},
            {"embeddings", paths.embeddings},
            {"predictions", paths.predictions}}},
          {"scenes",
           {{"count", scenes.count},
            {"absorption", scenes.absorption},
            {"max_order", scenes.max_order},
            {"snr_min_db", scenes.snr_min_db},
            {"snr_max_db", scenes.snr_max_db}}},
          {"model", model.ToJson()},
          {"train", train.ToJson()},
          {"probe", probe.ToJson()},
          {"eval",
           {{"embedding", ModeName(eval.embedding)},
            {"task", TaskName(eval.task)},
            {"folds", eval.folds},
            {"doa_correct_deg", eval.doa_correct_deg}}}};
}

RunConfig RunConfig::FromJson(const json& j, const RunConfig& base) {
  std::vector<std::string> problems;
  Require(j.is_object(), ErrorCode::kInvalidConfig, "config must be a JSON object");
  const json reference = base.ToJson();
  UnknownKeys(j, reference, "", problems);
  json merged = reference;
  merged.merge_patch(j);

  RunConfig c = base;
  Field(merged, "seed", c.seed, problems, "");
  Field(merged, "toy", c.toy, problems, "");
  const json& p = merged.at("paths");
  Field(p, "target_manifest", c.paths.target_manifest, problems, "paths.");
  Field(p, "noise_manifest", c.paths.noise_manifest, problems, "paths.");
  Field(p, "brir_dir", c.paths.brir_dir, problems, "paths.");
  Field(p, "scene_manifest", c.paths.scene_manifest, problems, "paths.");
  Field(p, "feature_dir", c.paths.feature_dir, problems, "paths.");
  Field(p, "checkpoint", c.paths.checkpoint, problems, "paths.");
  Field(p, "embeddings", c.paths.embeddings, problems, "paths.");
  Field(p, "predictions", c.paths.predictions, problems, "paths.");
  const json& s = merged.at("scenes");
  Field(s, "count", c.scenes.count, problems, "scenes.");
  Field(s, "absorption", c.scenes.absorption, problems, "scenes.");
  Field(s, "max_order", c.scenes.max_order, problems, "scenes.");
  Field(s, "snr_min_db", c.scenes.snr_min_db, problems, "scenes.");
  Field(s, "snr_max_db", c.scenes.snr_max_db, problems, "scenes.");
  const json& e = merged.at("eval");
  std::string mode = ModeName(c.eval.embedding), task = TaskName(c.eval.task);
  Field(e, "embedding", mode, problems, "eval.");
  Field(e, "task", task, problems, "eval.");
  Field(e, "folds", c.eval.folds, problems, "eval.");
  Field(e, "doa_correct_deg", c.eval.doa_correct_deg, problems, "eval.");
  if (mode == "clip_level") {
    c.eval.embedding = model::EmbeddingMode::kClipLevel;
  } else if (mode == "localization") {
    c.eval.embedding = model::EmbeddingMode::kLocalization;
  } else {
    problems.push_back("eval.embedding: expected clip_level or localization, got '" + mode + "'");
  }
  if (task == "class") {
    c.eval.task = ProbeTask::kClass;
  } else if (task == "direction") {
    c.eval.task = ProbeTask::kDirection;
  } else {
    problems.push_back("eval.task: expected class or direction, got '" + task + "'");
  }
  auto sub = [&](const char* key, auto parse) {
    try {
      parse(merged.at(key));
    } catch (const Error& err) {
      problems.push_back(std::string(key) + ": " + err.what());
    } catch (const json::exception& err) {
      problems.push_back(std::string(key) + ": " + err.what());
    }
  };
  sub("model", [&](const json& m) { c.model = model::ModelConfig::FromJson(m); });
  sub("train", [&](const json& t) { c.train = model::TrainConfig::FromJson(t); });
  sub("probe", [&](const json& pr) { c.probe = eval::ProbeConfig::FromJson(pr); });
  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

std::vector<std::string> RunConfig::Problems() const {
  std::vector<std::string> problems;
  auto check = [&](bool ok, const std::string& message) {
    if (!ok) problems.push_back(message);
  };
  check(workers >= 1, "workers: must be >= 1, got " + std::to_string(workers));
  check(scenes.count >= 1, "scenes.count: must be >= 1, got " + std::to_string(scenes.count));
  check(scenes.absorption > 0.0 && scenes.absorption <= 1.0,
        "scenes.absorption: must lie in (0, 1]");
  check(scenes.max_order >= 0, "scenes.max_order: must be >= 0");
  check(scenes.snr_min_db >= scene::kMinSnrDb && scenes.snr_max_db <= scene::kMaxSnrDb &&
            scenes.snr_min_db <= scenes.snr_max_db,
        "scenes.snr_min_db/snr_max_db: range must lie inside [5, 40] dB");
  check(eval.folds >= 2, "eval.folds: must be >= 2");
  check(eval.doa_correct_deg > 0.0 && eval.doa_correct_deg <= 180.0,
        "eval.doa_correct_deg: must lie in (0, 180]");
  check(probe.epochs >= 1 && probe.batch_size >= 1 && probe.lr > 0.0 && probe.hidden >= 0 &&
            probe.validation_fraction >= 0.0 && probe.validation_fraction < 1.0 &&
            probe.patience >= 1,
        "probe: epochs, batch_size, patience must be >= 1, lr > 0, hidden >= 0, "
        "validation_fraction in [0, 1)");
  try {
    model.Validate();
  } catch (const Error& e) {
    problems.push_back(std::string("model: ") + e.what());
  }
  check(train.steps >= 1 && train.warmup_steps >= 0 && train.warmup_steps <= train.steps &&
            train.clips_per_step >= 1 && train.segments_per_clip >= 1 && train.base_lr > 0.0,
        "train: steps >= 1, 0 <= warmup_steps <= steps, clips/segments >= 1, base_lr > 0");
  const std::pair<const char*, const std::string*> inputs[] = {
      {"paths.target_manifest", &paths.target_manifest},
      {"paths.noise_manifest", &paths.noise_manifest},
      {"paths.brir_dir", &paths.brir_dir},
      {"paths.scene_manifest", &paths.scene_manifest},
      {"paths.feature_dir", &paths.feature_dir},
      {"paths.checkpoint", &paths.checkpoint},
      {"paths.embeddings", &paths.embeddings},
      {"paths.predictions", &paths.predictions}};
  for (const auto& [name, value] : inputs) {
    if (!value->empty() && !fs::exists(*value)) {
      problems.push_back(std::string(name) + ": '" + *value + "' does not exist");
    }
  }
  return problems;
}

void RunConfig::Validate() const {
  auto problems = Problems();
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

void ParallelFor(size_t n, int workers, const std::function<void(size_t)>& fn) {
  const size_t threads = std::min<size_t>(n, static_cast<size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::mutex mu;
  size_t failed_index = n;
  std::exception_ptr failure;
  auto worker = [&] {
    for (size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void WriteJsonFile(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  Require(static_cast<bool>(out), ErrorCode::kUnwritablePath, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  Require(static_cast<bool>(out), ErrorCode::kUnwritablePath, "write failed: " + path.string());
}

void WriteJsonLines(const fs::path& path, const std::vector<json>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  Require(static_cast<bool>(out), ErrorCode::kUnwritablePath, "cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
  Require(static_cast<bool>(out), ErrorCode::kUnwritablePath, "write failed: " + path.string());
}

std::vector<json> ReadJsonLines(const fs::path& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kMissingFile, "cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      Fail(ErrorCode::kCorruptPayload,
           path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return rows;
}

json ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kMissingFile, "cannot open " + path.string());
  return ReadJsonText(in, path.string());
}

void WriteEffectiveConfig(const fs::path& dir, const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  Require(!ec, ErrorCode::kUnwritablePath, "cannot create " + dir.string() + ": " + ec.message());
  WriteJsonFile(dir / "effective_config.json", config.ToJson());
}

std::string SceneId(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05zu", index);
  return buf;
}

SceneGeometry RenderGeometry(const RunConfig& config, size_t index) {
  SceneGeometry g;
  g.room = acoustics::SampleDefaultRoom(DeriveSeed(StageSeed(config.seed, SeedStage::kRooms), index));
  g.room.absorption = config.scenes.absorption;
  g.room.max_order = config.scenes.max_order;
  g.pose = acoustics::SampleScene(DeriveSeed(StageSeed(config.seed, SeedStage::kScenes), index),
                                  g.room);
  g.brirs = acoustics::RenderSceneBrirs(g.room, g.pose);
  return g;
}

SceneRecord MixOne(const RunConfig& config, size_t index, const SceneGeometry& geometry) {
  const uint64_t corpus_seed = DeriveSeed(StageSeed(config.seed, SeedStage::kCorpus), index);
  Rng pick(corpus_seed);
  SceneRecord rec;
  rec.id = SceneId(index);

  audio::Waveform target, noise;
  if (config.paths.target_manifest.empty()) {
    const int cls = static_cast<int>(pick.UniformInt(scene::kNumSyntheticClasses));
    rec.target_class = scene::SyntheticClassName(cls);
    rec.target_clip = "synthetic_" + rec.target_class;
    target = scene::SynthesizeTarget(cls, DeriveSeed(corpus_seed, 1));
  } else {
    const auto manifest = audio::LoadManifest(config.paths.target_manifest);
    Require(!manifest.entries.empty(), ErrorCode::kEmptyInput, "target manifest is empty");
    const auto& entry = manifest.entries[pick.UniformInt(manifest.entries.size())];
    rec.target_class = LabelName(entry);
    rec.target_clip = entry.id;
    target = LoadMonoClip(entry);
  }
  if (config.paths.noise_manifest.empty()) {
    rec.noise_clip = "synthetic_noise";
    noise = scene::SynthesizeNoise(DeriveSeed(corpus_seed, 2));
  } else {
    const auto manifest = audio::LoadManifest(config.paths.noise_manifest);
    Require(!manifest.entries.empty(), ErrorCode::kEmptyInput, "noise manifest is empty");
    const auto& entry = manifest.entries[pick.UniformInt(manifest.entries.size())];
    rec.noise_clip = entry.id;
    noise = LoadMonoClip(entry);
  }

  Rng snr_rng(DeriveSeed(StageSeed(config.seed, SeedStage::kMixing), index));
  scene::SceneSpec spec;
  spec.scene_id = rec.id;
  spec.target_clip = rec.target_clip;
  spec.noise_clip = rec.noise_clip;
  spec.brirs = geometry.brirs;
  spec.snr_db = snr_rng.Uniform(config.scenes.snr_min_db, config.scenes.snr_max_db);
  spec.seed = corpus_seed;
  rec.mixed = scene::MixScene(spec, target, scene::PrepareNoise(noise));
  return rec;
}

nlohmann::json RunBrirGen(const RunConfig& config, const fs::path& out) {
  config.Validate();
  Prepare(out, config);
  const size_t n = config.scenes.count;
  std::vector<json> rows(n);
  ParallelFor(n, config.workers, [&](size_t i) {
    const SceneGeometry g = RenderGeometry(config, i);
    const std::string id = SceneId(i);
    const uint64_t seed = DeriveSeed(StageSeed(config.seed, SeedStage::kScenes), i);
    acoustics::ExportBrir(out / (id + "_source.wav"), g.brirs.source, g.room, seed);
    json noise = json::array();
    for (size_t k = 0; k < g.brirs.noise.size(); ++k) {
      const std::string name = id + "_noise" + std::to_string(k) + ".wav";
      acoustics::ExportBrir(out / name, g.brirs.noise[k], g.room, seed);
      noise.push_back(name);
    }
    rows[i] = {{"id", id},
               {"room", acoustics::RoomToJson(g.room)},
               {"pose", acoustics::PoseToJson(g.pose)},
               {"source", id + "_source.wav"},
               {"noise", noise},
               {"rt60_s", g.brirs.source.meta.rt60_s}};
  });
  WriteJsonLines(out / "index.jsonl", rows);
  double lo = 1e300, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.at("rt60_s").get<double>());
    hi = std::max(hi, r.at("rt60_s").get<double>());
  }
  return {{"stage", "brir-gen"}, {"scenes", n}, {"rt60_min_s", lo}, {"rt60_max_s", hi},
          {"index", (out / "index.jsonl").string()}};
}

nlohmann::json RunSceneMix(const RunConfig& config, const fs::path& out) {
  config.Validate();
  Prepare(out, config);
  std::vector<json> brir_rows;
  if (!config.paths.brir_dir.empty()) {
    brir_rows = ReadJsonLines(fs::path(config.paths.brir_dir) / "index.jsonl");
    Require(brir_rows.size() >= static_cast<size_t>(config.scenes.count), ErrorCode::kInvalidConfig,
            "brir_dir holds " + std::to_string(brir_rows.size()) + " scenes, " +
                std::to_string(config.scenes.count) + " requested");
  }
  const size_t n = config.scenes.count;
  std::vector<audio::ManifestEntry> entries(n);
  std::vector<json> meta(n);
  ParallelFor(n, config.workers, [&](size_t i) {
    SceneGeometry g;
    if (brir_rows.empty()) {
      g = RenderGeometry(config, i);
    } else {
      const json& row = brir_rows[i];
      const fs::path dir = config.paths.brir_dir;
      g.room = acoustics::RoomFromJson(row.at("room"));
      g.pose = acoustics::PoseFromJson(row.at("pose"));
      g.brirs.source = acoustics::LoadBrir(dir / row.at("source").get<std::string>());
      for (const auto& name : row.at("noise")) {
        g.brirs.noise.push_back(acoustics::LoadBrir(dir / name.get<std::string>()));
      }
    }
    SceneRecord rec = MixOne(config, i, g);
    audio::WriteWav(out / (rec.id + ".wav"), rec.mixed.audio);
    entries[i] = {rec.id, rec.id + ".wav", rec.target_class, rec.mixed.audio.duration_s()};
    const auto& m = rec.mixed.meta;
    meta[i] = {{"id", rec.id},
               {"target_clip", rec.target_clip},
               {"noise_clip", rec.noise_clip},
               {"target_class", rec.target_class},
               {"snr_db", m.snr_db},
               {"b", m.b},
               {"azimuth_deg", m.azimuth_deg},
               {"elevation_deg", m.elevation_deg},
               {"direction", m.source_unit_vector},
               {"noise_kind", g.pose.noise_kind == acoustics::NoiseKind::kLocalized ? "localized"
                                                                                    : "diffuse"},
               {"noise_sources", g.brirs.noise.size()},
               {"rt60_s", g.brirs.source.meta.rt60_s}};
  });
  audio::SaveManifest(out / "manifest.jsonl", {entries});
  WriteJsonLines(out / "meta.jsonl", meta);
  return {{"stage", "scene-mix"}, {"scenes", n},
          {"manifest", (out / "manifest.jsonl").string()}};
}

nlohmann::json RunFeaturize(const RunConfig& config, const fs::path& out) {
  config.Validate();
  Require(!config.paths.scene_manifest.empty(), ErrorCode::kInvalidConfig,
          "featurize needs paths.scene_manifest (--manifest)");
  Prepare(out, config);
  const fs::path manifest_path = config.paths.scene_manifest;
  const auto manifest = audio::LoadManifest(manifest_path);
  Require(!manifest.entries.empty(), ErrorCode::kEmptyInput, "scene manifest is empty");
  std::map<std::string, std::vector<double>> directions;
  const fs::path meta_path = manifest_path.parent_path() / "meta.jsonl";
  if (fs::exists(meta_path)) {
    for (const auto& row : ReadJsonLines(meta_path)) {
      directions[row.at("id").get<std::string>()] =
          row.at("direction").get<std::vector<double>>();
    }
  }
  const size_t n = manifest.entries.size();
  std::vector<json> rows(n);
  ParallelFor(n, config.workers, [&](size_t i) {
    const auto& entry = manifest.entries[i];
    FeatureItem item;
    item.id = entry.id;
    item.label = LabelName(entry);
    if (auto it = directions.find(entry.id); it != directions.end()) item.direction = it->second;
    if (const auto* v = std::get_if<std::vector<double>>(&entry.label)) item.direction = *v;
    const audio::Waveform wav = audio::ReadWav(entry.audio_path);
    Require(wav.num_channels() == 2, ErrorCode::kInvalidArgument,
            "scene '" + entry.id + "' must be binaural");
    item.spec = features::LogMel(wav);
    const std::string name = entry.id + ".gbsf";
    audio::WriteFeature(out / name, item.spec);
    rows[i] = FeatureRow(item, name);
  });
  WriteJsonLines(out / "index.jsonl", rows);
  return {{"stage", "featurize"}, {"items", n}, {"index", (out / "index.jsonl").string()}};
}

std::vector<FeatureItem> SynthesizeFeatures(const RunConfig& config) {
  const size_t n = config.scenes.count;
  std::vector<FeatureItem> items(n);
  ParallelFor(n, config.workers, [&](size_t i) {
    const SceneRecord rec = MixOne(config, i, RenderGeometry(config, i));
    FeatureItem& item = items[i];
    item.id = rec.id;
    item.label = rec.target_class;
    const auto& v = rec.mixed.meta.source_unit_vector;
    item.direction.assign(v.begin(), v.end());
    item.spec = features::LogMel(rec.mixed.audio);
  });
  return items;
}

std::vector<FeatureItem> LoadFeatures(const fs::path& feature_dir) {
  std::vector<FeatureItem> items;
  for (const auto& row : ReadJsonLines(feature_dir / "index.jsonl")) {
    FeatureItem item;
    try {
      item.id = row.at("id").get<std::string>();
      item.label = row.value("label", std::string());
      item.direction = row.value("direction", std::vector<double>{});
      item.spec = audio::ReadFeature(feature_dir / row.at("path").get<std::string>());
    } catch (const json::exception& e) {
      Fail(ErrorCode::kCorruptPayload, "feature index: " + std::string(e.what()));
    }
    items.push_back(std::move(item));
  }
  Require(!items.empty(), ErrorCode::kEmptyInput, "no features in " + feature_dir.string());
  return items;
}

nlohmann::json RunPretrain(const RunConfig& config, const fs::path& out,
                           const std::function<void(const model::StepLog&)>& on_step) {
  config.Validate();
  Prepare(out, config);
  const std::vector<FeatureItem> items = config.paths.feature_dir.empty()
                                             ? SynthesizeFeatures(config)
                                             : LoadFeatures(config.paths.feature_dir);
  std::vector<BinauralSpectrogram> clips;
  for (const auto& item : items) clips.push_back(item.spec);

  model::ModelConfig mc = config.model;
  const auto [mean, stddev] = model::SpectrogramStats(clips);
  mc.input_mean = mean;
  mc.input_std = stddev;
  model::TrainConfig tc = config.train;
  tc.seed = config.seed;

  std::vector<json> log;
  const model::PretrainResult result = model::Pretrain(clips, mc, tc, [&](const model::StepLog& s) {
    log.push_back({{"step", s.step}, {"lr", s.lr}, {"loss", s.loss}});
    if (on_step) on_step(s);
  });
  const uint64_t eval_seed = DeriveSeed(config.seed, 0xe7a1);
  const double initial = model::EvaluateMaskedMse(
      clips, mc, model::InitParams(mc, StageSeed(config.seed, SeedStage::kInit)), eval_seed);
  const double final_mse = model::EvaluateMaskedMse(clips, mc, result.params, eval_seed);

  json summary = {{"stage", "pretrain"},
                        {"clips", clips.size()},
                        {"steps", tc.steps},
                        {"parameters", result.params.NumValues()},
                        {"input_mean", mean},
                        {"input_std", stddev},
                        {"eval_mse_initial", initial},
                        {"eval_mse_final", final_mse},
                        {"eval_mse_reduction", 1.0 - final_mse / initial},
                        {"train_loss_first", log.front().at("loss")},
                        {"train_loss_last", log.back().at("loss")},
                        {"checkpoint", "checkpoint.gck"}};
  nn::SaveCheckpoint(out / "checkpoint.gck",
                     model::ToCheckpoint(mc, result.params, &result.state,
                                         {{"train", tc.ToJson()}, {"clips", clips.size()}}));
  WriteJsonLines(out / "train_log.jsonl", log);
  // The file names the checkpoint relative to its own directory so that the
  // run directory can move; the caller gets the full path.
  WriteJsonFile(out / "summary.json", summary);
  summary["checkpoint"] = (out / "checkpoint.gck").string();
  return summary;
}

nlohmann::json RunEmbed(const RunConfig& config, const fs::path& out) {
  config.Validate();
  Require(!config.paths.checkpoint.empty(), ErrorCode::kInvalidConfig,
          "embed needs paths.checkpoint (--checkpoint)");
  Prepare(out, config);
  model::ModelConfig mc;
  const model::ModelParams params = LoadCheckpointFile(config.paths.checkpoint, mc);
  const std::vector<FeatureItem> items = config.paths.feature_dir.empty()
                                             ? SynthesizeFeatures(config)
                                             : LoadFeatures(config.paths.feature_dir);
  std::vector<json> rows(items.size());
  ParallelFor(items.size(), config.workers, [&](size_t i) {
    const auto& item = items[i];
    json row = {{"id", item.id},
                {"label", item.label},
                {"embedding", model::ExtractEmbedding(item.spec, mc, params, config.eval.embedding)}};
    if (!item.direction.empty()) row["direction"] = item.direction;
    rows[i] = std::move(row);
  });
  WriteJsonLines(out / "embeddings.jsonl", rows);
  return {{"stage", "embed"},
          {"items", items.size()},
          {"mode", ModeName(config.eval.embedding)},
          {"width", model::EmbeddingWidth(mc, config.eval.embedding)},
          {"embeddings", (out / "embeddings.jsonl").string()}};
}

nlohmann::json RunProbe(const RunConfig& config, const fs::path& out) {
  config.Validate();
  Require(!config.paths.embeddings.empty(), ErrorCode::kInvalidConfig,
          "probe needs paths.embeddings (--embeddings)");
  Prepare(out, config);
  const std::vector<EmbeddingRow> rows = LoadEmbeddings(config.paths.embeddings);
  const size_t n = rows.size();
  const int folds = config.eval.folds;
  Require(static_cast<size_t>(folds) <= n, ErrorCode::kInvalidConfig,
          std::to_string(n) + " items cannot fill " + std::to_string(folds) + " folds");

  // Fold assignment: seeded permutation, then round robin.
  const uint64_t probe_seed = StageSeed(config.seed, SeedStage::kProbe);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(probe_seed);
  for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.UniformInt(i + 1)]);
  std::vector<int> fold_of(n);
  for (size_t k = 0; k < n; ++k) fold_of[order[k]] = static_cast<int>(k % folds);

  const bool direction = config.eval.task == ProbeTask::kDirection;
  std::vector<std::string> classes;
  std::vector<int> labels(n, 0);
  std::vector<eval::Vec3> targets(n);
  if (direction) {
    for (size_t i = 0; i < n; ++i) targets[i] = ToVec3(rows[i].direction, rows[i].id);
  } else {
    std::set<std::string> names;
    for (const auto& r : rows) names.insert(r.label);
    classes.assign(names.begin(), names.end());
    Require(classes.size() >= 2, ErrorCode::kInvalidArgument,
            "class probe needs at least two labels, found " + std::to_string(classes.size()));
    for (size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(std::lower_bound(classes.begin(), classes.end(), rows[i].label) -
                                   classes.begin());
    }
  }

  std::vector<int> predicted(n, -1);
  std::vector<eval::Vec3> predicted_dir(n);
  std::vector<json> fold_info(folds);
  ParallelFor(folds, config.workers, [&](size_t f) {
    eval::Matrix x_train, x_test;
    std::vector<int> y_train;
    std::vector<eval::Vec3> d_train;
    std::vector<size_t> test_rows;
    for (size_t i = 0; i < n; ++i) {
      if (fold_of[i] == static_cast<int>(f)) {
        x_test.push_back(rows[i].embedding);
        test_rows.push_back(i);
      } else {
        x_train.push_back(rows[i].embedding);
        y_train.push_back(labels[i]);
        d_train.push_back(targets[i]);
      }
    }
    eval::ProbeConfig pc = config.probe;
    pc.seed = DeriveSeed(probe_seed, f);
    eval::Probe probe;
    if (direction) {
      probe = eval::TrainDirectionRegressor(x_train, d_train, pc);
      const auto pred = eval::PredictDirections(probe, x_test);
      for (size_t k = 0; k < test_rows.size(); ++k) predicted_dir[test_rows[k]] = pred[k];
    } else {
      probe = eval::TrainClassifier(x_train, y_train, static_cast<int>(classes.size()), pc);
      const auto pred = eval::PredictClasses(probe, x_test);
      for (size_t k = 0; k < test_rows.size(); ++k) predicted[test_rows[k]] = pred[k];
    }
    fold_info[f] = {{"fold", f},
                    {"train", x_train.size()},
                    {"test", x_test.size()},
                    {"epochs_run", probe.epochs_run},
                    {"best_validation_loss", probe.best_validation_loss}};
  });

  eval::TaskResult result;
  result.task = direction ? "direction" : "class";
  result.n = static_cast<int64_t>(n);
  std::vector<double> fold_sum(folds, 0.0);
  std::vector<std::vector<double>> fold_errors(folds);
  std::vector<int> fold_count(folds, 0);
  std::vector<json> predictions;
  if (direction) {
    result.metric = "median_doa_error_deg";
    std::vector<eval::Vec3> truth(targets.begin(), targets.end());
    const eval::DoaSummary summary = eval::SummarizeDoa(truth, predicted_dir);
    result.value = summary.median_deg;
    for (size_t i = 0; i < n; ++i) {
      const double err = summary.errors_deg[i];
      fold_errors[fold_of[i]].push_back(err);
      result.per_item.push_back({rows[i].id, err < config.eval.doa_correct_deg});
      predictions.push_back({{"id", rows[i].id},
                             {"truth", truth[i]},
                             {"pred", predicted_dir[i]},
                             {"error_deg", err}});
    }
    for (int f = 0; f < folds; ++f) {
      auto& e = fold_errors[f];
      std::sort(e.begin(), e.end());
      const size_t m = e.size();
      result.fold_values.push_back(m % 2 ? e[m / 2] : 0.5 * (e[m / 2 - 1] + e[m / 2]));
    }
  } else {
    result.metric = "accuracy";
    size_t hits = 0;
    for (size_t i = 0; i < n; ++i) {
      const bool ok = predicted[i] == labels[i];
      hits += ok;
      fold_sum[fold_of[i]] += ok;
      ++fold_count[fold_of[i]];
      result.per_item.push_back({rows[i].id, ok});
      predictions.push_back({{"id", rows[i].id},
                             {"truth", classes[labels[i]]},
                             {"pred", classes[predicted[i]]}});
    }
    result.value = static_cast<double>(hits) / n;
    for (int f = 0; f < folds; ++f) result.fold_values.push_back(fold_sum[f] / fold_count[f]);
  }
  WriteJsonFile(out / "results.json", result.ToJson());
  WriteJsonLines(out / "predictions.jsonl", predictions);
  WriteJsonFile(out / "folds.json", fold_info);
  return {{"stage", "probe"}, {"task", result.task}, {"metric", result.metric},
          {"value", result.value}, {"n", result.n}, {"fold_values", result.fold_values},
          {"results", (out / "results.json").string()}};
}

nlohmann::json RunDoaEval(const RunConfig& config, const fs::path& out) {
  config.Validate();
  Require(!config.paths.predictions.empty(), ErrorCode::kInvalidConfig,
          "doa-eval needs paths.predictions (--predictions)");
  Prepare(out, config);
  std::vector<eval::Vec3> truth, pred;
  std::vector<std::string> ids;
  for (const auto& row : ReadJsonLines(config.paths.predictions)) {
    try {
      ids.push_back(row.at("id").get<std::string>());
      truth.push_back(ToVec3(row.at("truth").get<std::vector<double>>(), ids.back()));
      pred.push_back(ToVec3(row.at("pred").get<std::vector<double>>(), ids.back()));
    } catch (const json::exception& e) {
      Fail(ErrorCode::kCorruptPayload, "predictions: " + std::string(e.what()));
    }
  }
  Require(!ids.empty(), ErrorCode::kEmptyInput, "no predictions");
  const eval::DoaSummary s = eval::SummarizeDoa(truth, pred);
  json per_item = json::array();
  for (size_t i = 0; i < ids.size(); ++i) {
    per_item.push_back({{"id", ids[i]}, {"error_deg", s.errors_deg[i]}});
  }
  const json report = {{"stage", "doa-eval"}, {"n", ids.size()}, {"median_deg", s.median_deg},
                       {"mean_deg", s.mean_deg}, {"per_item", per_item}};
  WriteJsonFile(out / "doa.json", report);
  return {{"stage", "doa-eval"}, {"n", ids.size()}, {"median_deg", s.median_deg},
          {"mean_deg", s.mean_deg}};
}

nlohmann::json RunRt60Survey(const RunConfig& config, const fs::path& out, int count) {
  config.Validate();
  Require(count >= 1, ErrorCode::kInvalidConfig, "rt60 survey needs --rooms >= 1");
  Prepare(out, config);
  std::vector<json> rows(count);
  std::vector<double> values(count);
  ParallelFor(count, config.workers, [&](size_t i) {
    acoustics::RoomSpec room =
        acoustics::SampleDefaultRoom(DeriveSeed(StageSeed(config.seed, SeedStage::kRooms), i));
    room.absorption = config.scenes.absorption;
    room.max_order = config.scenes.max_order;
    const auto pose =
        acoustics::SampleScene(DeriveSeed(StageSeed(config.seed, SeedStage::kScenes), i), room);
    const auto rir = acoustics::ImageSourceRir(room, pose.source_pos_m, pose.listener_pos_m);
    const auto brir =
        acoustics::Binauralize(rir, pose.source_azimuth_deg, pose.source_elevation_deg);
    values[i] = acoustics::MeasureRt60(brir);
    rows[i] = {{"room", i}, {"dims_m", room.dims_m}, {"rt60_s", values[i]}};
  });
  WriteJsonLines(out / "rt60.jsonl", rows);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / count;
  const size_t inside = std::count_if(values.begin(), values.end(),
                                      [](double v) { return v >= 0.2 && v <= 0.5; });
  const json summary = {{"stage", "rt60"}, {"rooms", count}, {"min_s", *lo}, {"max_s", *hi},
                        {"mean_s", mean}, {"inside_0.2_0.5", inside}};
  WriteJsonFile(out / "summary.json", summary);
  return summary;
}

nlohmann::json RunPipeline(const RunConfig& config, const fs::path& out,
                           const std::function<void(const std::string&)>& on_stage) {
  config.Validate();
  Prepare(out, config);
  auto stage = [&](const std::string& name) {
    if (on_stage) on_stage(name);
  };
  json report;
  RunConfig c = config;

  stage("brir-gen");
  report["brir-gen"] = RunBrirGen(c, out / "brirs");
  c.paths.brir_dir = (out / "brirs").string();
  stage("scene-mix");
  report["scene-mix"] = RunSceneMix(c, out / "scenes");
  c.paths.scene_manifest = (out / "scenes" / "manifest.jsonl").string();
  stage("featurize");
  report["featurize"] = RunFeaturize(c, out / "features");
  c.paths.feature_dir = (out / "features").string();
  stage("pretrain");
  report["pretrain"] = RunPretrain(c, out / "pretrain");
  c.paths.checkpoint = (out / "pretrain" / "checkpoint.gck").string();

  for (const auto& [mode, task] :
       {std::pair{model::EmbeddingMode::kClipLevel, ProbeTask::kClass},
        std::pair{model::EmbeddingMode::kLocalization, ProbeTask::kDirection}}) {
    const std::string tag = ModeName(mode);
    c.eval.embedding = mode;
    stage("embed " + tag);
    report["embed_" + tag] = RunEmbed(c, out / ("embed_" + tag));
    c.paths.embeddings = (out / ("embed_" + tag) / "embeddings.jsonl").string();
    c.eval.task = task;
    stage("probe " + TaskName(task));
    report["probe_" + TaskName(task)] = RunProbe(c, out / ("probe_" + TaskName(task)));
  }
  c.paths.predictions = (out / "probe_direction" / "predictions.jsonl").string();
  stage("doa-eval");
  report["doa-eval"] = RunDoaEval(c, out / "doa");
  WriteJsonFile(out / "report.json", report);
  return report;
}

}  // namespace gram::pipeline
