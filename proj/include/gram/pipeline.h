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

#ifndef GRAM_PIPELINE_H_
#define GRAM_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gram/acoustics.h"
#include "gram/eval.h"
#include "gram/model.h"
#include "gram/scene_mixer.h"
#include "json.hpp"

namespace gram::pipeline {

namespace fs = std::filesystem;

// Thrown by RunConfig validation; `problems` lists every bad field.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct Paths {
  std::string target_manifest;  // empty: synthetic targets
  std::string noise_manifest;   // empty: synthetic noise
  std::string brir_dir;         // scene-mix input; empty renders BRIRs inline
  std::string scene_manifest;   // featurize input
  std::string feature_dir;      // pretrain / embed input; empty synthesizes
  std::string checkpoint;       // embed input
  std::string embeddings;       // probe input
  std::string predictions;      // doa-eval input
};

struct SceneSettings {
  int count = 64;
  double absorption = acoustics::kDefaultAbsorption;
  int max_order = acoustics::kDefaultMaxOrder;
  double snr_min_db = scene::kMinSnrDb;
  double snr_max_db = scene::kMaxSnrDb;
};

enum class ProbeTask { kClass, kDirection };

struct EvalSettings {
  model::EmbeddingMode embedding = model::EmbeddingMode::kClipLevel;
  ProbeTask task = ProbeTask::kClass;
  int folds = 4;
  // A direction estimate counts as correct (for paired tests) below this.
  double doa_correct_deg = 45.0;
};

// Everything that determines a stage's outputs. `workers` and `out` only
// place the work and are kept out of the serialized form, so a frozen
// config reproduces byte-identical outputs on any machine layout.
struct RunConfig {
  uint64_t seed = 0;
  bool toy = false;
  Paths paths;
  SceneSettings scenes;
  model::ModelConfig model;
  model::TrainConfig train;
  eval::ProbeConfig probe;
  EvalSettings eval;

  int workers = 1;
  std::string out = "run";

  // Full-scale model and schedule over 64 scenes.
  static RunConfig Defaults();
  // Desk-scale model and 300-step schedule.
  static RunConfig Toy();

  nlohmann::json ToJson() const;
  // Layers `j` over `base`; unknown keys and bad values raise ConfigError.
  static RunConfig FromJson(const nlohmann::json& j, const RunConfig& base);
  // Collects every problem (ranges, model sizes, missing input paths).
  std::vector<std::string> Problems() const;
  void Validate() const;
};

// Runs fn(0..n-1) on up to `workers` threads. Results must be written by
// index; the exception of the lowest failing index is rethrown.
void ParallelFor(size_t n, int workers, const std::function<void(size_t)>& fn);

// Writes the frozen config into `dir` (creating it).
void WriteEffectiveConfig(const fs::path& dir, const RunConfig& config);

void WriteJsonFile(const fs::path& path, const nlohmann::json& j);
void WriteJsonLines(const fs::path& path, const std::vector<nlohmann::json>& rows);
std::vector<nlohmann::json> ReadJsonLines(const fs::path& path);
nlohmann::json ReadJsonFile(const fs::path& path);

std::string SceneId(size_t index);

// Room, pose and BRIRs of scene `index`, derived from the master seed.
struct SceneGeometry {
  acoustics::RoomSpec room;
  acoustics::ScenePose pose;
  acoustics::SceneBrirs brirs;
};
SceneGeometry RenderGeometry(const RunConfig& config, size_t index);

// One mixed scene with its label information.
struct SceneRecord {
  std::string id;
  std::string target_class;
  scene::MixedScene mixed;
  std::string target_clip;
  std::string noise_clip;
};
SceneRecord MixOne(const RunConfig& config, size_t index, const SceneGeometry& geometry);

// A featurized clip with its labels.
struct FeatureItem {
  std::string id;
  std::string label;
  std::vector<double> direction;  // unit vector, may be empty
  BinauralSpectrogram spec;
};

// Stage entry points. Each writes into `out` (plus effective_config.json)
// and returns a summary that the CLI prints.
nlohmann::json RunBrirGen(const RunConfig& config, const fs::path& out);
nlohmann::json RunSceneMix(const RunConfig& config, const fs::path& out);
nlohmann::json RunFeaturize(const RunConfig& config, const fs::path& out);
nlohmann::json RunPretrain(const RunConfig& config, const fs::path& out,
                           const std::function<void(const model::StepLog&)>& on_step = {});
nlohmann::json RunEmbed(const RunConfig& config, const fs::path& out);
nlohmann::json RunProbe(const RunConfig& config, const fs::path& out);
nlohmann::json RunDoaEval(const RunConfig& config, const fs::path& out);
// RT60 of `count` default-room scenes (source BRIR of each).
nlohmann::json RunRt60Survey(const RunConfig& config, const fs::path& out, int count);
// brir-gen -> scene-mix -> featurize -> pretrain -> embed -> probe -> doa-eval.
nlohmann::json RunPipeline(const RunConfig& config, const fs::path& out,
                           const std::function<void(const std::string&)>& on_stage = {});

// Synthesized scenes featurized in memory (no files), ordered by index.
std::vector<FeatureItem> SynthesizeFeatures(const RunConfig& config);
std::vector<FeatureItem> LoadFeatures(const fs::path& feature_dir);

}  // namespace gram::pipeline

#endif  // GRAM_PIPELINE_H_
