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

// Command-line front end: one subcommand per pipeline stage plus `pipeline`,
// which chains them. Every run leaves effective_config.json in its output
// directory; failures print a JSON error object and exit nonzero.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gram/acoustics.h"
#include "gram/eval.h"
#include "gram/pipeline.h"
#include "json.hpp"

namespace {

using gram::pipeline::RunConfig;
using nlohmann::json;
namespace fs = std::filesystem;

// Flags shared by the stage subcommands. Unset optionals leave the config
// file (or the built-in default) in charge.
struct CommonFlags {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int> workers;
  std::string out;  // filled from the subcommand default when unset
  bool toy = false;
};

struct StageFlags {
  std::optional<int> scenes;
  std::optional<double> absorption;
  std::optional<int> max_order;
  std::optional<double> snr_min, snr_max;
  std::optional<std::string> brirs, targets, noises, manifest, features, checkpoint,
      embeddings, predictions;
  std::optional<int> steps, warmup;
  std::optional<double> lr;
  std::optional<std::string> backbone, strategy, mode, task, loss;
  std::optional<int> folds, hidden, epochs;
  std::optional<int> rooms;
  std::optional<std::string> brir_file;
};

void AddCommon(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file (flags override it)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--workers", f.workers, "worker threads (fallback: GRAM_WORKERS)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_flag("--toy", f.toy, "desk-scale model and schedule");
}

int ResolveWorkers(const std::optional<int>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("GRAM_WORKERS")) {
    try {
      return std::stoi(env);
    } catch (const std::exception&) {
      gram::Fail(gram::ErrorCode::kInvalidConfig,
                 std::string("GRAM_WORKERS is not an integer: '") + env + "'");
    }
  }
  return 1;
}

json ReadConfigFile(const std::string& path) {
  if (path.empty()) return json::object();
  return gram::pipeline::ReadJsonFile(path);
}

RunConfig BuildConfig(const CommonFlags& c, const StageFlags& s) {
  const json file = ReadConfigFile(c.config_path);
  const bool toy = c.toy || (file.is_object() && file.value("toy", false));
  RunConfig cfg = RunConfig::FromJson(file, toy ? RunConfig::Toy() : RunConfig::Defaults());
  if (c.toy) cfg.toy = true;
  if (c.seed) cfg.seed = *c.seed;
  cfg.workers = ResolveWorkers(c.workers);
  cfg.out = c.out;

  if (s.scenes) cfg.scenes.count = *s.scenes;
  if (s.absorption) cfg.scenes.absorption = *s.absorption;
  if (s.max_order) cfg.scenes.max_order = *s.max_order;
  if (s.snr_min) cfg.scenes.snr_min_db = *s.snr_min;
  if (s.snr_max) cfg.scenes.snr_max_db = *s.snr_max;
  if (s.brirs) cfg.paths.brir_dir = *s.brirs;
  if (s.targets) cfg.paths.target_manifest = *s.targets;
  if (s.noises) cfg.paths.noise_manifest = *s.noises;
  if (s.manifest) cfg.paths.scene_manifest = *s.manifest;
  if (s.features) cfg.paths.feature_dir = *s.features;
  if (s.checkpoint) cfg.paths.checkpoint = *s.checkpoint;
  if (s.embeddings) cfg.paths.embeddings = *s.embeddings;
  if (s.predictions) cfg.paths.predictions = *s.predictions;
  if (s.steps) {
    cfg.train.steps = *s.steps;
    cfg.train.warmup_steps = std::min(cfg.train.warmup_steps, *s.steps);
  }
  if (s.warmup) cfg.train.warmup_steps = *s.warmup;
  if (s.lr) cfg.train.base_lr = *s.lr;
  if (s.backbone || s.strategy) {
    const auto backbone = s.backbone ? gram::model::ParseBackbone(*s.backbone)
                                     : cfg.model.encoder.backbone;
    const auto strategy = s.strategy ? gram::model::ParseStrategy(*s.strategy)
                                     : cfg.model.patch.strategy;
    gram::model::ModelConfig m = cfg.model;
    m.encoder.backbone = backbone;
    m.patch = gram::model::PatchConfig::ForStrategy(strategy, m.encoder.dim);
    m.decoder.window_sizes = gram::model::DecoderConfig::DefaultWindows(strategy);
    cfg.model = m;
  }
  json overrides = json::object();
  if (s.mode) overrides["eval"]["embedding"] = *s.mode;
  if (s.task) overrides["eval"]["task"] = *s.task;
  if (s.folds) overrides["eval"]["folds"] = *s.folds;
  if (s.hidden) overrides["probe"]["hidden"] = *s.hidden;
  if (s.epochs) overrides["probe"]["epochs"] = *s.epochs;
  if (s.loss) overrides["probe"]["regression_loss"] = *s.loss;
  if (!overrides.empty()) cfg = RunConfig::FromJson(overrides, cfg);
  cfg.Validate();
  return cfg;
}

void PrintJson(const json& j) { std::cout << j.dump(2) << std::endl; }

json ErrorJson(const std::string& code, const std::string& message,
               const std::vector<std::string>& problems = {}) {
  json e = {{"code", code}, {"message", message}};
  if (!problems.empty()) e["problems"] = problems;
  return {{"error", e}};
}

// Options of the `stats` tools, serialized like the stage configs.
struct StatsOptions {
  std::string a, b;
  double q = 0.05;
  std::vector<double> p;
  std::optional<int64_t> batch, steps_per_epoch, epochs, total_steps;

  json ToJson(const std::string& command) const {
    json j = {{"command", command}};
    if (command == "mcnemar") j.update({{"a", a}, {"b", b}, {"q", q}});
    if (command == "fdr") j.update({{"p", p}, {"q", q}});
    if (command == "samples-seen") {
      j["batch"] = batch ? json(*batch) : json(nullptr);
      j["steps_per_epoch"] = steps_per_epoch ? json(*steps_per_epoch) : json(nullptr);
      j["epochs"] = epochs ? json(*epochs) : json(nullptr);
      j["total_steps"] = total_steps ? json(*total_steps) : json(nullptr);
    }
    return j;
  }
  void Fill(const json& j) {
    auto get_int = [&](const char* k, std::optional<int64_t>& v) {
      if (!v && j.contains(k) && !j.at(k).is_null()) v = j.at(k).get<int64_t>();
    };
    if (a.empty()) a = j.value("a", a);
    if (b.empty()) b = j.value("b", b);
    if (p.empty()) p = j.value("p", p);
    get_int("batch", batch);
    get_int("steps_per_epoch", steps_per_epoch);
    get_int("epochs", epochs);
    get_int("total_steps", total_steps);
  }
};

std::vector<gram::eval::TaskResult> LoadResults(const std::string& path) {
  const json j = gram::pipeline::ReadJsonFile(path);
  std::vector<gram::eval::TaskResult> out;
  if (j.is_array()) {
    for (const auto& item : j) out.push_back(gram::eval::TaskResult::FromJson(item));
  } else {
    out.push_back(gram::eval::TaskResult::FromJson(j));
  }
  return out;
}

json RunStats(const std::string& command, StatsOptions opt, const CommonFlags& common,
              bool q_set) {
  const json file = ReadConfigFile(common.config_path);
  opt.Fill(file);
  if (!q_set && file.contains("q")) opt.q = file.at("q").get<double>();
  const fs::path out = common.out;
  fs::create_directories(out);
  gram::pipeline::WriteJsonFile(out / "effective_config.json", opt.ToJson(command));

  json report;
  if (command == "mcnemar") {
    gram::Require(!opt.a.empty() && !opt.b.empty(), gram::ErrorCode::kInvalidConfig,
                  "mcnemar needs --a and --b result files");
    report = gram::eval::CompareResults(LoadResults(opt.a), LoadResults(opt.b), opt.q);
  } else if (command == "fdr") {
    gram::Require(!opt.p.empty(), gram::ErrorCode::kInvalidConfig, "fdr needs --p values");
    const auto bh = gram::eval::FdrBh(opt.p, opt.q);
    report = {{"raw_p", opt.p},
              {"adjusted_p", bh.adjusted},
              {"significant", std::vector<bool>(bh.rejected.begin(), bh.rejected.end())},
              {"q", opt.q}};
  } else {
    gram::Require(opt.batch.has_value(), gram::ErrorCode::kInvalidConfig,
                  "samples-seen needs --batch");
    int64_t seen;
    if (opt.total_steps) {
      seen = gram::eval::SamplesSeen(*opt.batch, *opt.total_steps);
    } else {
      gram::Require(opt.steps_per_epoch && opt.epochs, gram::ErrorCode::kInvalidConfig,
                    "samples-seen needs --total-steps or --steps-per-epoch with --epochs");
      seen = gram::eval::SamplesSeen(*opt.batch, *opt.steps_per_epoch, *opt.epochs);
    }
    report = {{"samples_seen", seen}};
  }
  gram::pipeline::WriteJsonFile(out / "report.json", report);
  return report;
}

json MeasureOneBrir(const std::string& path, const CommonFlags& common) {
  const fs::path out = common.out;
  fs::create_directories(out);
  gram::pipeline::WriteJsonFile(out / "effective_config.json",
                                {{"command", "rt60"}, {"brir", path}});
  const auto brir = gram::acoustics::LoadBrir(path);
  const auto wav_rt60 = gram::acoustics::MeasureRt60(brir);
  const json report = {{"brir", path}, {"rt60_s", wav_rt60},
                       {"rt60_left_s", gram::acoustics::MeasureRt60(brir.left, brir.rate_hz)},
                       {"rt60_right_s", gram::acoustics::MeasureRt60(brir.right, brir.rate_hz)}};
  gram::pipeline::WriteJsonFile(out / "summary.json", report);
  return report;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gram: binaural spectrogram masked-autoencoder pipeline"};
  app.require_subcommand(1);

  CommonFlags common;
  StageFlags stage;
  std::map<const CLI::App*, std::string> default_out;
  StatsOptions stats;
  bool q_set = false;

  auto scene_flags = [&](CLI::App* cmd) {
    cmd->add_option("--scenes", stage.scenes, "number of scenes");
    cmd->add_option("--absorption", stage.absorption, "uniform wall absorption");
    cmd->add_option("--max-order", stage.max_order, "image-source reflection order");
  };
  auto model_flags = [&](CLI::App* cmd) {
    cmd->add_option("--backbone", stage.backbone, "transformer | mamba");
    cmd->add_option("--strategy", stage.strategy, "patch | time");
  };

  auto* brir = app.add_subcommand("brir-gen", "render and export scene BRIRs");
  AddCommon(brir, common);
  default_out[brir] = "run/brirs";
  scene_flags(brir);

  auto* mix = app.add_subcommand("scene-mix", "mix naturalistic binaural scenes");
  AddCommon(mix, common);
  default_out[mix] = "run/scenes";
  scene_flags(mix);
  mix->add_option("--brirs", stage.brirs, "directory written by brir-gen");
  mix->add_option("--targets", stage.targets, "target clip manifest (default: synthetic)");
  mix->add_option("--noises", stage.noises, "noise clip manifest (default: synthetic)");
  mix->add_option("--snr-min", stage.snr_min, "lowest SNR in dB");
  mix->add_option("--snr-max", stage.snr_max, "highest SNR in dB");

  auto* feat = app.add_subcommand("featurize", "log-mel features for a scene manifest");
  AddCommon(feat, common);
  default_out[feat] = "run/features";
  feat->add_option("--manifest", stage.manifest, "scene manifest");

  auto* pre = app.add_subcommand("pretrain", "masked-autoencoder pretraining");
  AddCommon(pre, common);
  default_out[pre] = "run/pretrain";
  scene_flags(pre);
  model_flags(pre);
  pre->add_option("--features", stage.features, "feature directory (default: synthesize)");
  pre->add_option("--steps", stage.steps, "optimizer steps");
  pre->add_option("--warmup", stage.warmup, "warmup steps");
  pre->add_option("--lr", stage.lr, "peak learning rate");

  auto* emb = app.add_subcommand("embed", "frozen embeddings from a checkpoint");
  AddCommon(emb, common);
  default_out[emb] = "run/embed";
  scene_flags(emb);
  emb->add_option("--checkpoint", stage.checkpoint, "checkpoint from pretrain");
  emb->add_option("--features", stage.features, "feature directory (default: synthesize)");
  emb->add_option("--mode", stage.mode, "clip_level | localization");

  auto* probe = app.add_subcommand("probe", "k-fold probe on frozen embeddings");
  AddCommon(probe, common);
  default_out[probe] = "run/probe";
  probe->add_option("--embeddings", stage.embeddings, "embeddings.jsonl from embed");
  probe->add_option("--task", stage.task, "class | direction");
  probe->add_option("--folds", stage.folds, "number of folds");
  probe->add_option("--hidden", stage.hidden, "hidden units (0 = linear)");
  probe->add_option("--epochs", stage.epochs, "maximum epochs");
  probe->add_option("--loss", stage.loss, "direction loss: cosine | mse");

  auto* doa = app.add_subcommand("doa-eval", "DoA error of direction predictions");
  AddCommon(doa, common);
  default_out[doa] = "run/doa";
  doa->add_option("--predictions", stage.predictions, "predictions.jsonl from probe");

  auto* st = app.add_subcommand("stats", "significance tests and sample accounting");
  st->require_subcommand(1);
  auto* mc = st->add_subcommand("mcnemar", "paired McNemar tests with BH correction");
  auto* fdr = st->add_subcommand("fdr", "Benjamini-Hochberg adjustment");
  auto* seen = st->add_subcommand("samples-seen", "batch x steps [x epochs]");
  for (auto* cmd : {mc, fdr, seen}) {
    default_out[cmd] = "run/stats";
    cmd->add_option("--config", common.config_path, "JSON options file")->check(CLI::ExistingFile);
    cmd->add_option("--out", common.out, "output directory");
  }
  mc->add_option("--a", stats.a, "results JSON of system A");
  mc->add_option("--b", stats.b, "results JSON of system B");
  for (auto* cmd : {mc, fdr}) {
    cmd->add_option("--q", stats.q, "false discovery rate")->each([&](const std::string&) {
      q_set = true;
    });
  }
  fdr->add_option("--p", stats.p, "p-values")->delimiter(',');
  seen->add_option("--batch", stats.batch, "batch size");
  seen->add_option("--steps-per-epoch", stats.steps_per_epoch, "steps per epoch");
  seen->add_option("--epochs", stats.epochs, "epochs");
  seen->add_option("--total-steps", stats.total_steps, "total optimizer steps");

  auto* rt = app.add_subcommand("rt60", "reverberation time of BRIRs");
  AddCommon(rt, common);
  default_out[rt] = "run/rt60";
  scene_flags(rt);
  rt->add_option("--brir", stage.brir_file, "measure one BRIR WAV");
  rt->add_option("--rooms", stage.rooms, "survey this many default rooms");

  auto* pipe = app.add_subcommand("pipeline", "brir-gen through doa-eval in one run");
  AddCommon(pipe, common);
  default_out[pipe] = "run";
  scene_flags(pipe);
  model_flags(pipe);
  pipe->add_option("--steps", stage.steps, "optimizer steps");
  pipe->add_option("--folds", stage.folds, "probe folds");
  pipe->add_option("--epochs", stage.epochs, "probe epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << ErrorJson("invalid_arguments", e.what()).dump() << std::endl;
    return 2;
  }

  if (common.out.empty()) {
    for (const auto& [cmd, dir] : default_out) {
      if (cmd->parsed()) common.out = dir;
    }
  }
  auto write_error = [&](const json& err) {
    std::cerr << err.dump() << std::endl;
    std::error_code ec;
    fs::create_directories(common.out, ec);
    if (!ec) std::ofstream(fs::path(common.out) / "error.json") << err.dump(2) << '\n';
  };
  try {
    const auto progress = [](const std::string& s) { std::cerr << "[stage] " << s << std::endl; };
    json result;
    if (st->parsed()) {
      const std::string cmd = mc->parsed() ? "mcnemar" : fdr->parsed() ? "fdr" : "samples-seen";
      result = RunStats(cmd, stats, common, q_set);
    } else if (rt->parsed() && stage.brir_file) {
      result = MeasureOneBrir(*stage.brir_file, common);
    } else {
      const RunConfig cfg = BuildConfig(common, stage);
      const fs::path out = cfg.out;
      if (brir->parsed()) result = gram::pipeline::RunBrirGen(cfg, out);
      if (mix->parsed()) result = gram::pipeline::RunSceneMix(cfg, out);
      if (feat->parsed()) result = gram::pipeline::RunFeaturize(cfg, out);
      if (pre->parsed()) {
        result = gram::pipeline::RunPretrain(cfg, out, [&](const gram::model::StepLog& s) {
          if (s.step % 25 == 0 || s.step + 1 == cfg.train.steps) {
            std::cerr << "step " << s.step << " lr " << s.lr << " loss " << s.loss << std::endl;
          }
        });
      }
      if (emb->parsed()) result = gram::pipeline::RunEmbed(cfg, out);
      if (probe->parsed()) result = gram::pipeline::RunProbe(cfg, out);
      if (doa->parsed()) result = gram::pipeline::RunDoaEval(cfg, out);
      if (rt->parsed()) result = gram::pipeline::RunRt60Survey(cfg, out, stage.rooms.value_or(100));
      if (pipe->parsed()) result = gram::pipeline::RunPipeline(cfg, out, progress);
    }
    PrintJson(result);
    return 0;
  } catch (const gram::pipeline::ConfigError& e) {
    write_error(ErrorJson("invalid_config", e.what(), e.problems()));
  } catch (const gram::Error& e) {
    write_error(ErrorJson(std::string(gram::ErrorCodeName(e.code())), e.what()));
  } catch (const std::exception& e) {
    write_error(ErrorJson("internal", e.what()));
  }
  return 1;
}
