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

#ifndef GRAM_MODEL_H_
#define GRAM_MODEL_H_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gram/nn/checkpoint.h"
#include "gram/nn/ops.h"
#include "gram/nn/optim.h"
#include "gram/nn/tensor.h"
#include "gram/spectrogram.h"
#include "json.hpp"

namespace gram::model {

enum class MaskingStrategy { kPatchBased, kTimeBased };
enum class Backbone { kTransformer, kMamba };

std::string ToString(MaskingStrategy strategy);
std::string ToString(Backbone backbone);
MaskingStrategy ParseStrategy(const std::string& name);
Backbone ParseBackbone(const std::string& name);

struct PatchConfig {
  MaskingStrategy strategy = MaskingStrategy::kPatchBased;
  // Input segment (C, T, F).
  int input_channels = 2;
  int input_frames = kSegmentFrames;
  int input_mels = kNumMels;
  // Patch (C, T, F).
  int patch_channels = 2;
  int patch_frames = 8;
  int patch_mels = 16;
  int embed_dim = 64;

  static PatchConfig ForStrategy(MaskingStrategy strategy, int embed_dim);

  int time_patches() const { return input_frames / patch_frames; }
  int freq_patches() const { return input_mels / patch_mels; }
  int channel_patches() const { return input_channels / patch_channels; }
  int num_patches() const { return channel_patches() * time_patches() * freq_patches(); }
  int patch_size() const { return patch_channels * patch_frames * patch_mels; }
  void Validate() const;
};

struct EncoderConfig {
  Backbone backbone = Backbone::kTransformer;
  int depth = 2;
  int dim = 64;
  int heads = 4;
  int mlp_ratio = 4;
  // Selective-SSM block.
  int state_dim = 16;
  int expand = 2;
  int conv_kernel = 4;
  int dt_rank = 4;
  bool exact_zoh = false;
  bool cls_token = true;

  void Validate() const;
};

struct DecoderConfig {
  int depth = 8;
  int dim = 32;
  int heads = 4;
  int mlp_ratio = 4;
  std::vector<int> window_sizes;  // one per layer, 0 = global

  static std::vector<int> DefaultWindows(MaskingStrategy strategy);
  void Validate(int sequence_length) const;
};

struct ModelConfig {
  PatchConfig patch;
  EncoderConfig encoder;
  DecoderConfig decoder;
  double mask_ratio = 0.8;
  // Dataset-level log-mel statistics. Inputs enter the network as
  // (x - mean) / std; reconstructions are mapped back to raw log-mel units.
  double input_mean = 0.0;
  double input_std = 1.0;

  // Desk-scale defaults: encoder dim 64 / depth 2, decoder dim 32 / depth 8.
  static ModelConfig Toy(Backbone backbone, MaskingStrategy strategy);
  // ViT-B sized encoder (768 wide, 12 layers) with a 512-wide decoder.
  static ModelConfig FullScale(Backbone backbone, MaskingStrategy strategy);
  void Validate() const;
  nlohmann::json ToJson() const;
  static ModelConfig FromJson(const nlohmann::json& j);
};

// Named parameter arrays, ordered by name.
struct ModelParams {
  std::map<std::string, nn::Tensor> tensors;

  const nn::Tensor& at(const std::string& name) const;
  std::vector<nn::Tensor> List() const;
  size_t NumValues() const;
};

ModelParams InitParams(const ModelConfig& config, uint64_t seed);

struct MaskPlan {
  int n_patches = 0;
  std::vector<int> masked;   // ascending
  std::vector<int> visible;  // ascending
  uint64_t seed = 0;
};

MaskPlan MakeMask(int n_patches, uint64_t seed, double ratio = 0.8);
// Plan with nothing masked, for inference.
MaskPlan NoMask(int n_patches);

// Fixed sin/cos table [n_positions, dim]: row p holds sin(p * w_i) at even
// columns 2i and cos(p * w_i) at odd columns, w_i = 10000^(-2i/dim).
nn::Tensor PositionalEmbed(int n_positions, int dim);

// Table for the patch grid [num_patches, dim]: the first half of each row is
// PositionalEmbed over the time index, the second half over the frequency
// index. dim must be divisible by 4.
nn::Tensor PatchPositions(const PatchConfig& patch, int dim);

// Stacks segments into [B, C, T, F].
nn::Tensor StackSegments(const std::vector<BinauralSpectrogram>& segments);

// [B, C, T, F] -> [B, N, C*T*F] patch values. Patches are ordered time-major,
// then frequency; values inside a patch are (c, t, f) row-major.
nn::Tensor Unfold(const nn::Tensor& input, const PatchConfig& config);

// Unfold followed by the patch-embedding projection: [B, N, embed_dim].
nn::Tensor Patchify(const nn::Tensor& input, const PatchConfig& config,
                    const ModelParams& params);

// Multi-head attention over x [B, L, D] with parameters under `prefix`
// (wq, wk, wv, wo and biases). window > 0 confines attention to contiguous
// groups of `window` tokens; 0 attends globally.
nn::Tensor Attention(const nn::Tensor& x, const ModelParams& params,
                     const std::string& prefix, int heads, int window);

struct EncoderOutput {
  nn::Tensor latents;  // [B, 1 + V, D] with CLS first when enabled
  bool has_cls = true;
};

// Embeds `input` [B, C, T, F] (raw log-mel), keeps each item's visible
// patches, prepends CLS and runs the encoder stack. All plans must have the
// same visible count.
EncoderOutput Encode(const nn::Tensor& input, const std::vector<MaskPlan>& masks,
                     const ModelConfig& config, const ModelParams& params);

// Encoder stack on already-embedded tokens [B, L, D]; depth 0 is identity.
nn::Tensor EncoderBlocks(const nn::Tensor& tokens, const EncoderConfig& config,
                         const ModelParams& params);

// Reconstructs every patch: [B, N, patch_size] in raw log-mel units.
nn::Tensor Decode(const EncoderOutput& encoded, const std::vector<MaskPlan>& masks,
                  const ModelConfig& config, const ModelParams& params);

// Mean squared error over the masked patches of each item.
nn::Tensor MaskedMse(const nn::Tensor& pred, const nn::Tensor& target,
                     const std::vector<MaskPlan>& masks);

// Masks for a batch: item i uses DeriveSeed(seed, i).
std::vector<MaskPlan> BatchMasks(int batch, int n_patches, uint64_t seed, double ratio);

struct ForwardResult {
  nn::Tensor loss;
  nn::Tensor pred;
  nn::Tensor target;
};

ForwardResult Forward(const nn::Tensor& input, const std::vector<MaskPlan>& masks,
                      const ModelConfig& config, const ModelParams& params);

struct TrainConfig {
  int steps = 300;
  int warmup_steps = 30;
  double base_lr = 0.0002;
  int clips_per_step = 1;
  int segments_per_clip = 16;
  uint64_t seed = 0;
  nn::AdamWConfig adamw;

  // 300 steps of 4 clips x 4 segments, 30 warmup steps, peak rate 2e-3.
  static TrainConfig Toy();
  // 180k steps, batch 32 x 16 segments, 10k warmup, peak 2e-4.
  static TrainConfig FullScale();
  nlohmann::json ToJson() const;
  static TrainConfig FromJson(const nlohmann::json& j);
};

struct StepLog {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

// One optimization step on `segments`. Throws kNonFinite with the step
// number when the loss diverges.
StepLog PretrainStep(const std::vector<BinauralSpectrogram>& segments,
                     const ModelConfig& config, ModelParams& params,
                     nn::OptimizerState& state, const nn::AdamWConfig& adamw,
                     int64_t step, double lr, uint64_t mask_seed);

struct PretrainResult {
  ModelParams params;
  nn::OptimizerState state;
  std::vector<StepLog> log;
};

// Full loop: every step draws `clips_per_step` clips and crops
// `segments_per_clip` segments from each. Deterministic given the seeds.
PretrainResult Pretrain(const std::vector<BinauralSpectrogram>& clips,
                        const ModelConfig& config, const TrainConfig& train,
                        const std::function<void(const StepLog&)>& on_step = {});

// Masked MSE without gradients on a fixed evaluation set: each clip gives
// `segments_per_clip` crops, and crops and masks depend only on `seed`.
// Averaged over segments.
double EvaluateMaskedMse(const std::vector<BinauralSpectrogram>& clips,
                         const ModelConfig& config, const ModelParams& params,
                         uint64_t seed, int segments_per_clip = 2);

// Mean and standard deviation of every value in `clips`.
std::pair<double, double> SpectrogramStats(const std::vector<BinauralSpectrogram>& clips);

enum class EmbeddingMode { kClipLevel, kLocalization };

// Encodes non-overlapping segment-length chunks with every patch visible.
// clip_level: patch latents concatenated over chunks, averaged over time ->
// embed_dim * freq_patches values. localization: mean CLS over chunks for
// the transformer, mean of patch latents for mamba.
std::vector<double> ExtractEmbedding(const BinauralSpectrogram& clip,
                                     const ModelConfig& config,
                                     const ModelParams& params, EmbeddingMode mode);
int EmbeddingWidth(const ModelConfig& config, EmbeddingMode mode);

// Model parameters, optimizer moments and both configs in one checkpoint.
nn::Checkpoint ToCheckpoint(const ModelConfig& config, const ModelParams& params,
                            const nn::OptimizerState* state,
                            const nlohmann::json& extra = nlohmann::json::object());
void FromCheckpoint(const nn::Checkpoint& checkpoint, ModelConfig& config,
                    ModelParams& params, nn::OptimizerState* state = nullptr);

}  // namespace gram::model

#endif  // GRAM_MODEL_H_
