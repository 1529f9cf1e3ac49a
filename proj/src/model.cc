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

#include "gram/model.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "gram/featurizer.h"

namespace gram::model {
namespace {

using nn::Shape;
using nn::Tensor;

std::string BlockName(const std::string& stack, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s.block%02d", stack.c_str(), index);
  return buf;
}

Tensor Linear(const Tensor& x, const ModelParams& p, const std::string& weight,
              const std::string& bias) {
  return nn::Add(nn::MatMul(x, p.at(weight)), p.at(bias));
}

Tensor Norm(const Tensor& x, const ModelParams& p, const std::string& prefix) {
  return nn::LayerNorm(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"));
}

class Initializer {
 public:
  Initializer(ModelParams& params, uint64_t seed) : params_(params), rng_(seed) {}

  void Put(const std::string& name, const Shape& shape, std::vector<double> data) {
    Require(!params_.tensors.count(name), ErrorCode::kInvalidConfig,
            "duplicate parameter " + name);
    params_.tensors.emplace(name, Tensor::FromData(shape, std::move(data), true));
  }
  void Constant(const std::string& name, const Shape& shape, double value) {
    Put(name, shape, std::vector<double>(nn::NumElements(shape), value));
  }
  void Uniform(const std::string& name, const Shape& shape, double bound) {
    std::vector<double> data(nn::NumElements(shape));
    for (double& v : data) v = rng_.Uniform(-bound, bound);
    Put(name, shape, std::move(data));
  }
  void Normal(const std::string& name, const Shape& shape, double stddev) {
    std::vector<double> data(nn::NumElements(shape));
    for (double& v : data) v = rng_.Normal(0.0, stddev);
    Put(name, shape, std::move(data));
  }
  // Xavier-uniform weight [in, out] plus a zero bias [out].
  void Dense(const std::string& prefix, int in, int out, bool bias = true) {
    Uniform(prefix + ".weight", {in, out}, std::sqrt(6.0 / (in + out)));
    if (bias) Constant(prefix + ".bias", {out}, 0.0);
  }
  void LayerNormParams(const std::string& prefix, int dim) {
    Constant(prefix + ".gamma", {dim}, 1.0);
    Constant(prefix + ".beta", {dim}, 0.0);
  }
  void AttentionBlock(const std::string& prefix, int dim, int mlp_ratio) {
    LayerNormParams(prefix + ".ln1", dim);
    for (const char* proj : {"q", "k", "v", "o"}) {
      Dense(prefix + ".attn." + proj, dim, dim);
    }
    LayerNormParams(prefix + ".ln2", dim);
    Dense(prefix + ".mlp.fc1", dim, dim * mlp_ratio);
    Dense(prefix + ".mlp.fc2", dim * mlp_ratio, dim);
  }
  void MambaBlock(const std::string& prefix, const EncoderConfig& c) {
    const int inner = c.dim * c.expand;
    LayerNormParams(prefix + ".ln", c.dim);
    Dense(prefix + ".in_proj", c.dim, 2 * inner, false);
    Uniform(prefix + ".conv.weight", {c.conv_kernel, inner}, 1.0 / std::sqrt(c.conv_kernel));
    Constant(prefix + ".conv.bias", {inner}, 0.0);
    Dense(prefix + ".x_proj", inner, c.dt_rank + 2 * c.state_dim, false);
    Uniform(prefix + ".dt_proj.weight", {c.dt_rank, inner}, 1.0 / std::sqrt(c.dt_rank));
    // Step sizes log-uniform in [1e-3, 1e-1], stored through inverse softplus.
    std::vector<double> dt_bias(inner);
    for (double& v : dt_bias) {
      const double dt = std::exp(rng_.Uniform(std::log(1e-3), std::log(1e-1)));
      v = dt + std::log(-std::expm1(-dt));
    }
    Put(prefix + ".dt_proj.bias", {inner}, std::move(dt_bias));
    std::vector<double> a_log(static_cast<size_t>(inner) * c.state_dim);
    for (int e = 0; e < inner; ++e) {
      for (int n = 0; n < c.state_dim; ++n) a_log[e * c.state_dim + n] = std::log(n + 1.0);
    }
    Put(prefix + ".a_log", {inner, c.state_dim}, std::move(a_log));
    Constant(prefix + ".d_skip", {inner}, 1.0);
    Dense(prefix + ".out_proj", inner, c.dim, false);
  }

 private:
  ModelParams& params_;
  Rng rng_;
};

Tensor TransformerBlock(const Tensor& x, const ModelParams& p, const std::string& prefix,
                        int heads, int window) {
  Tensor h = nn::Add(x, Attention(Norm(x, p, prefix + ".ln1"), p, prefix + ".attn", heads,
                                  window));
  Tensor m = Linear(Norm(h, p, prefix + ".ln2"), p, prefix + ".mlp.fc1.weight",
                    prefix + ".mlp.fc1.bias");
  m = Linear(nn::Gelu(m), p, prefix + ".mlp.fc2.weight", prefix + ".mlp.fc2.bias");
  return nn::Add(h, m);
}

Tensor MambaBlock(const Tensor& x, const ModelParams& p, const std::string& prefix,
                  const EncoderConfig& c) {
  const int inner = c.dim * c.expand;
  Tensor h = Norm(x, p, prefix + ".ln");
  Tensor xz = nn::MatMul(h, p.at(prefix + ".in_proj.weight"));
  Tensor xs = nn::Slice(xz, 2, 0, inner);
  Tensor z = nn::Slice(xz, 2, inner, inner);
  xs = nn::Silu(nn::CausalDepthwiseConv1d(xs, p.at(prefix + ".conv.weight"),
                                          p.at(prefix + ".conv.bias")));
  Tensor dbc = nn::MatMul(xs, p.at(prefix + ".x_proj.weight"));
  Tensor dt_in = nn::Slice(dbc, 2, 0, c.dt_rank);
  Tensor b = nn::Slice(dbc, 2, c.dt_rank, c.state_dim);
  Tensor cm = nn::Slice(dbc, 2, c.dt_rank + c.state_dim, c.state_dim);
  Tensor delta = nn::Softplus(Linear(dt_in, p, prefix + ".dt_proj.weight",
                                     prefix + ".dt_proj.bias"));
  Tensor a = nn::Scale(nn::Exp(p.at(prefix + ".a_log")), -1.0);
  nn::ScanOptions options;
  options.exact_zoh = c.exact_zoh;
  Tensor y = nn::SelectiveScan(xs, delta, a, b, cm, options);
  y = nn::Add(y, nn::Mul(xs, p.at(prefix + ".d_skip")));
  y = nn::Mul(y, nn::Silu(z));
  return nn::Add(x, nn::MatMul(y, p.at(prefix + ".out_proj.weight")));
}

// Row indices into a [B * N, ...] view for per-item index lists.
std::vector<int> FlatRows(const std::vector<MaskPlan>& masks, bool masked) {
  std::vector<int> rows;
  for (size_t b = 0; b < masks.size(); ++b) {
    const auto& idx = masked ? masks[b].masked : masks[b].visible;
    for (int i : idx) rows.push_back(static_cast<int>(b) * masks[b].n_patches + i);
  }
  return rows;
}

size_t CommonCount(const std::vector<MaskPlan>& masks, bool masked, int n_patches) {
  Require(!masks.empty(), ErrorCode::kInvalidArgument, "no mask plans");
  const size_t count = masked ? masks[0].masked.size() : masks[0].visible.size();
  for (const auto& m : masks) {
    Require(m.n_patches == n_patches, ErrorCode::kShapeMismatch,
            "mask plan covers " + std::to_string(m.n_patches) + " patches, model has " +
                std::to_string(n_patches));
    Require((masked ? m.masked.size() : m.visible.size()) == count,
            ErrorCode::kShapeMismatch, "mask plans in a batch must have equal sizes");
  }
  return count;
}

nlohmann::json AdamWToJson(const nn::AdamWConfig& c) {
  return {{"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps},
          {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm}};
}

}  // namespace

std::string ToString(MaskingStrategy strategy) {
  return strategy == MaskingStrategy::kPatchBased ? "patch_based" : "time_based";
}

std::string ToString(Backbone backbone) {
  return backbone == Backbone::kTransformer ? "transformer" : "mamba";
}

MaskingStrategy ParseStrategy(const std::string& name) {
  if (name == "patch_based" || name == "patch") return MaskingStrategy::kPatchBased;
  if (name == "time_based" || name == "time") return MaskingStrategy::kTimeBased;
  Fail(ErrorCode::kInvalidConfig, "unknown masking strategy '" + name + "'");
}

Backbone ParseBackbone(const std::string& name) {
  if (name == "transformer") return Backbone::kTransformer;
  if (name == "mamba") return Backbone::kMamba;
  Fail(ErrorCode::kInvalidConfig, "unknown backbone '" + name + "'");
}

PatchConfig PatchConfig::ForStrategy(MaskingStrategy strategy, int embed_dim) {
  PatchConfig c;
  c.strategy = strategy;
  c.embed_dim = embed_dim;
  if (strategy == MaskingStrategy::kTimeBased) {
    c.patch_frames = 2;
    c.patch_mels = 128;
  }
  return c;
}

void PatchConfig::Validate() const {
  Require(input_channels > 0 && input_frames > 0 && input_mels > 0 && patch_channels > 0 &&
              patch_frames > 0 && patch_mels > 0 && embed_dim > 0,
          ErrorCode::kInvalidConfig, "patch config dimensions must be positive");
  Require(input_channels % patch_channels == 0 && input_frames % patch_frames == 0 &&
              input_mels % patch_mels == 0,
          ErrorCode::kInvalidConfig,
          "patch " + std::to_string(patch_channels) + "x" + std::to_string(patch_frames) +
              "x" + std::to_string(patch_mels) + " does not divide input " +
              std::to_string(input_channels) + "x" + std::to_string(input_frames) + "x" +
              std::to_string(input_mels));
  Require(patch_channels == input_channels, ErrorCode::kInvalidConfig,
          "patches must span every channel");
  if (strategy == MaskingStrategy::kTimeBased) {
    Require(patch_mels == input_mels, ErrorCode::kInvalidConfig,
            "time_based patches must span the full frequency range");
  } else {
    Require(patch_mels < input_mels, ErrorCode::kInvalidConfig,
            "patch_based patches must split the frequency axis");
  }
}

void EncoderConfig::Validate() const {
  Require(depth >= 0 && dim > 0 && dim % 4 == 0, ErrorCode::kInvalidConfig,
          "encoder needs depth >= 0 and a dim divisible by 4");
  if (backbone == Backbone::kTransformer) {
    Require(heads > 0 && dim % heads == 0, ErrorCode::kInvalidConfig,
            "encoder dim " + std::to_string(dim) + " not divisible by heads " +
                std::to_string(heads));
  } else {
    Require(state_dim > 0 && expand > 0 && conv_kernel > 0 && dt_rank > 0,
            ErrorCode::kInvalidConfig, "mamba sizes must be positive");
  }
}

std::vector<int> DecoderConfig::DefaultWindows(MaskingStrategy strategy) {
  if (strategy == MaskingStrategy::kTimeBased) return {2, 5, 10, 25, 50, 0, 0, 0};
  return {2, 5, 10, 25, 50, 100, 0, 0};
}

void DecoderConfig::Validate(int sequence_length) const {
  Require(depth >= 1 && dim > 0 && dim % 4 == 0 && heads > 0 && dim % heads == 0,
          ErrorCode::kInvalidConfig, "decoder needs depth >= 1 and a dim divisible by 4 and by heads");
  Require(static_cast<int>(window_sizes.size()) == depth, ErrorCode::kInvalidConfig,
          "decoder has " + std::to_string(depth) + " layers but " +
              std::to_string(window_sizes.size()) + " window sizes");
  for (int w : window_sizes) {
    Require(w >= 0 && (w == 0 || sequence_length % w == 0), ErrorCode::kInvalidConfig,
            "window " + std::to_string(w) + " does not divide sequence length " +
                std::to_string(sequence_length));
  }
}

ModelConfig ModelConfig::Toy(Backbone backbone, MaskingStrategy strategy) {
  ModelConfig c;
  c.encoder.backbone = backbone;
  c.patch = PatchConfig::ForStrategy(strategy, c.encoder.dim);
  c.decoder.window_sizes = DecoderConfig::DefaultWindows(strategy);
  return c;
}

ModelConfig ModelConfig::FullScale(Backbone backbone, MaskingStrategy strategy) {
  ModelConfig c;
  c.encoder.backbone = backbone;
  c.encoder.dim = 768;
  c.encoder.depth = 12;
  c.encoder.heads = 12;
  c.encoder.dt_rank = 48;  // ceil(768 / 16)
  c.decoder.dim = 512;
  c.decoder.heads = 16;
  c.patch = PatchConfig::ForStrategy(strategy, c.encoder.dim);
  c.decoder.window_sizes = DecoderConfig::DefaultWindows(strategy);
  return c;
}

void ModelConfig::Validate() const {
  patch.Validate();
  encoder.Validate();
  decoder.Validate(patch.num_patches());
  Require(patch.embed_dim == encoder.dim, ErrorCode::kInvalidConfig,
          "patch embed_dim must equal encoder dim");
  Require(mask_ratio >= 0.0 && mask_ratio < 1.0, ErrorCode::kInvalidConfig,
          "mask ratio must be in [0, 1)");
  Require(std::isfinite(input_mean) && input_std > 0.0 && std::isfinite(input_std),
          ErrorCode::kInvalidConfig, "input_std must be positive");
}

nlohmann::json ModelConfig::ToJson() const {
  return {
      {"patch",
       {{"strategy", ToString(patch.strategy)},
        {"input_dims", {patch.input_channels, patch.input_frames, patch.input_mels}},
        {"patch_dims", {patch.patch_channels, patch.patch_frames, patch.patch_mels}},
        {"embed_dim", patch.embed_dim}}},
      {"encoder",
       {{"backbone", ToString(encoder.backbone)},
        {"depth", encoder.depth},
        {"dim", encoder.dim},
        {"heads", encoder.heads},
        {"mlp_ratio", encoder.mlp_ratio},
        {"state_dim", encoder.state_dim},
        {"expand", encoder.expand},
        {"conv_kernel", encoder.conv_kernel},
        {"dt_rank", encoder.dt_rank},
        {"exact_zoh", encoder.exact_zoh},
        {"cls_token", encoder.cls_token}}},
      {"decoder",
       {{"depth", decoder.depth},
        {"dim", decoder.dim},
        {"heads", decoder.heads},
        {"mlp_ratio", decoder.mlp_ratio},
        {"window_sizes", decoder.window_sizes},
        {"mask_token", "learned"}}},
      {"mask_ratio", mask_ratio},
      {"input_mean", input_mean},
      {"input_std", input_std},
  };
}

ModelConfig ModelConfig::FromJson(const nlohmann::json& j) {
  ModelConfig c;
  try {
    if (j.contains("patch")) {
      const auto& p = j.at("patch");
      c.patch.strategy = ParseStrategy(p.value("strategy", ToString(c.patch.strategy)));
      c.patch = PatchConfig::ForStrategy(c.patch.strategy, p.value("embed_dim", 64));
      if (p.contains("input_dims")) {
        const auto d = p.at("input_dims").get<std::vector<int>>();
        Require(d.size() == 3, ErrorCode::kInvalidConfig, "patch.input_dims needs 3 values");
        c.patch.input_channels = d[0];
        c.patch.input_frames = d[1];
        c.patch.input_mels = d[2];
      }
      if (p.contains("patch_dims")) {
        const auto d = p.at("patch_dims").get<std::vector<int>>();
        Require(d.size() == 3, ErrorCode::kInvalidConfig, "patch.patch_dims needs 3 values");
        c.patch.patch_channels = d[0];
        c.patch.patch_frames = d[1];
        c.patch.patch_mels = d[2];
      }
    }
    c.decoder.window_sizes = DecoderConfig::DefaultWindows(c.patch.strategy);
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      c.encoder.backbone = ParseBackbone(e.value("backbone", ToString(c.encoder.backbone)));
      c.encoder.depth = e.value("depth", c.encoder.depth);
      c.encoder.dim = e.value("dim", c.encoder.dim);
      c.encoder.heads = e.value("heads", c.encoder.heads);
      c.encoder.mlp_ratio = e.value("mlp_ratio", c.encoder.mlp_ratio);
      c.encoder.state_dim = e.value("state_dim", c.encoder.state_dim);
      c.encoder.expand = e.value("expand", c.encoder.expand);
      c.encoder.conv_kernel = e.value("conv_kernel", c.encoder.conv_kernel);
      c.encoder.dt_rank = e.value("dt_rank", c.encoder.dt_rank);
      c.encoder.exact_zoh = e.value("exact_zoh", c.encoder.exact_zoh);
      c.encoder.cls_token = e.value("cls_token", c.encoder.cls_token);
    }
    if (!j.contains("patch") || !j.at("patch").contains("embed_dim")) {
      c.patch.embed_dim = c.encoder.dim;
    }
    if (j.contains("decoder")) {
      const auto& d = j.at("decoder");
      c.decoder.depth = d.value("depth", c.decoder.depth);
      c.decoder.dim = d.value("dim", c.decoder.dim);
      c.decoder.heads = d.value("heads", c.decoder.heads);
      c.decoder.mlp_ratio = d.value("mlp_ratio", c.decoder.mlp_ratio);
      c.decoder.window_sizes = d.value("window_sizes", c.decoder.window_sizes);
    }
    c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
    c.input_mean = j.value("input_mean", c.input_mean);
    c.input_std = j.value("input_std", c.input_std);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kInvalidConfig, std::string("model config: ") + e.what());
  }
  c.Validate();
  return c;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  Require(it != tensors.end(), ErrorCode::kInvalidConfig, "missing parameter " + name);
  return it->second;
}

std::vector<Tensor> ModelParams::List() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : tensors) out.push_back(t);
  return out;
}

size_t ModelParams::NumValues() const {
  size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

ModelParams InitParams(const ModelConfig& config, uint64_t seed) {
  config.Validate();
  ModelParams params;
  Initializer init(params, seed);
  const int d = config.encoder.dim, dd = config.decoder.dim;
  init.Dense("patch_embed", config.patch.patch_size(), d);
  init.Normal("cls_token", {d}, 0.02);
  for (int i = 0; i < config.encoder.depth; ++i) {
    if (config.encoder.backbone == Backbone::kTransformer) {
      init.AttentionBlock(BlockName("encoder", i), d, config.encoder.mlp_ratio);
    } else {
      init.MambaBlock(BlockName("encoder", i), config.encoder);
    }
  }
  init.LayerNormParams("encoder.norm", d);
  init.Dense("decoder.embed", d, dd);
  init.Normal("decoder.mask_token", {dd}, 0.02);
  for (int i = 0; i < config.decoder.depth; ++i) {
    init.AttentionBlock(BlockName("decoder", i), dd, config.decoder.mlp_ratio);
  }
  init.LayerNormParams("decoder.norm", dd);
  // Near-zero head: initial predictions sit at the dataset mean.
  init.Normal("decoder.head.weight", {dd, config.patch.patch_size()}, 0.02);
  init.Constant("decoder.head.bias", {config.patch.patch_size()}, 0.0);
  return params;
}

MaskPlan MakeMask(int n_patches, uint64_t seed, double ratio) {
  Require(n_patches >= 2, ErrorCode::kInvalidArgument, "need at least 2 patches to mask");
  MaskPlan plan;
  plan.n_patches = n_patches;
  plan.seed = seed;
  const int n_masked = static_cast<int>(std::lround(ratio * n_patches));
  std::vector<int> order(n_patches);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first n_masked entries form the masked set.
  for (int i = 0; i < n_masked; ++i) {
    const int j = i + static_cast<int>(rng.UniformInt(static_cast<uint64_t>(n_patches - i)));
    std::swap(order[i], order[j]);
  }
  plan.masked.assign(order.begin(), order.begin() + n_masked);
  plan.visible.assign(order.begin() + n_masked, order.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

MaskPlan NoMask(int n_patches) {
  MaskPlan plan;
  plan.n_patches = n_patches;
  plan.visible.resize(n_patches);
  std::iota(plan.visible.begin(), plan.visible.end(), 0);
  return plan;
}

std::vector<MaskPlan> BatchMasks(int batch, int n_patches, uint64_t seed, double ratio) {
  std::vector<MaskPlan> masks;
  for (int b = 0; b < batch; ++b) {
    masks.push_back(MakeMask(n_patches, DeriveSeed(seed, static_cast<uint64_t>(b)), ratio));
  }
  return masks;
}

Tensor PositionalEmbed(int n_positions, int dim) {
  Require(dim > 0 && dim % 2 == 0, ErrorCode::kInvalidArgument,
          "positional embedding dim must be even, got " + std::to_string(dim));
  std::vector<double> table(static_cast<size_t>(n_positions) * dim);
  for (int p = 0; p < n_positions; ++p) {
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / dim);
      table[static_cast<size_t>(p) * dim + 2 * i] = std::sin(p * freq);
      table[static_cast<size_t>(p) * dim + 2 * i + 1] = std::cos(p * freq);
    }
  }
  return Tensor::FromData({n_positions, dim}, std::move(table));
}

Tensor PatchPositions(const PatchConfig& patch, int dim) {
  Require(dim > 0 && dim % 4 == 0, ErrorCode::kInvalidArgument,
          "patch-grid positions need dim divisible by 4, got " + std::to_string(dim));
  const int nt = patch.time_patches(), nf = patch.freq_patches(), nc = patch.channel_patches();
  const Tensor time = PositionalEmbed(nt, dim / 2);
  const Tensor freq = PositionalEmbed(nf, dim / 2);
  std::vector<double> table;
  table.reserve(static_cast<size_t>(patch.num_patches()) * dim);
  for (int c = 0; c < nc; ++c) {
    for (int t = 0; t < nt; ++t) {
      for (int f = 0; f < nf; ++f) {
        const auto* tr = time.data().data() + static_cast<size_t>(t) * (dim / 2);
        const auto* fr = freq.data().data() + static_cast<size_t>(f) * (dim / 2);
        table.insert(table.end(), tr, tr + dim / 2);
        table.insert(table.end(), fr, fr + dim / 2);
      }
    }
  }
  return Tensor::FromData({patch.num_patches(), dim}, std::move(table));
}

Tensor StackSegments(const std::vector<BinauralSpectrogram>& segments) {
  Require(!segments.empty(), ErrorCode::kEmptyInput, "no segments to stack");
  const auto& first = segments[0];
  std::vector<double> data;
  data.reserve(segments.size() * first.size());
  for (const auto& s : segments) {
    Require(s.channels == first.channels && s.frames == first.frames && s.mels == first.mels,
            ErrorCode::kShapeMismatch, "segments in a batch differ in shape");
    data.insert(data.end(), s.values.begin(), s.values.end());
  }
  return Tensor::FromData(
      {static_cast<int>(segments.size()), first.channels, first.frames, first.mels},
      std::move(data));
}

Tensor Unfold(const Tensor& input, const PatchConfig& config) {
  Require(input.ndim() == 4 && input.dim(1) == config.input_channels &&
              input.dim(2) == config.input_frames && input.dim(3) == config.input_mels,
          ErrorCode::kShapeMismatch,
          "patchify expects [B, " + std::to_string(config.input_channels) + ", " +
              std::to_string(config.input_frames) + ", " + std::to_string(config.input_mels) +
              "], got " + nn::ShapeToString(input.shape()));
  config.Validate();
  const int b = input.dim(0);
  // [B, C, NT, pt, NF, pf] -> [B, NT, NF, C, pt, pf]
  Tensor x = nn::Reshape(input, {b, config.input_channels, config.time_patches(),
                                 config.patch_frames, config.freq_patches(),
                                 config.patch_mels});
  x = nn::Permute(x, {0, 2, 4, 1, 3, 5});
  return nn::Reshape(x, {b, config.num_patches(), config.patch_size()});
}

Tensor Patchify(const Tensor& input, const PatchConfig& config, const ModelParams& params) {
  return Linear(Unfold(input, config), params, "patch_embed.weight", "patch_embed.bias");
}

Tensor Attention(const Tensor& x, const ModelParams& p, const std::string& prefix, int heads,
                 int window) {
  auto proj = [&](const std::string& name) {
    return Linear(x, p, prefix + "." + name + ".weight", prefix + "." + name + ".bias");
  };
  Tensor out = nn::MultiHeadAttention(proj("q"), proj("k"), proj("v"), heads, window);
  return Linear(out, p, prefix + ".o.weight", prefix + ".o.bias");
}

Tensor EncoderBlocks(const Tensor& tokens, const EncoderConfig& config,
                     const ModelParams& params) {
  Tensor x = tokens;
  for (int i = 0; i < config.depth; ++i) {
    if (config.backbone == Backbone::kTransformer) {
      x = TransformerBlock(x, params, BlockName("encoder", i), config.heads, 0);
    } else {
      x = MambaBlock(x, params, BlockName("encoder", i), config);
    }
  }
  return x;
}

EncoderOutput Encode(const Tensor& input, const std::vector<MaskPlan>& masks,
                     const ModelConfig& config, const ModelParams& params) {
  const int n = config.patch.num_patches();
  const int b = input.dim(0);
  Require(static_cast<int>(masks.size()) == b, ErrorCode::kShapeMismatch,
          "one mask plan per batch item required");
  const int visible = static_cast<int>(CommonCount(masks, false, n));
  Require(visible >= 1, ErrorCode::kInvalidArgument, "no visible patches");

  Tensor normalized = nn::AddScalar(nn::Scale(input, 1.0 / config.input_std),
                                    -config.input_mean / config.input_std);
  Tensor patches = nn::Reshape(Unfold(normalized, config.patch), {b * n, -1});
  patches = nn::Reshape(nn::GatherRows(patches, FlatRows(masks, false)), {b, visible, -1});
  Tensor tokens = Linear(patches, params, "patch_embed.weight", "patch_embed.bias");

  std::vector<int> pos_rows;
  for (const auto& m : masks) pos_rows.insert(pos_rows.end(), m.visible.begin(), m.visible.end());
  Tensor pos = nn::GatherRows(PatchPositions(config.patch, config.encoder.dim), pos_rows);
  tokens = nn::Add(tokens, nn::Reshape(pos, {b, visible, config.encoder.dim}));

  if (config.encoder.cls_token) {
    Tensor cls = nn::Add(Tensor::Zeros({b, 1, config.encoder.dim}), params.at("cls_token"));
    tokens = nn::Concat({cls, tokens}, 1);
  }
  Tensor x = EncoderBlocks(tokens, config.encoder, params);
  return {Norm(x, params, "encoder.norm"), config.encoder.cls_token};
}

Tensor Decode(const EncoderOutput& encoded, const std::vector<MaskPlan>& masks,
              const ModelConfig& config, const ModelParams& params) {
  const int n = config.patch.num_patches();
  const int dd = config.decoder.dim;
  const int b = encoded.latents.dim(0);
  const int offset = encoded.has_cls ? 1 : 0;
  const int visible = encoded.latents.dim(1) - offset;
  Require(static_cast<int>(masks.size()) == b &&
              static_cast<int>(CommonCount(masks, false, n)) == visible,
          ErrorCode::kShapeMismatch, "latents do not match the mask plans");
  config.decoder.Validate(n);

  Tensor x = Linear(encoded.latents, params, "decoder.embed.weight", "decoder.embed.bias");
  x = nn::Reshape(nn::Slice(x, 1, offset, visible), {b * visible, dd});
  x = nn::ScatterRows(x, FlatRows(masks, false), b * n);
  std::vector<double> indicator(static_cast<size_t>(b) * n, 0.0);
  for (int row : FlatRows(masks, true)) indicator[row] = 1.0;
  x = nn::Add(x, nn::Mul(Tensor::FromData({b * n, 1}, std::move(indicator)),
                         params.at("decoder.mask_token")));
  x = nn::Add(nn::Reshape(x, {b, n, dd}), PatchPositions(config.patch, dd));
  for (int i = 0; i < config.decoder.depth; ++i) {
    x = TransformerBlock(x, params, BlockName("decoder", i), config.decoder.heads,
                         config.decoder.window_sizes[i]);
  }
  x = Norm(x, params, "decoder.norm");
  Tensor out = Linear(x, params, "decoder.head.weight", "decoder.head.bias");
  return nn::AddScalar(nn::Scale(out, config.input_std), config.input_mean);
}

Tensor MaskedMse(const Tensor& pred, const Tensor& target, const std::vector<MaskPlan>& masks) {
  Require(pred.shape() == target.shape(), ErrorCode::kShapeMismatch,
          "prediction " + nn::ShapeToString(pred.shape()) + " vs target " +
              nn::ShapeToString(target.shape()));
  Require(pred.ndim() == 3 && static_cast<int>(masks.size()) == pred.dim(0),
          ErrorCode::kShapeMismatch, "masked MSE expects [B, N, P] and B mask plans");
  const int n = pred.dim(1);
  Require(CommonCount(masks, true, n) >= 1, ErrorCode::kEmptyInput, "mask is empty");
  const std::vector<int> rows = FlatRows(masks, true);
  const int b = pred.dim(0);
  Tensor p = nn::GatherRows(nn::Reshape(pred, {b * n, -1}), rows);
  Tensor t = nn::GatherRows(nn::Reshape(target.Detach(), {b * n, -1}), rows);
  return nn::Mean(nn::Square(nn::Sub(p, t)));
}

ForwardResult Forward(const Tensor& input, const std::vector<MaskPlan>& masks,
                      const ModelConfig& config, const ModelParams& params) {
  ForwardResult r;
  const EncoderOutput encoded = Encode(input, masks, config, params);
  r.pred = Decode(encoded, masks, config, params);
  {
    nn::NoGradGuard no_grad;
    r.target = Unfold(input.Detach(), config.patch);
  }
  r.loss = MaskedMse(r.pred, r.target, masks);
  return r;
}

StepLog PretrainStep(const std::vector<BinauralSpectrogram>& segments,
                     const ModelConfig& config, ModelParams& params,
                     nn::OptimizerState& state, const nn::AdamWConfig& adamw, int64_t step,
                     double lr, uint64_t mask_seed) {
  const Tensor input = StackSegments(segments);
  const auto masks = BatchMasks(input.dim(0), config.patch.num_patches(), mask_seed,
                                config.mask_ratio);
  ForwardResult r = Forward(input, masks, config, params);
  const double loss = r.loss.item();
  if (!std::isfinite(loss)) {
    Fail(ErrorCode::kNonFinite, "non-finite loss " + std::to_string(loss) + " at step " +
                                    std::to_string(step) + " (lr " + std::to_string(lr) + ")");
  }
  std::vector<Tensor> list = params.List();
  for (auto& t : list) t.ZeroGrad();
  nn::Backward(r.loss);
  try {
    nn::AdamWStep(list, state, adamw, lr);
  } catch (const Error& e) {
    Fail(e.code(), std::string(e.what()) + " at step " + std::to_string(step));
  }
  for (auto& t : list) t.ZeroGrad();
  return {step, lr, loss};
}

TrainConfig TrainConfig::Toy() {
  TrainConfig c;
  c.steps = 300;
  c.warmup_steps = 30;
  c.base_lr = 2e-3;
  c.clips_per_step = 4;
  c.segments_per_clip = 4;
  return c;
}

TrainConfig TrainConfig::FullScale() {
  TrainConfig c;
  c.steps = 180000;
  c.warmup_steps = 10000;
  c.base_lr = 2e-4;
  c.clips_per_step = 32;
  c.segments_per_clip = 16;
  return c;
}

nlohmann::json TrainConfig::ToJson() const {
  return {{"steps", steps},
          {"warmup_steps", warmup_steps},
          {"base_lr", base_lr},
          {"clips_per_step", clips_per_step},
          {"segments_per_clip", segments_per_clip},
          {"seed", seed},
          {"adamw", AdamWToJson(adamw)}};
}

TrainConfig TrainConfig::FromJson(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.clips_per_step = j.value("clips_per_step", c.clips_per_step);
    c.segments_per_clip = j.value("segments_per_clip", c.segments_per_clip);
    c.seed = j.value("seed", c.seed);
    if (j.contains("adamw")) {
      const auto& a = j.at("adamw");
      c.adamw.beta1 = a.value("beta1", c.adamw.beta1);
      c.adamw.beta2 = a.value("beta2", c.adamw.beta2);
      c.adamw.eps = a.value("eps", c.adamw.eps);
      c.adamw.weight_decay = a.value("weight_decay", c.adamw.weight_decay);
      c.adamw.clip_norm = a.value("clip_norm", c.adamw.clip_norm);
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kInvalidConfig, std::string("train config: ") + e.what());
  }
  Require(c.steps >= 1 && c.warmup_steps >= 0 && c.warmup_steps <= c.steps &&
              c.clips_per_step >= 1 && c.segments_per_clip >= 1 && c.base_lr > 0.0,
          ErrorCode::kInvalidConfig, "train config out of range");
  return c;
}

PretrainResult Pretrain(const std::vector<BinauralSpectrogram>& clips,
                        const ModelConfig& config, const TrainConfig& train,
                        const std::function<void(const StepLog&)>& on_step) {
  Require(!clips.empty(), ErrorCode::kEmptyInput, "no clips to pretrain on");
  PretrainResult result;
  result.params = InitParams(config, StageSeed(train.seed, SeedStage::kInit));
  const uint64_t batch_seed = StageSeed(train.seed, SeedStage::kBatches);
  const uint64_t segment_seed = StageSeed(train.seed, SeedStage::kSegments);
  const uint64_t mask_seed = StageSeed(train.seed, SeedStage::kMasks);
  for (int step = 0; step < train.steps; ++step) {
    Rng pick(DeriveSeed(batch_seed, static_cast<uint64_t>(step)));
    std::vector<BinauralSpectrogram> segments;
    for (int j = 0; j < train.clips_per_step; ++j) {
      const size_t clip = pick.UniformInt(clips.size());
      const uint64_t seed =
          DeriveSeed(segment_seed, static_cast<uint64_t>(step) * train.clips_per_step + j);
      auto batch = features::SampleSegments(clips[clip], seed, "", train.segments_per_clip,
                                            config.patch.input_frames);
      for (auto& s : batch.segments) segments.push_back(std::move(s));
    }
    const double lr = nn::CosineWarmupLr(step, train.warmup_steps, train.steps, train.base_lr);
    StepLog log = PretrainStep(segments, config, result.params, result.state, train.adamw,
                               step, lr, DeriveSeed(mask_seed, static_cast<uint64_t>(step)));
    result.log.push_back(log);
    if (on_step) on_step(log);
  }
  return result;
}

double EvaluateMaskedMse(const std::vector<BinauralSpectrogram>& clips,
                         const ModelConfig& config, const ModelParams& params,
                         uint64_t seed, int segments_per_clip) {
  Require(!clips.empty() && segments_per_clip >= 1, ErrorCode::kEmptyInput,
          "evaluation needs clips");
  nn::NoGradGuard no_grad;
  constexpr size_t kChunk = 16;
  std::vector<BinauralSpectrogram> segments;
  for (size_t i = 0; i < clips.size(); ++i) {
    auto batch = features::SampleSegments(clips[i], DeriveSeed(seed, i), "", segments_per_clip,
                                          config.patch.input_frames);
    for (auto& s : batch.segments) segments.push_back(std::move(s));
  }
  double total = 0.0;
  for (size_t start = 0; start < segments.size(); start += kChunk) {
    const size_t end = std::min(segments.size(), start + kChunk);
    std::vector<BinauralSpectrogram> part(segments.begin() + start, segments.begin() + end);
    const Tensor input = StackSegments(part);
    const auto masks = BatchMasks(static_cast<int>(part.size()), config.patch.num_patches(),
                                  DeriveSeed(seed, 1000003 + start), config.mask_ratio);
    total += Forward(input, masks, config, params).loss.item() * part.size();
  }
  return total / segments.size();
}

std::pair<double, double> SpectrogramStats(const std::vector<BinauralSpectrogram>& clips) {
  double sum = 0.0, sq = 0.0;
  size_t count = 0;
  for (const auto& c : clips) {
    for (float v : c.values) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    count += c.values.size();
  }
  Require(count > 0, ErrorCode::kEmptyInput, "no values for statistics");
  const double mean = sum / count;
  const double var = std::max(sq / count - mean * mean, 0.0);
  return {mean, std::sqrt(var)};
}

int EmbeddingWidth(const ModelConfig& config, EmbeddingMode mode) {
  if (mode == EmbeddingMode::kClipLevel) return config.encoder.dim * config.patch.freq_patches();
  return config.encoder.dim;
}

std::vector<double> ExtractEmbedding(const BinauralSpectrogram& clip, const ModelConfig& config,
                                     const ModelParams& params, EmbeddingMode mode) {
  const auto& pc = config.patch;
  Require(clip.channels == pc.input_channels && clip.mels == pc.input_mels,
          ErrorCode::kShapeMismatch, "clip shape does not match the model input");
  Require(clip.frames > 0, ErrorCode::kEmptyInput, "empty clip");
  nn::NoGradGuard no_grad;

  std::vector<BinauralSpectrogram> chunks;
  const int chunk_frames = pc.input_frames;
  if (clip.frames < chunk_frames) {
    BinauralSpectrogram padded(clip.channels, chunk_frames, clip.mels, features::LogFloor());
    for (int c = 0; c < clip.channels; ++c) {
      for (int t = 0; t < clip.frames; ++t) {
        for (int m = 0; m < clip.mels; ++m) padded.at(c, t, m) = clip.at(c, t, m);
      }
    }
    chunks.push_back(std::move(padded));
  } else {
    for (int start = 0; start + chunk_frames <= clip.frames; start += chunk_frames) {
      chunks.push_back(features::CropFrames(clip, start, chunk_frames));
    }
  }
  const int k = static_cast<int>(chunks.size());
  const int n = pc.num_patches();
  const int d = config.encoder.dim;
  const EncoderOutput enc =
      Encode(StackSegments(chunks), std::vector<MaskPlan>(k, NoMask(n)), config, params);
  const auto& lat = enc.latents.data();
  const int rows = enc.latents.dim(1);
  const int offset = enc.has_cls ? 1 : 0;
  auto row = [&](int chunk, int r) { return lat.data() + (static_cast<size_t>(chunk) * rows + r) * d; };

  if (mode == EmbeddingMode::kClipLevel) {
    const int nf = pc.freq_patches(), nt = pc.time_patches();
    std::vector<double> out(static_cast<size_t>(nf) * d, 0.0);
    for (int c = 0; c < k; ++c) {
      for (int t = 0; t < nt; ++t) {
        for (int f = 0; f < nf; ++f) {
          const double* src = row(c, offset + t * nf + f);
          for (int i = 0; i < d; ++i) out[static_cast<size_t>(f) * d + i] += src[i];
        }
      }
    }
    for (double& v : out) v /= static_cast<double>(k) * nt;
    return out;
  }
  std::vector<double> out(d, 0.0);
  if (config.encoder.backbone == Backbone::kTransformer) {
    Require(enc.has_cls, ErrorCode::kInvalidConfig,
            "transformer localization embedding needs the CLS token");
    for (int c = 0; c < k; ++c) {
      const double* src = row(c, 0);
      for (int i = 0; i < d; ++i) out[i] += src[i];
    }
    for (double& v : out) v /= k;
  } else {
    for (int c = 0; c < k; ++c) {
      for (int r = 0; r < n; ++r) {
        const double* src = row(c, offset + r);
        for (int i = 0; i < d; ++i) out[i] += src[i];
      }
    }
    for (double& v : out) v /= static_cast<double>(k) * n;
  }
  return out;
}

nn::Checkpoint ToCheckpoint(const ModelConfig& config, const ModelParams& params,
                            const nn::OptimizerState* state, const nlohmann::json& extra) {
  nn::Checkpoint ckpt;
  size_t i = 0;
  for (const auto& [name, t] : params.tensors) {
    ckpt.arrays["param/" + name] = {t.shape(), t.data()};
    if (state && !state->m.empty()) {
      ckpt.arrays["adam_m/" + name] = {t.shape(), state->m[i]};
      ckpt.arrays["adam_v/" + name] = {t.shape(), state->v[i]};
    }
    ++i;
  }
  nlohmann::json meta = {{"model", config.ToJson()}, {"extra", extra}};
  if (state) meta["optimizer_step"] = state->step_count;
  ckpt.metadata_json = meta.dump();
  return ckpt;
}

void FromCheckpoint(const nn::Checkpoint& checkpoint, ModelConfig& config, ModelParams& params,
                    nn::OptimizerState* state) {
  const auto meta = nlohmann::json::parse(checkpoint.metadata_json);
  Require(meta.contains("model"), ErrorCode::kCorruptHeader, "checkpoint has no model config");
  config = ModelConfig::FromJson(meta.at("model"));
  const ModelParams reference = InitParams(config, 0);
  params.tensors.clear();
  for (const auto& [name, t] : reference.tensors) {
    auto it = checkpoint.arrays.find("param/" + name);
    Require(it != checkpoint.arrays.end(), ErrorCode::kCorruptPayload,
            "checkpoint lacks parameter " + name);
    Require(it->second.shape == t.shape(), ErrorCode::kShapeMismatch,
            "parameter " + name + " has shape " + nn::ShapeToString(it->second.shape) +
                ", config expects " + nn::ShapeToString(t.shape()));
    params.tensors.emplace(name, Tensor::FromData(t.shape(), it->second.data, true));
  }
  if (state) {
    *state = nn::OptimizerState{};
    state->step_count = meta.value("optimizer_step", int64_t{0});
    for (const auto& [name, t] : params.tensors) {
      auto m = checkpoint.arrays.find("adam_m/" + name);
      auto v = checkpoint.arrays.find("adam_v/" + name);
      if (m == checkpoint.arrays.end() || v == checkpoint.arrays.end()) {
        *state = nn::OptimizerState{};
        state->step_count = meta.value("optimizer_step", int64_t{0});
        break;
      }
      state->m.push_back(m->second.data);
      state->v.push_back(v->second.data);
    }
  }
}

}  // namespace gram::model
