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

#include "gram/nn/optim.h"

#include <cmath>

namespace gram::nn {

double GlobalGradNorm(const std::vector<Tensor>& params) {
  double ss = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad_or_empty()) ss += g * g;
  }
  return std::sqrt(ss);
}

double ClipGradNorm(std::vector<Tensor>& params, double max_norm) {
  const double norm = GlobalGradNorm(params);
  if (max_norm <= 0.0 || norm <= max_norm) return 1.0;
  const double scale = max_norm / norm;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (double& g : p.grad()) g *= scale;
  }
  return scale;
}

StepReport AdamWStep(std::vector<Tensor>& params, OptimizerState& state,
                     const AdamWConfig& config, double lr) {
  for (const auto& p : params) {
    for (double g : p.grad_or_empty()) {
      if (!std::isfinite(g)) {
        Fail(ErrorCode::kNonFinite, "non-finite gradient; step rejected");
      }
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  Require(state.m.size() == params.size(), ErrorCode::kShapeMismatch,
          "optimizer state holds " + std::to_string(state.m.size()) +
              " moments for " + std::to_string(params.size()) + " parameters");
  for (size_t i = 0; i < params.size(); ++i) {
    Require(state.m[i].size() == params[i].numel() &&
                state.v[i].size() == params[i].numel(),
            ErrorCode::kShapeMismatch, "moment size differs from parameter size");
  }

  StepReport report;
  report.grad_norm = GlobalGradNorm(params);
  if (config.clip_norm > 0.0 && report.grad_norm > config.clip_norm) {
    report.clip_scale = config.clip_norm / report.grad_norm;
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].data();
    const auto& grad = params[i].grad_or_empty();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < value.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j] * report.clip_scale;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      value[j] -= lr * config.weight_decay * value[j];
      value[j] -= lr * (m[j] / bias1) / (std::sqrt(v[j] / bias2) + config.eps);
    }
  }
  return report;
}

double CosineWarmupLr(int64_t step, int64_t warmup, int64_t total_steps,
                      double base_lr) {
  Require(step >= 0 && step <= total_steps, ErrorCode::kOutOfRange,
          "step " + std::to_string(step) + " outside [0, " +
              std::to_string(total_steps) + "]");
  Require(warmup >= 0, ErrorCode::kInvalidArgument, "warmup must be >= 0");
  if (step < warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total_steps <= warmup) return base_lr;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(kPi * progress));
}

}  // namespace gram::nn
