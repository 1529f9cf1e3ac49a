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

#ifndef GRAM_NN_OPTIM_H_
#define GRAM_NN_OPTIM_H_

#include <cstdint>
#include <vector>

#include "gram/nn/tensor.h"

namespace gram::nn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  // Global-norm clipping threshold; <= 0 disables clipping.
  double clip_norm = 1.0;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  int64_t step_count = 0;
};

struct StepReport {
  double grad_norm = 0.0;     // before clipping
  double clip_scale = 1.0;    // factor applied to every gradient
};

// Global L2 norm over all parameter gradients (missing gradients count as 0).
double GlobalGradNorm(const std::vector<Tensor>& params);

// Scales gradients in place so their global norm is at most `max_norm`.
// Returns the applied scale.
double ClipGradNorm(std::vector<Tensor>& params, double max_norm);

// One AdamW update using each parameter's accumulated gradient. Clipping
// runs first; weight decay p <- p - lr * wd * p is decoupled from the Adam
// step. Throws kNonFinite (leaving params and state untouched) when any
// gradient is NaN or infinite.
StepReport AdamWStep(std::vector<Tensor>& params, OptimizerState& state,
                     const AdamWConfig& config, double lr);

// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at
// total_steps. Throws kOutOfRange for step outside [0, total_steps].
double CosineWarmupLr(int64_t step, int64_t warmup, int64_t total_steps,
                      double base_lr = 0.0002);

}  // namespace gram::nn

#endif  // GRAM_NN_OPTIM_H_
