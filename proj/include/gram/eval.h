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

#ifndef GRAM_EVAL_H_
#define GRAM_EVAL_H_

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gram/nn/optim.h"
#include "gram/nn/tensor.h"
#include "json.hpp"

namespace gram::eval {

using Matrix = std::vector<std::vector<double>>;  // rows of equal width
using Vec3 = std::array<double, 3>;

enum class ProbeKind { kClassification, kRegressionUnitSphere };
enum class RegressionLoss { kCosine, kMse };

struct ProbeConfig {
  ProbeKind kind = ProbeKind::kClassification;
  int hidden = 256;  // 0 = linear probe
  int epochs = 200;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double validation_fraction = 0.1;
  int patience = 20;  // epochs without validation improvement
  RegressionLoss regression_loss = RegressionLoss::kCosine;
  uint64_t seed = 0;

  nlohmann::json ToJson() const;
  static ProbeConfig FromJson(const nlohmann::json& j);
};

struct Probe {
  ProbeConfig config;
  int input_dim = 0;
  int output_dim = 0;
  // Per-feature standardization fitted on the training split.
  std::vector<double> mean;
  std::vector<double> inv_std;
  std::map<std::string, nn::Tensor> params;
  // Training summary.
  int epochs_run = 0;
  double best_validation_loss = 0.0;
};

// Softmax classifier on frozen embeddings. Labels are class indices in
// [0, num_classes). Throws kShapeMismatch for ragged rows or a label count
// that differs from the row count.
Probe TrainClassifier(const Matrix& x, const std::vector<int>& labels, int num_classes,
                      const ProbeConfig& config);
// Three outputs normalized to unit length, trained on (1 - cosine) or,
// with RegressionLoss::kMse, on squared coordinate error.
Probe TrainDirectionRegressor(const Matrix& x, const std::vector<Vec3>& targets,
                              const ProbeConfig& config);

std::vector<int> PredictClasses(const Probe& probe, const Matrix& x);
std::vector<Vec3> PredictDirections(const Probe& probe, const Matrix& x);

double Accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

// Angle in degrees between unit vector v and the direction of v_hat
// (normalized internally). Throws kInvalidArgument for a zero vector.
double DoaError(const Vec3& v, const Vec3& v_hat);

struct DoaSummary {
  std::vector<double> errors_deg;
  double median_deg = 0.0;
  double mean_deg = 0.0;
};
DoaSummary SummarizeDoa(const std::vector<Vec3>& truth, const std::vector<Vec3>& predicted);

struct PairedOutcomes {
  int64_t n11 = 0;  // both correct
  int64_t n10 = 0;  // only A correct
  int64_t n01 = 0;  // only B correct
  int64_t n00 = 0;  // both wrong
};

PairedOutcomes CountOutcomes(const std::vector<bool>& a_correct,
                             const std::vector<bool>& b_correct);

struct McNemarResult {
  double p_value = 1.0;
  bool exact = true;           // binomial test (discordant pairs < 25)
  bool no_discordant = false;  // p = 1 by convention
  double statistic = 0.0;      // continuity-corrected chi-squared, if used
};

inline constexpr int64_t kMcNemarExactBelow = 25;

// Two-sided McNemar test on the discordant pairs.
McNemarResult McNemar(const PairedOutcomes& outcomes);

struct BhResult {
  std::vector<double> adjusted;
  std::vector<bool> rejected;
};

// Benjamini-Hochberg adjustment; rejections where adjusted <= q. Throws
// kOutOfRange for p outside [0, 1].
BhResult FdrBh(const std::vector<double>& p_values, double q = 0.05);

// "§" for p < 0.001, "‡" for p < 0.01, "†" for p < 0.05, otherwise empty.
std::string SignificanceMarker(double p);

int64_t SamplesSeen(int64_t batch_size, int64_t steps_per_epoch, int64_t epochs);
int64_t SamplesSeen(int64_t batch_size, int64_t total_steps);

struct ItemOutcome {
  std::string id;
  bool correct = false;
};

struct TaskResult {
  std::string task;
  std::string metric;
  double value = 0.0;
  int64_t n = 0;
  std::vector<double> fold_values;
  std::vector<ItemOutcome> per_item;

  nlohmann::json ToJson() const;
  static TaskResult FromJson(const nlohmann::json& j);
};

// Pairs two result sets item by item (matched by id). Throws
// kInvalidArgument when the id sets differ.
PairedOutcomes PairResults(const TaskResult& a, const TaskResult& b);

// McNemar per task pair, BH across pairs. Output:
// {pairs: [...], raw_p: [...], adjusted_p: [...], significant: [...]}.
nlohmann::json CompareResults(const std::vector<TaskResult>& a,
                              const std::vector<TaskResult>& b, double q = 0.05);

}  // namespace gram::eval

#endif  // GRAM_EVAL_H_
