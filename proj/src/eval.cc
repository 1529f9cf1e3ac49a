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

#include "gram/eval.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "gram/nn/ops.h"

namespace gram::eval {
namespace {

using nn::Tensor;

int CheckRows(const Matrix& x) {
  Require(!x.empty(), ErrorCode::kEmptyInput, "no embeddings");
  const size_t width = x[0].size();
  Require(width > 0, ErrorCode::kShapeMismatch, "embeddings have zero width");
  for (size_t i = 0; i < x.size(); ++i) {
    Require(x[i].size() == width, ErrorCode::kShapeMismatch,
            "embedding " + std::to_string(i) + " has width " + std::to_string(x[i].size()) +
                ", expected " + std::to_string(width));
  }
  return static_cast<int>(width);
}

void FitStandardizer(Probe& probe, const Matrix& x, const std::vector<int>& rows) {
  const int d = probe.input_dim;
  probe.mean.assign(d, 0.0);
  probe.inv_std.assign(d, 1.0);
  for (int r : rows) {
    for (int j = 0; j < d; ++j) probe.mean[j] += x[r][j];
  }
  for (double& m : probe.mean) m /= rows.size();
  std::vector<double> var(d, 0.0);
  for (int r : rows) {
    for (int j = 0; j < d; ++j) var[j] += (x[r][j] - probe.mean[j]) * (x[r][j] - probe.mean[j]);
  }
  for (int j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / rows.size());
    probe.inv_std[j] = sd > 1e-8 ? 1.0 / sd : 1.0;
  }
}

Tensor Inputs(const Probe& probe, const Matrix& x, const std::vector<int>& rows) {
  const int d = probe.input_dim;
  std::vector<double> data;
  data.reserve(rows.size() * d);
  for (int r : rows) {
    Require(static_cast<int>(x[r].size()) == d, ErrorCode::kShapeMismatch,
            "embedding width " + std::to_string(x[r].size()) + " does not match probe width " +
                std::to_string(d));
    for (int j = 0; j < d; ++j) data.push_back((x[r][j] - probe.mean[j]) * probe.inv_std[j]);
  }
  return Tensor::FromData({static_cast<int>(rows.size()), d}, std::move(data));
}

void InitProbe(Probe& probe) {
  Rng rng(DeriveSeed(probe.config.seed, 1));
  auto dense = [&](const std::string& name, int in, int out) {
    const double bound = std::sqrt(6.0 / (in + out));
    std::vector<double> w(static_cast<size_t>(in) * out);
    for (double& v : w) v = rng.Uniform(-bound, bound);
    probe.params[name + ".weight"] = Tensor::FromData({in, out}, std::move(w), true);
    probe.params[name + ".bias"] = Tensor::Zeros({out}, true);
  };
  if (probe.config.hidden > 0) {
    dense("hidden", probe.input_dim, probe.config.hidden);
    dense("out", probe.config.hidden, probe.output_dim);
  } else {
    dense("out", probe.input_dim, probe.output_dim);
  }
}

Tensor ProbeForward(const Probe& probe, const Tensor& x) {
  auto dense = [&](const Tensor& in, const std::string& name) {
    return nn::Add(nn::MatMul(in, probe.params.at(name + ".weight")),
                   probe.params.at(name + ".bias"));
  };
  Tensor h = x;
  if (probe.config.hidden > 0) h = nn::Gelu(dense(h, "hidden"));
  return dense(h, "out");
}

// Loss of a batch; `targets` holds class indices or 3-vectors.
using LossFn = std::function<Tensor(const Tensor& output, const std::vector<int>& rows)>;

Probe Fit(Probe probe, const Matrix& x, const LossFn& loss_fn) {
  const auto& cfg = probe.config;
  Require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.lr > 0.0 && cfg.hidden >= 0,
          ErrorCode::kInvalidConfig, "probe config out of range");
  const int n = static_cast<int>(x.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(DeriveSeed(cfg.seed, 2));
  for (int i = n - 1; i > 0; --i) {
    std::swap(order[i], order[split_rng.UniformInt(static_cast<uint64_t>(i) + 1)]);
  }
  int n_val = static_cast<int>(std::floor(n * cfg.validation_fraction));
  if (n - n_val < 1) n_val = 0;
  std::vector<int> val(order.begin(), order.begin() + n_val);
  std::vector<int> train(order.begin() + n_val, order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());

  FitStandardizer(probe, x, train);
  InitProbe(probe);
  std::vector<Tensor> list;
  for (auto& [name, t] : probe.params) list.push_back(t);
  nn::OptimizerState state;
  nn::AdamWConfig adamw;
  adamw.weight_decay = cfg.weight_decay;

  const Tensor x_val = n_val > 0 ? Inputs(probe, x, val) : Tensor();
  std::map<std::string, std::vector<double>> best;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> shuffled = train;
    Rng rng(DeriveSeed(cfg.seed, 100 + static_cast<uint64_t>(epoch)));
    for (int i = static_cast<int>(shuffled.size()) - 1; i > 0; --i) {
      std::swap(shuffled[i], shuffled[rng.UniformInt(static_cast<uint64_t>(i) + 1)]);
    }
    for (size_t start = 0; start < shuffled.size(); start += cfg.batch_size) {
      const size_t end = std::min(shuffled.size(), start + cfg.batch_size);
      std::vector<int> rows(shuffled.begin() + start, shuffled.begin() + end);
      Tensor loss = loss_fn(ProbeForward(probe, Inputs(probe, x, rows)), rows);
      for (auto& t : list) t.ZeroGrad();
      nn::Backward(loss);
      nn::AdamWStep(list, state, adamw, cfg.lr);
    }
    probe.epochs_run = epoch + 1;
    if (n_val == 0) continue;
    double val_loss;
    {
      nn::NoGradGuard no_grad;
      val_loss = loss_fn(ProbeForward(probe, x_val), val).item();
    }
    if (val_loss < best_loss - 1e-12) {
      best_loss = val_loss;
      since_best = 0;
      for (const auto& [name, t] : probe.params) best[name] = t.data();
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (auto& t : list) t.ZeroGrad();
  if (!best.empty()) {
    for (auto& [name, t] : probe.params) t.data() = best[name];
    probe.best_validation_loss = best_loss;
  }
  return probe;
}

}  // namespace

nlohmann::json ProbeConfig::ToJson() const {
  return {{"kind", kind == ProbeKind::kClassification ? "classification"
                                                      : "regression_unit_sphere"},
          {"hidden", hidden},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"validation_fraction", validation_fraction},
          {"patience", patience},
          {"regression_loss", regression_loss == RegressionLoss::kCosine ? "cosine" : "mse"},
          {"seed", seed}};
}

ProbeConfig ProbeConfig::FromJson(const nlohmann::json& j) {
  ProbeConfig c;
  try {
    const std::string kind = j.value("kind", std::string("classification"));
    if (kind == "classification") {
      c.kind = ProbeKind::kClassification;
    } else if (kind == "regression_unit_sphere") {
      c.kind = ProbeKind::kRegressionUnitSphere;
    } else {
      Fail(ErrorCode::kInvalidConfig, "unknown probe kind '" + kind + "'");
    }
    c.hidden = j.value("hidden", c.hidden);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.patience = j.value("patience", c.patience);
    const std::string loss = j.value("regression_loss", std::string("cosine"));
    Require(loss == "cosine" || loss == "mse", ErrorCode::kInvalidConfig,
            "regression_loss must be cosine or mse");
    c.regression_loss = loss == "cosine" ? RegressionLoss::kCosine : RegressionLoss::kMse;
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kInvalidConfig, std::string("probe config: ") + e.what());
  }
  return c;
}

Probe TrainClassifier(const Matrix& x, const std::vector<int>& labels, int num_classes,
                      const ProbeConfig& config) {
  const int width = CheckRows(x);
  Require(labels.size() == x.size(), ErrorCode::kShapeMismatch,
          std::to_string(labels.size()) + " labels for " + std::to_string(x.size()) +
              " embeddings");
  Require(num_classes >= 2, ErrorCode::kInvalidArgument, "need at least 2 classes");
  for (int l : labels) {
    Require(l >= 0 && l < num_classes, ErrorCode::kOutOfRange,
            "label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  Probe probe;
  probe.config = config;
  probe.config.kind = ProbeKind::kClassification;
  probe.input_dim = width;
  probe.output_dim = num_classes;
  return Fit(std::move(probe), x, [&](const Tensor& out, const std::vector<int>& rows) {
    std::vector<int> y;
    for (int r : rows) y.push_back(labels[r]);
    return nn::CrossEntropy(out, y);
  });
}

Probe TrainDirectionRegressor(const Matrix& x, const std::vector<Vec3>& targets,
                              const ProbeConfig& config) {
  const int width = CheckRows(x);
  Require(targets.size() == x.size(), ErrorCode::kShapeMismatch,
          std::to_string(targets.size()) + " targets for " + std::to_string(x.size()) +
              " embeddings");
  Probe probe;
  probe.config = config;
  probe.config.kind = ProbeKind::kRegressionUnitSphere;
  probe.input_dim = width;
  probe.output_dim = 3;
  const bool cosine = config.regression_loss == RegressionLoss::kCosine;
  return Fit(std::move(probe), x, [&](const Tensor& out, const std::vector<int>& rows) {
    std::vector<double> t;
    for (int r : rows) t.insert(t.end(), targets[r].begin(), targets[r].end());
    const Tensor target = Tensor::FromData({static_cast<int>(rows.size()), 3}, std::move(t));
    if (cosine) {
      // mean(1 - cos) = 1 - sum(u . t) / B
      Tensor dots = nn::Sum(nn::Mul(nn::NormalizeRows(out), target));
      return nn::AddScalar(nn::Scale(dots, -1.0 / rows.size()), 1.0);
    }
    return nn::Mean(nn::Square(nn::Sub(out, target)));
  });
}

std::vector<int> PredictClasses(const Probe& probe, const Matrix& x) {
  CheckRows(x);
  nn::NoGradGuard no_grad;
  std::vector<int> rows(x.size());
  std::iota(rows.begin(), rows.end(), 0);
  const Tensor out = ProbeForward(probe, Inputs(probe, x, rows));
  std::vector<int> pred;
  const int k = probe.output_dim;
  for (size_t i = 0; i < x.size(); ++i) {
    const double* row = out.data().data() + i * k;
    pred.push_back(static_cast<int>(std::max_element(row, row + k) - row));
  }
  return pred;
}

std::vector<Vec3> PredictDirections(const Probe& probe, const Matrix& x) {
  CheckRows(x);
  nn::NoGradGuard no_grad;
  std::vector<int> rows(x.size());
  std::iota(rows.begin(), rows.end(), 0);
  const Tensor out = ProbeForward(probe, Inputs(probe, x, rows));
  std::vector<Vec3> pred;
  for (size_t i = 0; i < x.size(); ++i) {
    const double* r = out.data().data() + i * 3;
    const double norm = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    // A zero output has no direction; fall back to straight ahead.
    if (norm > 0.0) {
      pred.push_back({r[0] / norm, r[1] / norm, r[2] / norm});
    } else {
      pred.push_back({1.0, 0.0, 0.0});
    }
  }
  return pred;
}

double Accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  Require(predicted.size() == truth.size() && !truth.empty(), ErrorCode::kShapeMismatch,
          "prediction and label counts differ");
  size_t hits = 0;
  for (size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / truth.size();
}

double DoaError(const Vec3& v, const Vec3& v_hat) {
  const double nv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  const double nh = std::sqrt(v_hat[0] * v_hat[0] + v_hat[1] * v_hat[1] + v_hat[2] * v_hat[2]);
  Require(nv > 0.0 && nh > 0.0 && std::isfinite(nv) && std::isfinite(nh),
          ErrorCode::kInvalidArgument, "DoA error needs nonzero finite vectors");
  double dot = 0.0;
  for (int i = 0; i < 3; ++i) dot += (v[i] / nv) * (v_hat[i] / nh);
  return RadToDeg(std::acos(std::clamp(dot, -1.0, 1.0)));
}

DoaSummary SummarizeDoa(const std::vector<Vec3>& truth, const std::vector<Vec3>& predicted) {
  Require(truth.size() == predicted.size() && !truth.empty(), ErrorCode::kShapeMismatch,
          "truth and prediction counts differ");
  DoaSummary s;
  for (size_t i = 0; i < truth.size(); ++i) s.errors_deg.push_back(DoaError(truth[i], predicted[i]));
  std::vector<double> sorted = s.errors_deg;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  s.median_deg = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  s.mean_deg = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  return s;
}

PairedOutcomes CountOutcomes(const std::vector<bool>& a_correct,
                             const std::vector<bool>& b_correct) {
  Require(a_correct.size() == b_correct.size(), ErrorCode::kShapeMismatch,
          "outcome lists differ in length");
  PairedOutcomes o;
  for (size_t i = 0; i < a_correct.size(); ++i) {
    if (a_correct[i] && b_correct[i]) ++o.n11;
    else if (a_correct[i]) ++o.n10;
    else if (b_correct[i]) ++o.n01;
    else ++o.n00;
  }
  return o;
}

McNemarResult McNemar(const PairedOutcomes& o) {
  Require(o.n11 >= 0 && o.n10 >= 0 && o.n01 >= 0 && o.n00 >= 0, ErrorCode::kInvalidArgument,
          "contingency counts must be nonnegative");
  McNemarResult r;
  const int64_t n = o.n10 + o.n01;
  if (n == 0) {
    r.no_discordant = true;
    return r;
  }
  if (n < kMcNemarExactBelow) {
    // 2 * P(X <= min) for X ~ Binomial(n, 1/2), with integer coefficients.
    const int64_t k = std::min(o.n10, o.n01);
    uint64_t tail = 0, coef = 1;
    for (int64_t i = 0; i <= k; ++i) {
      tail += coef;
      coef = coef * static_cast<uint64_t>(n - i) / static_cast<uint64_t>(i + 1);
    }
    r.p_value = std::min(1.0, 2.0 * std::ldexp(static_cast<double>(tail), -static_cast<int>(n)));
    return r;
  }
  r.exact = false;
  const double d = std::max<double>(0.0, std::abs(static_cast<double>(o.n10 - o.n01)) - 1.0);
  r.statistic = d * d / static_cast<double>(n);
  r.p_value = std::erfc(std::sqrt(r.statistic / 2.0));
  return r;
}

BhResult FdrBh(const std::vector<double>& p_values, double q) {
  for (double p : p_values) {
    Require(p >= 0.0 && p <= 1.0, ErrorCode::kOutOfRange,
            "p-value " + std::to_string(p) + " outside [0, 1]");
  }
  const size_t m = p_values.size();
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return p_values[a] < p_values[b]; });
  BhResult r;
  r.adjusted.assign(m, 0.0);
  r.rejected.assign(m, false);
  double running = 1.0;
  for (size_t rank = m; rank-- > 0;) {
    const size_t i = order[rank];
    running = std::min(running, p_values[i] * static_cast<double>(m) / (rank + 1));
    // p * m / rank >= p in exact arithmetic; keep rounding from undercutting it.
    r.adjusted[i] = std::max(running, p_values[i]);
  }
  for (size_t i = 0; i < m; ++i) r.rejected[i] = r.adjusted[i] <= q;
  return r;
}

std::string SignificanceMarker(double p) {
  if (p < 0.001) return "§";
  if (p < 0.01) return "‡";
  if (p < 0.05) return "†";
  return "";
}

int64_t SamplesSeen(int64_t batch_size, int64_t steps_per_epoch, int64_t epochs) {
  Require(batch_size >= 0 && steps_per_epoch >= 0 && epochs >= 0, ErrorCode::kInvalidArgument,
          "sample accounting needs nonnegative inputs");
  return batch_size * steps_per_epoch * epochs;
}

int64_t SamplesSeen(int64_t batch_size, int64_t total_steps) {
  return SamplesSeen(batch_size, total_steps, 1);
}

nlohmann::json TaskResult::ToJson() const {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : per_item) items.push_back({{"id", it.id}, {"correct", it.correct}});
  return {{"task", task}, {"metric", metric}, {"value", value}, {"n", n},
          {"fold_values", fold_values}, {"per_item", items}};
}

TaskResult TaskResult::FromJson(const nlohmann::json& j) {
  TaskResult r;
  try {
    r.task = j.at("task").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    r.n = j.at("n").get<int64_t>();
    r.fold_values = j.value("fold_values", std::vector<double>{});
    for (const auto& it : j.value("per_item", nlohmann::json::array())) {
      r.per_item.push_back({it.at("id").get<std::string>(), it.at("correct").get<bool>()});
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kInvalidConfig, std::string("results file: ") + e.what());
  }
  return r;
}

PairedOutcomes PairResults(const TaskResult& a, const TaskResult& b) {
  std::map<std::string, bool> b_items;
  for (const auto& it : b.per_item) b_items[it.id] = it.correct;
  Require(a.per_item.size() == b.per_item.size() && b_items.size() == b.per_item.size(),
          ErrorCode::kInvalidArgument,
          "task '" + a.task + "': item sets differ in size or contain duplicate ids");
  std::vector<bool> ca, cb;
  for (const auto& it : a.per_item) {
    auto found = b_items.find(it.id);
    Require(found != b_items.end(), ErrorCode::kInvalidArgument,
            "task '" + a.task + "': item '" + it.id + "' missing from the second result");
    ca.push_back(it.correct);
    cb.push_back(found->second);
  }
  return CountOutcomes(ca, cb);
}

nlohmann::json CompareResults(const std::vector<TaskResult>& a, const std::vector<TaskResult>& b,
                              double q) {
  Require(a.size() == b.size() && !a.empty(), ErrorCode::kInvalidArgument,
          "need matching, nonempty result lists");
  std::vector<double> raw;
  std::vector<McNemarResult> tests;
  std::vector<PairedOutcomes> counts;
  for (size_t i = 0; i < a.size(); ++i) {
    Require(a[i].task == b[i].task, ErrorCode::kInvalidArgument,
            "result " + std::to_string(i) + " pairs task '" + a[i].task + "' with '" +
                b[i].task + "'");
    counts.push_back(PairResults(a[i], b[i]));
    tests.push_back(McNemar(counts.back()));
    raw.push_back(tests.back().p_value);
  }
  const BhResult bh = FdrBh(raw, q);
  nlohmann::json pairs = nlohmann::json::array();
  for (size_t i = 0; i < a.size(); ++i) {
    const auto& c = counts[i];
    pairs.push_back({{"task", a[i].task},
                     {"value_a", a[i].value},
                     {"value_b", b[i].value},
                     {"n11", c.n11},
                     {"n10", c.n10},
                     {"n01", c.n01},
                     {"n00", c.n00},
                     {"test", tests[i].exact ? "exact_binomial" : "chi_squared_cc"},
                     {"no_discordant_pairs", tests[i].no_discordant},
                     {"raw_p", raw[i]},
                     {"adjusted_p", bh.adjusted[i]},
                     {"significant", static_cast<bool>(bh.rejected[i])},
                     {"marker", SignificanceMarker(bh.adjusted[i])}});
  }
  std::vector<bool> significant(bh.rejected.begin(), bh.rejected.end());
  return {{"pairs", pairs}, {"raw_p", raw}, {"adjusted_p", bh.adjusted},
          {"significant", significant}, {"q", q}};
}

}  // namespace gram::eval
