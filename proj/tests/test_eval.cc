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

#include <gtest/gtest.h>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gram/eval.h"
#include "test_util.h"

namespace gram::eval {
namespace {

using gram::testing::CodeOf;

// Two-sided exact McNemar p from Boost's binomial CDF.
double BoostExact(int64_t n10, int64_t n01) {
  const int64_t n = n10 + n01;
  boost::math::binomial_distribution<double> dist(static_cast<double>(n), 0.5);
  const double tail = boost::math::cdf(dist, static_cast<double>(std::min(n10, n01)));
  return std::min(1.0, 2.0 * tail);
}

double BoostChi2(int64_t n10, int64_t n01) {
  const double d = std::max(0.0, std::abs(double(n10 - n01)) - 1.0);
  const double stat = d * d / double(n10 + n01);
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), stat));
}

TEST(McNemar, ReferenceExamples) {
  EXPECT_NEAR(McNemar({10, 5, 15, 3}).p_value, 0.0414, 5e-5);
  EXPECT_NEAR(McNemar({0, 5, 15, 0}).p_value, BoostExact(5, 15), 1e-12);
  EXPECT_TRUE(McNemar({0, 5, 15, 0}).exact);
  EXPECT_EQ(McNemar({3, 7, 7, 4}).p_value, 1.0);
  // 30 discordant pairs take the chi-squared branch, still far below 1e-6.
  const McNemarResult big = McNemar({0, 0, 30, 0});
  EXPECT_FALSE(big.exact);
  EXPECT_LT(big.p_value, 1e-6);
  EXPECT_NEAR(big.statistic, 29.0 * 29.0 / 30.0, 1e-12);
}

TEST(McNemar, MatchesBoostAcrossBranches) {
  for (int64_t n10 = 0; n10 <= 40; n10 += 3) {
    for (int64_t n01 = 0; n01 <= 40; n01 += 4) {
      if (n10 + n01 == 0) continue;
      const McNemarResult r = McNemar({7, n10, n01, 2});
      const bool exact = n10 + n01 < kMcNemarExactBelow;
      EXPECT_EQ(r.exact, exact);
      const double want = exact ? BoostExact(n10, n01) : BoostChi2(n10, n01);
      EXPECT_NEAR(r.p_value, want, 1e-10 * std::max(1.0, want)) << n10 << "/" << n01;
    }
  }
}

TEST(McNemar, NoDiscordantPairsFlagged) {
  const McNemarResult r = McNemar({10, 0, 0, 5});
  EXPECT_TRUE(r.no_discordant);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(McNemar, SymmetryProperties) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const PairedOutcomes o{static_cast<int64_t>(rng.UniformInt(50)), static_cast<int64_t>(rng.UniformInt(40)),
                           static_cast<int64_t>(rng.UniformInt(40)), static_cast<int64_t>(rng.UniformInt(50))};
    const double p = McNemar(o).p_value;
    EXPECT_EQ(p, McNemar({o.n00, o.n10, o.n01, o.n11}).p_value);
    EXPECT_EQ(p, McNemar({o.n11, o.n01, o.n10, o.n00}).p_value);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(CountOutcomes, Tallies) {
  const PairedOutcomes o = CountOutcomes({true, true, false, false, true}, {true, false, true, false, false});
  EXPECT_EQ(o.n11, 1);
  EXPECT_EQ(o.n10, 2);
  EXPECT_EQ(o.n01, 1);
  EXPECT_EQ(o.n00, 1);
  EXPECT_EQ(CodeOf([] { CountOutcomes({true}, {true, false}); }), ErrorCode::kShapeMismatch);
}

TEST(FdrBh, WorkedExample) {
  const BhResult r = FdrBh({0.005, 0.01, 0.03, 0.04});
  ASSERT_EQ(r.adjusted.size(), 4u);
  const std::vector<double> want = {0.02, 0.02, 0.04, 0.04};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.adjusted[i], want[i], 1e-15);
  EXPECT_EQ(r.rejected, (std::vector<bool>{true, true, true, true}));
  // Input order is preserved.
  const BhResult s = FdrBh({0.04, 0.005, 0.03, 0.01});
  EXPECT_NEAR(s.adjusted[0], 0.04, 1e-15);
  EXPECT_NEAR(s.adjusted[1], 0.02, 1e-15);
}

TEST(FdrBh, TiesSingletonAndRange) {
  for (double v : FdrBh({0.2, 0.2, 0.2}).adjusted) EXPECT_NEAR(v, 0.2, 1e-15);
  EXPECT_EQ(FdrBh({0.37}).adjusted[0], 0.37);
  EXPECT_EQ(CodeOf([] { FdrBh({0.1, 1.5}); }), ErrorCode::kOutOfRange);
  EXPECT_EQ(CodeOf([] { FdrBh({-0.1}); }), ErrorCode::kOutOfRange);
}

TEST(FdrBh, MonotoneAndDominating) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(1 + rng.UniformInt(30));
    for (auto& v : p) v = rng.Uniform() * rng.Uniform();
    const BhResult r = FdrBh(p, 0.1);
    std::vector<size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return p[a] < p[b]; });
    for (size_t i = 0; i < p.size(); ++i) {
      EXPECT_GE(r.adjusted[i], p[i]);
      EXPECT_LE(r.adjusted[i], 1.0);
      EXPECT_EQ(r.rejected[i], r.adjusted[i] <= 0.1);
      if (i > 0) {
        EXPECT_LE(r.adjusted[order[i - 1]], r.adjusted[order[i]]);
      }
    }
  }
}

TEST(Significance, Markers) {
  EXPECT_EQ(SignificanceMarker(0.0005), "§");
  EXPECT_EQ(SignificanceMarker(0.005), "‡");
  EXPECT_EQ(SignificanceMarker(0.03), "†");
  EXPECT_EQ(SignificanceMarker(0.05), "");
}

TEST(SamplesSeen, TableValues) {
  EXPECT_EQ(SamplesSeen(32, 180000), 5760000);
  EXPECT_EQ(SamplesSeen(32, 100000), 3200000);
  EXPECT_EQ(SamplesSeen(1024, 1985, 100), 203264000);
  EXPECT_EQ(SamplesSeen(0, 10), 0);
}

TEST(DoaError, Geometry) {
  const Vec3 x{1, 0, 0}, y{0, 1, 0};
  EXPECT_NEAR(DoaError(x, x), 0.0, 1e-12);
  EXPECT_NEAR(DoaError(x, y), 90.0, 1e-12);
  EXPECT_NEAR(DoaError(x, {-1, 0, 0}), 180.0, 1e-12);
  EXPECT_NEAR(DoaError(x, {5, 5, 0}), 45.0, 1e-12);
  EXPECT_EQ(CodeOf([&] { DoaError(x, {0, 0, 0}); }), ErrorCode::kInvalidArgument);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    Vec3 a{rng.Normal(), rng.Normal(), rng.Normal()}, b{rng.Normal(), rng.Normal(), rng.Normal()};
    const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    const Vec3 ua{a[0] / na, a[1] / na, a[2] / na}, ub{b[0] / nb, b[1] / nb, b[2] / nb};
    const double e = DoaError(ua, b);
    EXPECT_NEAR(e, DoaError(ub, a), 1e-9);
    EXPECT_NEAR(e, DoaError(ua, {3 * b[0], 3 * b[1], 3 * b[2]}), 1e-9);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 180.0);
  }
  const DoaSummary s = SummarizeDoa({x, x, x}, {x, y, {-1, 0, 0}});
  EXPECT_NEAR(s.median_deg, 90.0, 1e-12);
  EXPECT_NEAR(s.mean_deg, 90.0, 1e-12);
}

Matrix Blobs(int n, int dim, uint64_t seed, std::vector<int>& labels) {
  Rng rng(seed);
  Matrix x;
  labels.clear();
  for (int i = 0; i < n; ++i) {
    const int cls = i % 2;
    std::vector<double> row(dim);
    for (auto& v : row) v = 0.3 * rng.Normal();
    row[0] += cls ? 2.0 : -2.0;
    x.push_back(row);
    labels.push_back(cls);
  }
  return x;
}

TEST(Probe, SeparableClassesReachFullAccuracy) {
  std::vector<int> labels;
  const Matrix x = Blobs(200, 6, 4, labels);
  for (int hidden : {0, 32}) {
    ProbeConfig cfg;
    cfg.hidden = hidden;
    cfg.epochs = 300;  // the linear probe converges slowly at the default rate
    cfg.seed = 5;
    const Probe p = TrainClassifier(x, labels, 2, cfg);
    EXPECT_EQ(Accuracy(PredictClasses(p, x), labels), 1.0) << hidden;
  }
}

TEST(Probe, ShuffledLabelsStayNearChance) {
  std::vector<int> labels;
  const Matrix train = Blobs(200, 6, 6, labels);
  std::vector<int> test_labels;
  const Matrix test = Blobs(400, 6, 7, test_labels);
  // Train and test labels are shuffled independently of the features, so no
  // fixed predictor can beat a coin on the test set.
  Rng rng(8);
  for (size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.UniformInt(i)]);
  for (size_t i = test_labels.size(); i > 1; --i)
    std::swap(test_labels[i - 1], test_labels[rng.UniformInt(i)]);
  ProbeConfig cfg;
  cfg.epochs = 60;
  cfg.seed = 9;
  const double acc = Accuracy(PredictClasses(TrainClassifier(train, labels, 2, cfg), test), test_labels);
  // 3 sigma of a fair coin over 400 items.
  EXPECT_NEAR(acc, 0.5, 3.0 * std::sqrt(0.25 / 400));
}

TEST(Probe, PlantedDirectionIsRecovered) {
  Rng rng(10);
  Matrix x;
  std::vector<Vec3> dirs;
  for (int i = 0; i < 300; ++i) {
    const double az = rng.Uniform(0, 2 * kPi), el = std::asin(rng.Uniform(-1, 1));
    const Vec3 v{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
    std::vector<double> row(10);
    for (auto& r : row) r = rng.Normal();
    row[2] = v[0];
    row[5] = v[1];
    row[7] = v[2];
    x.push_back(row);
    dirs.push_back(v);
  }
  for (auto loss : {RegressionLoss::kCosine, RegressionLoss::kMse}) {
    ProbeConfig cfg;
    cfg.kind = ProbeKind::kRegressionUnitSphere;
    cfg.regression_loss = loss;
    cfg.epochs = 150;
    cfg.seed = 11;
    const Probe p = TrainDirectionRegressor(x, dirs, cfg);
    const auto pred = PredictDirections(p, x);
    for (const auto& v : pred) EXPECT_NEAR(std::hypot(v[0], v[1], v[2]), 1.0, 1e-9);
    EXPECT_LT(SummarizeDoa(dirs, pred).median_deg, 5.0);
  }
}

TEST(Probe, SeedDeterministicAndValidated) {
  std::vector<int> labels;
  const Matrix x = Blobs(60, 4, 12, labels);
  ProbeConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 13;
  const Probe a = TrainClassifier(x, labels, 2, cfg), b = TrainClassifier(x, labels, 2, cfg);
  for (const auto& [name, t] : a.params) EXPECT_EQ(t.data(), b.params.at(name).data());
  EXPECT_EQ(CodeOf([&] { TrainClassifier(x, {0, 1}, 2, cfg); }), ErrorCode::kShapeMismatch);
  Matrix ragged = x;
  ragged[3].pop_back();
  EXPECT_EQ(CodeOf([&] { TrainClassifier(ragged, labels, 2, cfg); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(ProbeConfig::FromJson(cfg.ToJson()).ToJson(), cfg.ToJson());
}

TaskResult Result(const std::string& task, const std::vector<bool>& correct) {
  TaskResult r;
  r.task = task;
  r.metric = "accuracy";
  r.n = static_cast<int64_t>(correct.size());
  for (size_t i = 0; i < correct.size(); ++i) {
    r.per_item.push_back({"item" + std::to_string(i), correct[i]});
    r.value += correct[i] ? 1.0 / double(correct.size()) : 0.0;
  }
  return r;
}

TEST(Compare, PairsByIdAndAdjusts) {
  // Task 1: 5 A-only vs 15 B-only; task 2: balanced.
  std::vector<bool> a1, b1, a2, b2;
  for (int i = 0; i < 5; ++i) a1.push_back(true), b1.push_back(false);
  for (int i = 0; i < 15; ++i) a1.push_back(false), b1.push_back(true);
  for (int i = 0; i < 10; ++i) a1.push_back(true), b1.push_back(true);
  for (int i = 0; i < 8; ++i) a2.push_back(i % 2 == 0), b2.push_back(i % 2 == 1);
  TaskResult ra1 = Result("t1", a1), rb1 = Result("t1", b1);
  std::reverse(rb1.per_item.begin(), rb1.per_item.end());  // order must not matter
  const PairedOutcomes o = PairResults(ra1, rb1);
  EXPECT_EQ(o.n10, 5);
  EXPECT_EQ(o.n01, 15);
  EXPECT_EQ(o.n11, 10);

  const auto report = CompareResults({ra1, Result("t2", a2)}, {rb1, Result("t2", b2)});
  ASSERT_EQ(report["raw_p"].size(), 2u);
  const double p1 = report["raw_p"][0].get<double>();
  EXPECT_NEAR(p1, BoostExact(5, 15), 1e-12);
  EXPECT_EQ(report["raw_p"][1].get<double>(), 1.0);
  const BhResult bh = FdrBh({p1, 1.0});
  EXPECT_EQ(report["adjusted_p"][0].get<double>(), bh.adjusted[0]);
  EXPECT_EQ(report["significant"][0].get<bool>(), bh.rejected[0]);

  TaskResult other = Result("t1", a1);
  other.per_item[0].id = "stranger";
  EXPECT_EQ(CodeOf([&] { PairResults(ra1, other); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(TaskResult::FromJson(ra1.ToJson()).ToJson(), ra1.ToJson());
}

}  // namespace
}  // namespace gram::eval
