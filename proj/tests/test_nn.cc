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

#include <cmath>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "gram/nn/checkpoint.h"
#include "gram/nn/ops.h"
#include "gram/nn/optim.h"
#include "gram/nn/tensor.h"
#include "grad_check.h"
#include "test_util.h"

namespace gram::nn {
namespace {

using gram::testing::CodeOf;
using gram::testing::MaxGradError;
using gram::testing::RandomTensor;
using gram::testing::TempDir;
using Inputs = std::vector<Tensor>;

constexpr double kGradTol = 1e-4;

void ExpectVec(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << i;
}

TEST(Primitives, SoftmaxOfZerosIsUniform) {
  ExpectVec(Softmax(Tensor::Zeros({4})).data(), {0.25, 0.25, 0.25, 0.25}, 1e-15);
}

TEST(Primitives, LayerNormOfConstantIsZero) {
  ExpectVec(LayerNorm(Tensor::Full({2, 5}, 3.7)).data(), std::vector<double>(10, 0.0), 1e-12);
}

TEST(Primitives, IdentityMatMul) {
  const Tensor x = RandomTensor({3, 4}, 1, 1.0, false);
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  const Tensor i3 = Tensor::FromData({3, 3}, eye);
  EXPECT_EQ(MatMul(i3, x).data(), x.data());
}

TEST(Primitives, MatMulMatchesLoops) {
  const Tensor a = RandomTensor({2, 3, 5}, 2, 1.0, false), b = RandomTensor({5, 4}, 3, 1.0, false);
  const Tensor c = MatMul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 4}));
  for (int r = 0; r < 6; ++r)
    for (int n = 0; n < 4; ++n) {
      double acc = 0.0;
      for (int k = 0; k < 5; ++k) acc += a.data()[r * 5 + k] * b.data()[k * 4 + n];
      EXPECT_NEAR(c.data()[r * 4 + n], acc, 1e-12);
    }
  const Tensor bt = RandomTensor({4, 5}, 4, 1.0, false);
  const Tensor d = MatMul(a, bt, true);
  ExpectVec(d.data(), MatMul(a, Transpose(bt)).data(), 1e-12);
}

TEST(Primitives, BroadcastAndErrorsNameShapes) {
  const Tensor a = Tensor::FromData({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::FromData({3}, {10, 20, 30});
  ExpectVec(Add(a, b).data(), {11, 22, 33, 14, 25, 36}, 0);
  try {
    Add(a, Tensor::Zeros({4}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2, 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4"), std::string::npos) << msg;
  }
  EXPECT_EQ(CodeOf([&] { MatMul(a, a); }), ErrorCode::kShapeMismatch);
}

TEST(Backward, LinearAndQuadratic) {
  Tensor x = RandomTensor({2, 3}, 5);
  Backward(Sum(x));
  ExpectVec(x.grad(), std::vector<double>(6, 1.0), 0);

  Tensor y = Tensor::FromData({2}, {1.0, 2.0}, true);
  Backward(Sum(Square(y)));
  ExpectVec(y.grad(), {2.0, 4.0}, 0);
}

TEST(Backward, RejectsNonScalarAndNonFinite) {
  Tensor x = RandomTensor({3}, 6);
  EXPECT_EQ(CodeOf([&] { Backward(Scale(x, 2.0)); }), ErrorCode::kShapeMismatch);
  Tensor z = Tensor::FromData({1}, {std::nan("")}, true);
  EXPECT_EQ(CodeOf([&] { Backward(Sum(z)); }), ErrorCode::kNonFinite);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = RandomTensor({3}, 7);
  NoGradGuard guard;
  EXPECT_FALSE(GradEnabled());
  const Tensor y = Mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

// Each primitive against central differences.
struct GradCase {
  const char* name;
  std::function<Tensor(const Inputs&)> f;
  std::vector<Shape> shapes;
};

class PrimitiveGrad : public ::testing::TestWithParam<GradCase> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  const GradCase& c = GetParam();
  Inputs inputs;
  for (size_t i = 0; i < c.shapes.size(); ++i) inputs.push_back(RandomTensor(c.shapes[i], 100 + i));
  EXPECT_LT(MaxGradError(c.f, inputs), kGradTol);
}

Tensor PosDef(const Tensor& x) { return AddScalar(Square(x), 0.5); }

const GradCase kCases[] = {
    {"add_broadcast", [](const Inputs& x) { return Add(x[0], x[1]); }, {{3, 4}, {4}}},
    {"sub_broadcast", [](const Inputs& x) { return Sub(x[0], x[1]); }, {{2, 1, 4}, {3, 4}}},
    {"mul_broadcast", [](const Inputs& x) { return Mul(x[0], x[1]); }, {{3, 4}, {3, 1}}},
    {"scale", [](const Inputs& x) { return Scale(AddScalar(x[0], 1.5), -0.7); }, {{5}}},
    {"matmul", [](const Inputs& x) { return MatMul(x[0], x[1]); }, {{2, 3, 4}, {4, 5}}},
    {"matmul_batched_t", [](const Inputs& x) { return MatMul(x[0], x[1], true); }, {{2, 3, 4}, {2, 5, 4}}},
    {"reshape", [](const Inputs& x) { return Square(Reshape(x[0], {3, 4})); }, {{2, 6}}},
    {"permute", [](const Inputs& x) { return Square(Permute(x[0], {2, 0, 1})); }, {{2, 3, 4}}},
    {"transpose", [](const Inputs& x) { return MatMul(Transpose(x[0]), x[1]); }, {{3, 2}, {3, 4}}},
    {"softmax", [](const Inputs& x) { return Softmax(x[0]); }, {{3, 5}}},
    {"layernorm", [](const Inputs& x) { return LayerNorm(x[0]); }, {{3, 6}}},
    {"layernorm_affine", [](const Inputs& x) { return LayerNorm(x[0], x[1], x[2]); }, {{3, 6}, {6}, {6}}},
    {"gelu", [](const Inputs& x) { return Gelu(x[0]); }, {{7}}},
    {"silu", [](const Inputs& x) { return Silu(x[0]); }, {{7}}},
    {"sigmoid", [](const Inputs& x) { return Sigmoid(x[0]); }, {{7}}},
    {"exp", [](const Inputs& x) { return Exp(x[0]); }, {{7}}},
    {"softplus", [](const Inputs& x) { return Softplus(x[0]); }, {{7}}},
    {"square", [](const Inputs& x) { return Square(x[0]); }, {{7}}},
    {"sum", [](const Inputs& x) { return Sum(Square(x[0])); }, {{2, 3}}},
    {"mean", [](const Inputs& x) { return Mean(Square(x[0])); }, {{2, 3}}},
    {"sum_axis", [](const Inputs& x) { return SumAxis(Square(x[0]), 1); }, {{2, 3, 4}}},
    {"mean_axis", [](const Inputs& x) { return MeanAxis(Square(x[0]), 0); }, {{2, 3, 4}}},
    {"gather", [](const Inputs& x) { return GatherRows(x[0], {3, 0, 3, 1}); }, {{4, 3}}},
    {"scatter", [](const Inputs& x) { return Square(ScatterRows(x[0], {4, 1}, 5)); }, {{2, 3}}},
    {"concat", [](const Inputs& x) { return Square(Concat({x[0], x[1]}, 1)); }, {{2, 3, 2}, {2, 1, 2}}},
    {"slice", [](const Inputs& x) { return Square(Slice(x[0], 1, 1, 2)); }, {{2, 4, 3}}},
    {"cross_entropy", [](const Inputs& x) { return CrossEntropy(x[0], {2, 0, 1}); }, {{3, 4}}},
    {"normalize_rows", [](const Inputs& x) { return NormalizeRows(x[0]); }, {{4, 3}}},
    {"causal_conv", [](const Inputs& x) { return CausalDepthwiseConv1d(x[0], x[1], x[2]); },
     {{2, 6, 3}, {4, 3}, {3}}},
    {"attention_global", [](const Inputs& x) { return MultiHeadAttention(x[0], x[1], x[2], 2, 0); },
     {{2, 6, 4}, {2, 6, 4}, {2, 6, 4}}},
    {"attention_window", [](const Inputs& x) { return MultiHeadAttention(x[0], x[1], x[2], 2, 3); },
     {{1, 6, 4}, {1, 6, 4}, {1, 6, 4}}},
};

INSTANTIATE_TEST_SUITE_P(All, PrimitiveGrad, ::testing::ValuesIn(kCases),
                         [](const auto& info) { return std::string(info.param.name); });

// u, delta, a, b, c with delta > 0 and a < 0 enforced by the wrapper.
Tensor ScanOf(const Inputs& x, const ScanOptions& opt) {
  const Tensor delta = Softplus(x[1]);
  const Tensor a = Scale(PosDef(x[2]), -1.0);
  return SelectiveScan(x[0], delta, a, x[3], x[4], opt);
}

Inputs ScanInputs(int batch, int len, int e, int n, uint64_t seed) {
  return {RandomTensor({batch, len, e}, seed), RandomTensor({batch, len, e}, seed + 1),
          RandomTensor({e, n}, seed + 2), RandomTensor({batch, len, n}, seed + 3),
          RandomTensor({batch, len, n}, seed + 4)};
}

TEST(SelectiveScan, GradientsBothDiscretizations) {
  for (bool zoh : {false, true}) {
    for (auto algo : {ScanAlgorithm::kSequential, ScanAlgorithm::kChunked}) {
      ScanOptions opt;
      opt.exact_zoh = zoh;
      opt.algorithm = algo;
      opt.chunk_size = 3;
      EXPECT_LT(MaxGradError([&](const Inputs& x) { return ScanOf(x, opt); }, ScanInputs(2, 7, 3, 2, 40)),
                kGradTol)
          << zoh << " " << static_cast<int>(algo);
    }
  }
}

TEST(SelectiveScan, ChunkedMatchesSequential) {
  const Inputs x = ScanInputs(2, 50, 6, 4, 60);
  ScanOptions seq, chunk;
  chunk.algorithm = ScanAlgorithm::kChunked;
  for (int size : {1, 7, 16, 64}) {
    chunk.chunk_size = size;
    ExpectVec(ScanOf(x, chunk).data(), ScanOf(x, seq).data(), 1e-5);
  }
}

TEST(SelectiveScan, MatchesHandRecurrence) {
  // One channel, one state: h_t = exp(d a) h + d b u, y = c h.
  const Tensor u = Tensor::FromData({1, 3, 1}, {1.0, 2.0, -1.0});
  const Tensor d = Tensor::FromData({1, 3, 1}, {0.5, 0.1, 1.0});
  const Tensor a = Tensor::FromData({1, 1}, {-2.0});
  const Tensor b = Tensor::FromData({1, 3, 1}, {1.0, 0.5, 2.0});
  const Tensor c = Tensor::FromData({1, 3, 1}, {3.0, 1.0, 0.5});
  double h = 0.0;
  std::vector<double> want;
  for (int t = 0; t < 3; ++t) {
    h = std::exp(d.data()[t] * -2.0) * h + d.data()[t] * b.data()[t] * u.data()[t];
    want.push_back(c.data()[t] * h);
  }
  ExpectVec(SelectiveScan(u, d, a, b, c).data(), want, 1e-14);
}

TEST(SelectiveScan, CausalUnderZeroPadding) {
  const Inputs x = ScanInputs(1, 20, 3, 2, 70);
  Inputs padded;
  for (int i : {0, 1, 3, 4}) {
    Tensor z = Tensor::Zeros(x[i].shape());
    padded.push_back(Concat({x[i], z}, 1));
  }
  padded.insert(padded.begin() + 2, x[2]);
  const Tensor y = ScanOf(x, {});
  const Tensor yp = ScanOf(padded, {});
  ExpectVec(Slice(yp, 1, 0, 20).data(), y.data(), 1e-12);
}

TEST(Attention, WindowEqualToLengthIsGlobal) {
  const Tensor q = RandomTensor({2, 10, 8}, 80, 1.0, false), k = RandomTensor({2, 10, 8}, 81, 1.0, false),
               v = RandomTensor({2, 10, 8}, 82, 1.0, false);
  ExpectVec(MultiHeadAttention(q, k, v, 2, 10).data(), MultiHeadAttention(q, k, v, 2, 0).data(), 1e-6);
}

TEST(Attention, WindowOneReturnsValues) {
  const Tensor q = RandomTensor({1, 6, 4}, 83, 1.0, false), k = RandomTensor({1, 6, 4}, 84, 1.0, false),
               v = RandomTensor({1, 6, 4}, 85, 1.0, false);
  ExpectVec(MultiHeadAttention(q, k, v, 2, 1).data(), v.data(), 1e-12);
}

TEST(Attention, WindowsAreIsolated) {
  const Tensor q = RandomTensor({1, 8, 4}, 86, 1.0, false), k = RandomTensor({1, 8, 4}, 87, 1.0, false);
  Tensor v = RandomTensor({1, 8, 4}, 88, 1.0, false);
  const Tensor before = MultiHeadAttention(q, k, v, 1, 4);
  Tensor v2 = v.Clone();
  for (int i = 16; i < 32; ++i) v2.data()[i] += 5.0;  // second window only
  const Tensor after = MultiHeadAttention(q, k, v2, 1, 4);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(after.data()[i], before.data()[i]);
  EXPECT_EQ(CodeOf([&] { MultiHeadAttention(q, k, v, 1, 3); }), ErrorCode::kInvalidArgument);
}

TEST(AdamW, ZeroGradWithoutDecayIsFixedPoint) {
  std::vector<Tensor> p = {Tensor::FromData({3}, {1.0, -2.0, 0.5}, true)};
  p[0].grad();
  OptimizerState s;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamWStep(p, s, cfg, 0.1);
  ExpectVec(p[0].data(), {1.0, -2.0, 0.5}, 0);
}

TEST(AdamW, FirstStepMovesByLr) {
  std::vector<Tensor> p = {Tensor::FromData({1}, {1.0}, true)};
  p[0].grad()[0] = 1.0;
  OptimizerState s;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamWStep(p, s, cfg, 0.1);
  // m_hat = v_hat = 1: p - lr * 1 / (1 + eps).
  EXPECT_NEAR(p[0].data()[0], 0.9, 1e-8);
  EXPECT_EQ(s.step_count, 1);
}

TEST(AdamW, DecayOnly) {
  std::vector<Tensor> p = {Tensor::FromData({2}, {2.0, -4.0}, true)};
  p[0].grad();
  OptimizerState s;
  AdamWStep(p, s, AdamWConfig{}, 0.5);
  ExpectVec(p[0].data(), {2.0 * (1 - 0.5 * 0.01), -4.0 * (1 - 0.5 * 0.01)}, 1e-15);
}

TEST(AdamW, ClipsGlobalNormAndIsDeterministic) {
  auto run = [] {
    std::vector<Tensor> p = {RandomTensor({5}, 90), RandomTensor({3, 2}, 91)};
    OptimizerState s;
    for (int step = 0; step < 5; ++step) {
      for (auto& t : p) {
        t.ZeroGrad();
        auto& g = t.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] = 10.0 * std::sin(double(i + step));
      }
      const double before = GlobalGradNorm(p);
      const StepReport r = AdamWStep(p, s, AdamWConfig{}, 1e-3);
      EXPECT_NEAR(r.grad_norm, before, 1e-12);
      // The moments see gradients scaled by clip_scale.
      EXPECT_LE(before * r.clip_scale, 1.0 + 1e-9);
    }
    return p[1].data();
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  std::vector<Tensor> p = {Tensor::FromData({2}, {1.0, 2.0}, true)};
  p[0].grad() = {0.1, INFINITY};
  OptimizerState s;
  EXPECT_EQ(CodeOf([&] { AdamWStep(p, s, AdamWConfig{}, 0.1); }), ErrorCode::kNonFinite);
  ExpectVec(p[0].data(), {1.0, 2.0}, 0);
  EXPECT_EQ(s.step_count, 0);
}

TEST(Schedule, CosineWarmupValues) {
  EXPECT_EQ(CosineWarmupLr(0, 10000, 180000), 0.0);
  EXPECT_DOUBLE_EQ(CosineWarmupLr(5000, 10000, 180000), 0.0001);
  EXPECT_DOUBLE_EQ(CosineWarmupLr(10000, 10000, 180000), 0.0002);
  EXPECT_NEAR(CosineWarmupLr(95000, 10000, 180000), 0.0001, 1e-15);
  EXPECT_NEAR(CosineWarmupLr(180000, 10000, 180000), 0.0, 1e-20);
  EXPECT_EQ(CodeOf([] { CosineWarmupLr(180001, 10000, 180000); }), ErrorCode::kOutOfRange);
  EXPECT_EQ(CodeOf([] { CosineWarmupLr(-1, 10000, 180000); }), ErrorCode::kOutOfRange);
  for (int64_t s = 10000; s < 180000; s += 1000)
    EXPECT_GE(CosineWarmupLr(s, 10000, 180000), CosineWarmupLr(s + 1000, 10000, 180000));
}

TEST(Checkpoint, RoundTripAndLayout) {
  TempDir dir;
  Checkpoint ck;
  ck.arrays["zeta"] = {{2}, {1.5, -2.5}};
  ck.arrays["alpha"] = {{2, 2}, {1, 2, 3, 4}};
  ck.metadata_json = R"({"k":1})";
  const std::string path = (dir / "c.gck").string();
  SaveCheckpoint(path, ck);
  const Checkpoint back = LoadCheckpoint(path);
  ASSERT_EQ(back.arrays.size(), 2u);
  EXPECT_EQ(back.arrays.at("alpha").shape, (Shape{2, 2}));
  EXPECT_EQ(back.arrays.at("zeta").data, (std::vector<double>{1.5, -2.5}));
  EXPECT_NE(back.metadata_json.find("\"k\""), std::string::npos);

  // Payload is name-ordered float64: alpha first, then zeta.
  const auto bytes = gram::testing::ReadBytes(dir / "c.gck");
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "GRAMCKP1");
  double last;
  std::memcpy(&last, bytes.data() + bytes.size() - 8, 8);
  EXPECT_EQ(last, -2.5);
  double first_alpha;
  std::memcpy(&first_alpha, bytes.data() + bytes.size() - 6 * 8, 8);
  EXPECT_EQ(first_alpha, 1.0);
}

TEST(Checkpoint, Errors) {
  TempDir dir;
  EXPECT_EQ(CodeOf([&] { LoadCheckpoint((dir / "none").string()); }), ErrorCode::kMissingFile);
  gram::testing::WriteBytes(dir / "bad", std::vector<char>(32, 'z'));
  EXPECT_EQ(CodeOf([&] { LoadCheckpoint((dir / "bad").string()); }), ErrorCode::kCorruptHeader);
  Checkpoint ck;
  ck.arrays["a"] = {{3}, {1, 2}};
  EXPECT_EQ(CodeOf([&] { SaveCheckpoint((dir / "x").string(), ck); }), ErrorCode::kShapeMismatch);
  ck.arrays["a"] = {{2}, {1, 2}};
  SaveCheckpoint((dir / "ok").string(), ck);
  auto bytes = gram::testing::ReadBytes(dir / "ok");
  bytes.resize(bytes.size() - 4);
  gram::testing::WriteBytes(dir / "ok", bytes);
  EXPECT_EQ(CodeOf([&] { LoadCheckpoint((dir / "ok").string()); }), ErrorCode::kCorruptPayload);
}

}  // namespace
}  // namespace gram::nn
