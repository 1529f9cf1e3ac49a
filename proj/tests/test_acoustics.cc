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

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include "gram/acoustics.h"
#include "test_util.h"

namespace gram::acoustics {
namespace {

using gram::testing::CodeOf;
using gram::testing::TempDir;

double Energy(const dsp::Signal& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

size_t ArgMaxAbs(const dsp::Signal& x) {
  size_t best = 0;
  for (size_t i = 1; i < x.size(); ++i)
    if (std::abs(x[i]) > std::abs(x[best])) best = i;
  return best;
}

RoomSpec BigAnechoic() {
  RoomSpec room;
  room.dims_m = {10.0, 10.0, 10.0};
  room.absorption = 1.0;
  return room;
}

TEST(ImageSource, DirectPathAtTwoMetres) {
  const dsp::Signal rir = ImageSourceRir(BigAnechoic(), {3, 5, 5}, {5, 5, 5});
  const double delay = 2.0 / 343.0 * 32000.0;  // 186.59 samples
  const size_t peak = ArgMaxAbs(rir);
  EXPECT_EQ(peak, static_cast<size_t>(std::lround(delay)));
  // The windowed sinc has unit DC gain, so the taps sum to the amplitude.
  EXPECT_NEAR(std::accumulate(rir.begin(), rir.end(), 0.0), 0.5, 0.5 * 0.01);
  // Band-limited reconstruction at the true delay recovers 1/d, up to the
  // passband ripple of the 33-tap window.
  double value = 0.0;
  for (size_t n = 0; n < rir.size(); ++n) {
    const double x = kPi * (static_cast<double>(n) - delay);
    value += rir[n] * (std::abs(x) < 1e-12 ? 1.0 : std::sin(x) / x);
  }
  EXPECT_NEAR(value, 0.5, 0.5 * 0.05);
}

TEST(ImageSource, IntegerDelayIsSingleSample) {
  // 200 samples of flight: d = 200 * 343 / 32000 m.
  const double d = 200.0 * 343.0 / 32000.0;
  const dsp::Signal rir = ImageSourceRir(BigAnechoic(), {5 - d, 5, 5}, {5, 5, 5});
  EXPECT_NEAR(rir[200], 1.0 / d, 1e-12);
  EXPECT_NEAR(rir[199], 0.0, 1e-12);
  EXPECT_NEAR(rir[201], 0.0, 1e-12);
}

TEST(ImageSource, OrderZeroEqualsAnechoic) {
  RoomSpec a;
  a.absorption = 0.3;
  a.max_order = 0;
  RoomSpec b = a;
  b.absorption = 1.0;
  b.max_order = 30;
  const Vec3 s = {1.2, 1.1, 1.4}, r = {3.5, 2.6, 1.5};
  EXPECT_EQ(ImageSourceRir(a, s, r), ImageSourceRir(b, s, r));
}

TEST(ImageSource, EnergyFallsWithAbsorption) {
  RoomSpec room;
  room.max_order = 12;
  double prev = std::numeric_limits<double>::infinity();
  for (double alpha : {0.05, 0.1, 0.2, 0.35, 0.5, 0.7, 0.9, 1.0}) {
    room.absorption = alpha;
    const double e = Energy(ImageSourceRir(room, {1, 1, 1.2}, {3.2, 2.5, 1.5}));
    EXPECT_LT(e, prev) << alpha;
    prev = e;
  }
}

TEST(ImageSource, RejectsBadPoints) {
  RoomSpec room;
  EXPECT_EQ(CodeOf([&] { ImageSourceRir(room, {1, 1, 1}, {1, 1, 1}); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([&] { ImageSourceRir(room, {9, 1, 1}, {1, 1, 1}); }),
            ErrorCode::kInvalidArgument);
  room.absorption = 0.0;
  EXPECT_EQ(CodeOf([&] { ImageSourceRir(room, {2, 1, 1}, {1, 1, 1}); }),
            ErrorCode::kInvalidArgument);
}

TEST(Rt60, AnalyticExponentialDecay) {
  const double tau = 0.05;
  Rng rng(17);
  dsp::Signal h(32000);
  for (size_t i = 0; i < h.size(); ++i) h[i] = std::exp(-(i / 32000.0) / tau) * rng.Normal();
  const double want = 3.0 * std::log(10.0) * tau;  // 6.9078 tau
  const double rt = MeasureRt60(h);
  EXPECT_NEAR(rt, want, 0.05 * want);
  EXPECT_NEAR(want, 0.345, 0.001);

  dsp::Signal h2 = h;
  for (auto& v : h2) v *= 2.0;
  EXPECT_NEAR(MeasureRt60(h2), rt, 1e-12);
}

TEST(Rt60, DefaultShoeboxLandsInRange) {
  RoomSpec room;
  room.absorption = 0.3;
  room.max_order = 30;
  const dsp::Signal rir = ImageSourceRir(room, {1.2, 1.0, 1.6}, {3.4, 2.7, 1.5});
  const double rt = MeasureRt60(Binauralize(rir, 40.0, 10.0));
  EXPECT_GE(rt, 0.2);
  EXPECT_LE(rt, 0.5);
}

TEST(Rt60, InsufficientDecayFails) {
  // Energy piled up at the end never decays by 25 dB.
  dsp::Signal rising(1000);
  for (size_t i = 0; i < rising.size(); ++i) rising[i] = std::pow(1.05, double(i));
  EXPECT_EQ(CodeOf([&] { MeasureRt60(rising); }), ErrorCode::kInsufficientDecay);
  EXPECT_EQ(CodeOf([] { MeasureRt60(dsp::Signal(10, 0.0)); }), ErrorCode::kInsufficientDecay);
}

dsp::Signal NoiseRir(uint64_t seed) {
  Rng rng(seed);
  dsp::Signal x(2048);
  for (size_t i = 0; i < x.size(); ++i) x[i] = rng.Normal() * std::exp(-double(i) / 400.0);
  return x;
}

TEST(Binauralize, MedianPlaneGivesIdenticalEars) {
  const dsp::Signal rir = NoiseRir(1);
  for (double el : {0.0, 30.0, -60.0}) {
    const auto b = Binauralize(rir, 0.0, el);
    EXPECT_EQ(b.left, b.right) << el;
  }
  const auto back = Binauralize(rir, 180.0, 0.0);
  for (size_t i = 0; i < back.size(); ++i) ASSERT_NEAR(back.left[i], back.right[i], 1e-12);
}

TEST(Binauralize, WoodworthItdAtNinetyDegrees) {
  const double want = 0.0875 / 343.0 * (kPi / 2 + 1.0);
  EXPECT_NEAR(want, 0.656e-3, 0.001e-3);
  EXPECT_NEAR(InterauralTimeDifference(90.0, 0.0), want, 1e-15);
  EXPECT_NEAR(InterauralTimeDifference(270.0, 0.0), -want, 1e-15);
  EXPECT_NEAR(InterauralTimeDifference(0.0, 0.0), 0.0, 1e-15);

  // An impulse reaches the right ear want * rate samples before the left.
  dsp::Signal impulse(64, 0.0);
  impulse[0] = 1.0;
  const auto b = Binauralize(impulse, 90.0, 0.0);
  auto xcorr_lag = [&] {
    long best = 0;
    double best_v = -1e300;
    for (long lag = -40; lag <= 40; ++lag) {
      double acc = 0.0;
      for (long i = 0; i < static_cast<long>(b.size()); ++i) {
        const long j = i + lag;
        if (j >= 0 && j < static_cast<long>(b.size())) acc += b.right[i] * b.left[j];
      }
      if (acc > best_v) best_v = acc, best = lag;
    }
    return best;
  };
  EXPECT_EQ(xcorr_lag(), std::lround(want * 32000));  // left lags by ~21 samples
  EXPECT_LT(ArgMaxAbs(b.right), ArgMaxAbs(b.left));
}

TEST(Binauralize, MirrorSwapsEars) {
  const dsp::Signal rir = NoiseRir(2);
  for (double az : {30.0, 90.0, 135.0}) {
    const auto a = Binauralize(rir, az, 10.0);
    const auto m = Binauralize(rir, 360.0 - az, 10.0);
    for (size_t i = 0; i < a.size(); ++i) {
      ASSERT_NEAR(a.left[i], m.right[i], 1e-12);
      ASSERT_NEAR(a.right[i], m.left[i], 1e-12);
    }
  }
}

TEST(Binauralize, FarEarIsAttenuatedAtHighFrequency) {
  dsp::Signal impulse(512, 0.0);
  impulse[0] = 1.0;
  const auto b = Binauralize(impulse, 90.0, 0.0);
  // Sample-to-sample differences emphasise high frequencies.
  auto hf = [](const dsp::Signal& x) {
    double e = 0.0;
    for (size_t i = 1; i < x.size(); ++i) e += (x[i] - x[i - 1]) * (x[i] - x[i - 1]);
    return e;
  };
  EXPECT_GT(hf(b.right), 2.0 * hf(b.left));
}

TEST(Binauralize, PreservesBroadbandEnergyWithinOneDb) {
  Rng rng(9);
  const dsp::Signal rir = NoiseRir(3);
  const double e_in = Energy(rir);
  for (int i = 0; i < 36; ++i) {
    const double az = i * 10.0;
    const auto b = Binauralize(rir, az, 0.0);
    const double ratio_db = 10.0 * std::log10((Energy(b.left) + Energy(b.right)) / (2.0 * e_in));
    EXPECT_LT(std::abs(ratio_db), 1.0) << az;
  }
}

TEST(Binauralize, RejectsOutOfRangeAngles) {
  const dsp::Signal rir = NoiseRir(4);
  EXPECT_EQ(CodeOf([&] { Binauralize(rir, 360.0, 0.0); }), ErrorCode::kOutOfRange);
  EXPECT_EQ(CodeOf([&] { Binauralize(rir, -1.0, 0.0); }), ErrorCode::kOutOfRange);
  EXPECT_EQ(CodeOf([&] { Binauralize(rir, 0.0, 91.0); }), ErrorCode::kOutOfRange);
}

TEST(SampleScene, DeterministicPerSeed) {
  const RoomSpec room;
  const ScenePose a = SampleScene(42, room), b = SampleScene(42, room);
  EXPECT_EQ(PoseToJson(a).dump(), PoseToJson(b).dump());
  EXPECT_NE(PoseToJson(a).dump(), PoseToJson(SampleScene(43, room)).dump());
}

TEST(SampleScene, MonteCarloConstraints) {
  const int n = 10000;
  int localized = 0;
  std::vector<int> az_bins(12, 0), diffuse_counts(6, 0);
  for (int i = 0; i < n; ++i) {
    const RoomSpec room = SampleDefaultRoom(DeriveSeed(1, i));
    const ScenePose p = SampleScene(DeriveSeed(2, i), room);
    ASSERT_GE(p.source_distance_m, 1.5);
    ASSERT_LE(p.source_distance_m, 5.0);
    ASSERT_TRUE(room.Contains(p.listener_pos_m));
    ASSERT_TRUE(room.Contains(p.source_pos_m));
    EXPECT_DOUBLE_EQ(p.listener_pos_m[2], 1.5);
    for (const auto& q : p.noise_positions_m) ASSERT_TRUE(room.Contains(q));
    // The stored direction matches the placed geometry.
    const Direction d = RelativeDirection(p.listener_pos_m, p.listener_heading_deg, p.source_pos_m);
    ASSERT_NEAR(d.distance_m, p.source_distance_m, 1e-9);
    ASSERT_NEAR(d.elevation_deg, p.source_elevation_deg, 1e-7);
    const double daz = std::remainder(d.azimuth_deg - p.source_azimuth_deg, 360.0);
    ASSERT_NEAR(daz, 0.0, 1e-7);
    if (p.noise_kind == NoiseKind::kLocalized) {
      ++localized;
      ASSERT_EQ(p.noise_positions_m.size(), 1u);
    } else {
      ASSERT_GE(p.noise_positions_m.size(), 3u);
      ASSERT_LE(p.noise_positions_m.size(), 5u);
      ++diffuse_counts[p.noise_positions_m.size()];
    }
    ++az_bins[static_cast<int>(p.source_azimuth_deg / 30.0)];
  }
  EXPECT_NEAR(localized / double(n), 0.5, 0.02);
  for (int k = 3; k <= 5; ++k) EXPECT_NEAR(diffuse_counts[k] / double(n - localized), 1.0 / 3, 0.03);

  double chi2 = 0.0;
  const double expected = n / 12.0;
  for (int c : az_bins) chi2 += (c - expected) * (c - expected) / expected;
  const double p = 1.0 - boost::math::cdf(boost::math::chi_squared(11), chi2);
  EXPECT_GT(p, 0.01) << "chi2 " << chi2;
}

TEST(SampleScene, ImpossibleRoomExhaustsBudget) {
  RoomSpec tiny;
  tiny.dims_m = {1.2, 1.2, 2.0};  // no point is 1.5 m from the listener
  EXPECT_EQ(CodeOf([&] { SampleScene(1, tiny); }), ErrorCode::kRejectionBudgetExhausted);
}

ScenePose FixedPose(NoiseKind kind, int noises, double heading) {
  ScenePose p;
  p.listener_pos_m = {2.5, 2.0, 1.5};
  p.listener_heading_deg = heading;
  p.source_pos_m = {4.3, 2.4, 1.7};
  p.noise_kind = kind;
  for (int i = 0; i < noises; ++i) p.noise_positions_m.push_back({0.6 + 0.5 * i, 3.3, 1.0 + 0.2 * i});
  return p;
}

TEST(RenderSceneBrirs, CountsFollowNoiseKind) {
  const RoomSpec room;
  const SceneBrirs d = RenderSceneBrirs(room, FixedPose(NoiseKind::kDiffuse, 4, 0.0));
  EXPECT_EQ(d.noise.size(), 4u);
  const SceneBrirs l = RenderSceneBrirs(room, FixedPose(NoiseKind::kLocalized, 1, 0.0));
  EXPECT_EQ(l.noise.size(), 1u);
  EXPECT_EQ(l.source.left.size(), l.source.right.size());
  EXPECT_GT(Energy(l.source.left), 0.0);
  EXPECT_GE(l.source.meta.rt60_s, 0.2);
  EXPECT_LE(l.source.meta.rt60_s, 0.5);
}

TEST(RenderSceneBrirs, HeadingRotatesAzimuth) {
  const RoomSpec room;
  const double a0 = RenderSceneBrirs(room, FixedPose(NoiseKind::kLocalized, 1, 0.0)).source.meta.source_azimuth_deg;
  const double a90 = RenderSceneBrirs(room, FixedPose(NoiseKind::kLocalized, 1, 90.0)).source.meta.source_azimuth_deg;
  EXPECT_NEAR(std::remainder(a90 - (a0 - 90.0), 360.0), 0.0, 1e-9);
}

TEST(BrirExport, RoundTripWithSidecar) {
  TempDir dir;
  const RoomSpec room;
  const SceneBrirs s = RenderSceneBrirs(room, FixedPose(NoiseKind::kLocalized, 1, 30.0));
  ExportBrir(dir / "b.wav", s.source, room, 77);
  const auto loaded = LoadBrir(dir / "b.wav");
  ASSERT_EQ(loaded.size(), s.source.size());
  for (size_t i = 0; i < loaded.size(); ++i)
    ASSERT_EQ(loaded.left[i], static_cast<double>(static_cast<float>(s.source.left[i])));
  EXPECT_EQ(loaded.meta.source_azimuth_deg, s.source.meta.source_azimuth_deg);
  EXPECT_EQ(loaded.meta.rt60_s, s.source.meta.rt60_s);
  std::ifstream in(dir / "b.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["seed"].get<uint64_t>(), 77u);
  EXPECT_TRUE(j.contains("room"));
  EXPECT_TRUE(j.contains("distance_m"));
}

}  // namespace
}  // namespace gram::acoustics
