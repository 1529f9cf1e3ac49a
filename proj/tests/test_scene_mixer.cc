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
#include <cmath>
#include <vector>

#include "gram/scene_mixer.h"
#include "test_util.h"

namespace gram::scene {
namespace {

using acoustics::BinauralImpulseResponse;
using gram::testing::CodeOf;

audio::Waveform Noise(double seconds, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(static_cast<size_t>(seconds * kSampleRate));
  for (auto& v : x) v = 0.3 * rng.Normal();
  return audio::Waveform::Mono(std::move(x));
}

double MaxStep(const std::vector<double>& x) {
  double m = 0.0;
  for (size_t i = 1; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - x[i - 1]));
  return m;
}

double MaxAbs(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

BinauralImpulseResponse Brir(uint64_t seed, double az = 30.0) {
  Rng rng(seed);
  dsp::Signal rir(600);
  for (size_t i = 0; i < rir.size(); ++i) rir[i] = rng.Normal() * std::exp(-double(i) / 120.0);
  return acoustics::Binauralize(rir, az, 0.0);
}

SceneSpec Spec(int noises, double snr) {
  SceneSpec s;
  s.scene_id = "s0";
  s.brirs.source = Brir(1, 60.0);
  for (int i = 0; i < noises; ++i) s.brirs.noise.push_back(Brir(10 + i, 200.0 + 40 * i));
  s.snr_db = snr;
  return s;
}

TEST(PrepareNoise, TrimsLongClipsAndFades) {
  const auto in = Noise(15.0, 1);
  const auto out = PrepareNoise(in);
  ASSERT_EQ(out.samples_per_channel(), 320000u);
  EXPECT_EQ(out.channels[0].front(), 0.0);
  EXPECT_EQ(out.channels[0].back(), 0.0);
  // Interior equals the input.
  EXPECT_EQ(out.channels[0][100000], in.channels[0][100000]);
}

TEST(PrepareNoise, ExactLengthStillFaded) {
  const auto in = Noise(10.0, 2);
  const auto out = PrepareNoise(in);
  ASSERT_EQ(out.samples_per_channel(), 320000u);
  EXPECT_EQ(out.channels[0][0], 0.0);
  EXPECT_DOUBLE_EQ(out.channels[0][3200], in.channels[0][3200] * 0.5);
}

TEST(PrepareNoise, ShortClipsLoopWithoutJumps) {
  const auto in = Noise(4.0, 3);
  const auto out = PrepareNoise(in);
  ASSERT_EQ(out.samples_per_channel(), 320000u);
  // Crossfades and fades add at most a few ramp steps of the peak level.
  const double fade = kNoiseFadeS * kSampleRate;
  const double bound = MaxStep(in.channels[0]) + 3.0 * MaxAbs(in.channels[0]) / fade;
  EXPECT_LE(MaxStep(out.channels[0]), bound);
  // Past the first seam the source repeats.
  const size_t period = in.samples_per_channel() - static_cast<size_t>(fade);
  EXPECT_EQ(out.channels[0][period + 10000], in.channels[0][10000]);
}

TEST(PrepareNoise, RejectsShortOrStereo) {
  EXPECT_EQ(CodeOf([] { PrepareNoise(Noise(0.39, 4)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([] { PrepareNoise(audio::Waveform(2, 32000)); }), ErrorCode::kInvalidArgument);
}

TEST(DirectionVector, AxisCases) {
  auto near = [](std::array<double, 3> a, std::array<double, 3> b) {
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  };
  near(DirectionVector(0, 0), {1, 0, 0});
  near(DirectionVector(90, 0), {0, 1, 0});
  near(DirectionVector(0, 90), {0, 0, 1});
  near(DirectionVector(450, 0), {0, 1, 0});
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto v = DirectionVector(rng.Uniform(0, 360), rng.Uniform(-90, 90));
    EXPECT_NEAR(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]), 1.0, 1e-12);
  }
}

TEST(MixScene, MeasuredSnrIsExact) {
  const auto target = Noise(10.0, 6);
  const auto noise = PrepareNoise(Noise(12.0, 7));
  for (double snr : {5.0, 12.5, 40.0}) {
    const MixedScene m = MixScene(Spec(1, snr), target, noise);
    const double pt = dsp::MeanPower(m.target_part.channels);
    const double pn = dsp::MeanPower(m.noise_part.channels);
    EXPECT_NEAR(10.0 * std::log10(pt / pn), snr, 1e-6);
    ASSERT_EQ(m.audio.num_channels(), 2);
    ASSERT_EQ(m.audio.samples_per_channel(), 320000u);
    for (size_t i = 0; i < 320000; i += 997)
      ASSERT_DOUBLE_EQ(m.audio.channels[1][i], m.target_part.channels[1][i] + m.noise_part.channels[1][i]);
  }
}

TEST(MixScene, TargetPartIsConvolvedTarget) {
  const auto target = Noise(10.0, 8);
  const SceneSpec spec = Spec(1, 20.0);
  const MixedScene m = MixScene(spec, target, PrepareNoise(Noise(10.0, 9)));
  const dsp::Signal want = dsp::FftConvolve(target.channels[0], spec.brirs.source.left);
  for (size_t i = 0; i < 320000; i += 1013) ASSERT_NEAR(m.target_part.channels[0][i], want[i], 1e-9);
}

TEST(MixScene, NoiselessEqualsTarget) {
  SceneSpec spec = Spec(1, 20.0);
  spec.noiseless = true;
  const MixedScene m = MixScene(spec, Noise(10.0, 10), PrepareNoise(Noise(10.0, 11)));
  EXPECT_EQ(m.meta.b, 0.0);
  EXPECT_EQ(m.audio.channels, m.target_part.channels);
}

TEST(MixScene, DiffuseNoiseSumsSources) {
  const auto target = Noise(10.0, 12);
  const auto noise = PrepareNoise(Noise(10.0, 13));
  const SceneSpec spec = Spec(3, 10.0);
  const MixedScene m = MixScene(spec, target, noise);
  // b * sum_i (BRIR_i * noise) reproduces the noise part.
  dsp::Signal sum(320000, 0.0);
  for (const auto& brir : spec.brirs.noise) {
    const dsp::Signal part = dsp::FftConvolve(noise.channels[0], brir.right);
    for (size_t i = 0; i < sum.size(); ++i) sum[i] += part[i];
  }
  for (size_t i = 0; i < sum.size(); i += 1009)
    ASSERT_NEAR(m.noise_part.channels[1][i], m.meta.b * sum[i], 1e-9);
  EXPECT_NEAR(10.0 * std::log10(dsp::MeanPower(m.target_part.channels) /
                                dsp::MeanPower(m.noise_part.channels)),
              10.0, 1e-6);
}

TEST(MixScene, ScalingTargetKeepsSnr) {
  const auto noise = PrepareNoise(Noise(10.0, 14));
  auto target = Noise(10.0, 15);
  const MixedScene a = MixScene(Spec(1, 15.0), target, noise);
  for (auto& v : target.channels[0]) v *= 3.0;
  const MixedScene b = MixScene(Spec(1, 15.0), target, noise);
  EXPECT_NEAR(b.meta.b, 3.0 * a.meta.b, 1e-9 * b.meta.b);
  for (size_t i = 0; i < 320000; i += 2003)
    ASSERT_NEAR(b.target_part.channels[0][i], 3.0 * a.target_part.channels[0][i], 1e-9);
}

TEST(MixScene, DeterministicAndMetaFilled) {
  const auto target = SynthesizeTarget(1, 5);
  const auto noise = PrepareNoise(SynthesizeNoise(6));
  const MixedScene a = MixScene(Spec(4, 22.0), target, noise);
  const MixedScene b = MixScene(Spec(4, 22.0), target, noise);
  EXPECT_EQ(a.audio.channels, b.audio.channels);
  EXPECT_EQ(a.meta.scene_id, "s0");
  EXPECT_EQ(a.meta.azimuth_deg, 60.0);
  const auto& v = a.meta.source_unit_vector;
  EXPECT_NEAR(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]), 1.0, 1e-9);
}

TEST(MixScene, Errors) {
  const auto target = Noise(10.0, 16);
  const auto noise = PrepareNoise(Noise(10.0, 17));
  EXPECT_EQ(CodeOf([&] { MixScene(Spec(1, 4.9), target, noise); }), ErrorCode::kOutOfRange);
  EXPECT_EQ(CodeOf([&] { MixScene(Spec(1, 40.1), target, noise); }), ErrorCode::kOutOfRange);
  EXPECT_EQ(CodeOf([&] { MixScene(Spec(0, 20.0), target, noise); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([&] { MixScene(Spec(1, 20.0), audio::Waveform(1, 320000), noise); }),
            ErrorCode::kZeroPower);
  EXPECT_EQ(CodeOf([&] { MixScene(Spec(1, 20.0), target, audio::Waveform(1, 320000)); }),
            ErrorCode::kZeroPower);
}

TEST(Synthetic, ClassesAndDrawRange) {
  for (int c = 0; c < kNumSyntheticClasses; ++c) {
    const auto t = SynthesizeTarget(c, 1);
    EXPECT_EQ(t.samples_per_channel(), 320000u);
    EXPECT_GT(dsp::MeanPower(t.channels[0]), 0.0);
    EXPECT_FALSE(SyntheticClassName(c).empty());
  }
  EXPECT_EQ(CodeOf([] { SynthesizeTarget(kNumSyntheticClasses, 1); }), ErrorCode::kOutOfRange);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double s = DrawSnrDb(rng);
    ASSERT_GE(s, 5.0);
    ASSERT_LT(s, 40.0);
  }
}

}  // namespace
}  // namespace gram::scene
