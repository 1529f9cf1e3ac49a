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

#ifndef GRAM_SCENE_MIXER_H_
#define GRAM_SCENE_MIXER_H_

#include <array>
#include <string>
#include <vector>

#include "gram/acoustics.h"
#include "gram/audio_io.h"

namespace gram::scene {

inline constexpr double kSceneDurationS = 10.0;
inline constexpr double kNoiseFadeS = 0.2;
inline constexpr double kMinSnrDb = 5.0;
inline constexpr double kMaxSnrDb = 40.0;

struct SceneSpec {
  std::string scene_id;
  std::string target_clip;  // manifest id
  std::string noise_clip;   // manifest id
  acoustics::SceneBrirs brirs;
  double snr_db = 20.0;
  uint64_t seed = 0;
  // Forces b = 0 so the output equals the reverberant target exactly.
  bool noiseless = false;
};

struct SceneMeta {
  std::string scene_id;
  double snr_db = 0.0;
  double b = 0.0;
  std::array<double, 3> source_unit_vector{};
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
};

struct MixedScene {
  audio::Waveform audio;  // 2 channels, 10 s
  SceneMeta meta;
  // The two mixed parts, T and b * N, trimmed like `audio`.
  audio::Waveform target_part;
  audio::Waveform noise_part;
};

// Trims to 10 s (or loop-pads shorter clips with 200 ms linear crossfades),
// then applies 200 ms fade-in/out. Input must be mono, >= 0.4 s.
audio::Waveform PrepareNoise(const audio::Waveform& noise);

// T = source BRIR (*) target per ear; N = sum_i noise BRIR_i (*) noise;
// scene = T + b N with b from the full-clip power of both ears.
// `noise` is used as given (call PrepareNoise first).
MixedScene MixScene(const SceneSpec& spec, const audio::Waveform& target,
                    const audio::Waveform& noise);

// v = (cos e cos a, cos e sin a, sin e).
std::array<double, 3> DirectionVector(double azimuth_deg, double elevation_deg);

// Uniform draw from [5, 40] dB.
double DrawSnrDb(Rng& rng);

// Synthetic stand-ins for the target and noise corpora. Target clips come
// from a small set of sound classes so that clip-level probes have labels.
inline constexpr int kNumSyntheticClasses = 4;
std::string SyntheticClassName(int cls);
audio::Waveform SynthesizeTarget(int cls, uint64_t seed,
                                 double duration_s = kSceneDurationS);
audio::Waveform SynthesizeNoise(uint64_t seed, double duration_s = 12.0);

}  // namespace gram::scene

#endif  // GRAM_SCENE_MIXER_H_
