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

#ifndef GRAM_SPECTROGRAM_H_
#define GRAM_SPECTROGRAM_H_

#include <cstddef>
#include <vector>

namespace gram {

inline constexpr int kNumMels = 128;
inline constexpr int kSceneFrames = 1024;
inline constexpr int kSegmentFrames = 200;

// Log-mel array laid out channel-major, then frame rows of `mels` values.
struct BinauralSpectrogram {
  int channels = 2;
  int frames = 0;
  int mels = kNumMels;
  std::vector<float> values;

  BinauralSpectrogram() = default;
  BinauralSpectrogram(int channels_in, int frames_in, int mels_in,
                      float fill = 0.0f)
      : channels(channels_in),
        frames(frames_in),
        mels(mels_in),
        values(static_cast<size_t>(channels_in) * frames_in * mels_in, fill) {}

  size_t Index(int c, int t, int m) const {
    return (static_cast<size_t>(c) * frames + t) * mels + m;
  }
  float& at(int c, int t, int m) { return values[Index(c, t, m)]; }
  float at(int c, int t, int m) const { return values[Index(c, t, m)]; }
  size_t size() const { return values.size(); }

  bool operator==(const BinauralSpectrogram&) const = default;
};

}  // namespace gram

#endif  // GRAM_SPECTROGRAM_H_
