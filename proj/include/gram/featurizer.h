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

#ifndef GRAM_FEATURIZER_H_
#define GRAM_FEATURIZER_H_

#include <cmath>
#include <string>
#include <vector>

#include "gram/audio_io.h"
#include "gram/dsp.h"
#include "gram/spectrogram.h"

namespace gram::features {

inline constexpr int kWindowLength = 800;  // 25 ms at 32 kHz
inline constexpr int kHopLength = 320;     // 10 ms at 32 kHz
// The 800-sample window is zero-padded to this transform size.
inline constexpr int kFftSize = 2048;
inline constexpr double kLogFloorEpsilon = 1e-10;
inline constexpr int kSegmentsPerClip = 16;

struct LogMelOptions {
  // Output frame count. -1: 1024 for exactly 10 s input, otherwise the
  // natural count 1 + len / hop. 0: always natural. Padding uses log(eps).
  int target_frames = -1;
};

// Per channel: centred STFT (reflect padding, periodic Hann 800, hop 320),
// power spectrum, 128-band mel projection (50-16000 Hz), natural log of
// (x + 1e-10). Input must be two channels at 32 kHz.
BinauralSpectrogram LogMel(const audio::Waveform& audio,
                           const LogMelOptions& options = {});

// The filterbank used by LogMel.
const dsp::MelFilterbank& SharedFilterbank();

inline float LogFloor() {
  return static_cast<float>(std::log(kLogFloorEpsilon));
}

struct SegmentBatch {
  std::vector<BinauralSpectrogram> segments;
  std::vector<std::string> parent_ids;
  std::vector<int> offsets_frames;

  size_t size() const { return segments.size(); }
};

BinauralSpectrogram CropFrames(const BinauralSpectrogram& spec, int offset,
                               int frames);

// Draws `count` crops of `segment_frames` frames with offsets uniform over
// [0, frames - segment_frames]. Throws kInvalidArgument for short clips.
SegmentBatch SampleSegments(const BinauralSpectrogram& spec, uint64_t seed,
                            const std::string& parent_id = "",
                            int count = kSegmentsPerClip,
                            int segment_frames = kSegmentFrames);

// Concatenates per-clip SegmentBatches for a batch of clips; clip i uses
// DeriveSeed(seed, i).
SegmentBatch SampleBatch(const std::vector<const BinauralSpectrogram*>& clips,
                         const std::vector<std::string>& ids, uint64_t seed,
                         int count = kSegmentsPerClip,
                         int segment_frames = kSegmentFrames);

}  // namespace gram::features

#endif  // GRAM_FEATURIZER_H_
