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

#include "gram/featurizer.h"

#include <cmath>
#include <complex>

namespace gram::features {
namespace {

dsp::Signal ReflectPad(const dsp::Signal& x, int pad) {
  Require(x.size() > static_cast<size_t>(pad), ErrorCode::kInvalidArgument,
          "signal shorter than half a window");
  const size_t n = x.size();
  dsp::Signal out(n + 2 * pad);
  for (int i = 0; i < pad; ++i) {
    out[i] = x[pad - i];
    out[n + pad + i] = x[n - 2 - i];
  }
  std::copy(x.begin(), x.end(), out.begin() + pad);
  return out;
}

}  // namespace

const dsp::MelFilterbank& SharedFilterbank() {
  static const dsp::MelFilterbank fb =
      dsp::BuildMelFilterbank(kFftSize, kSampleRate, kNumMels, 50.0, 16000.0);
  return fb;
}

BinauralSpectrogram LogMel(const audio::Waveform& audio,
                           const LogMelOptions& options) {
  Require(audio.num_channels() == 2, ErrorCode::kInvalidArgument,
          "log-mel input must have 2 channels");
  audio::RequireRate(audio);
  audio.Validate();
  const size_t n = audio.samples_per_channel();
  const int natural = 1 + static_cast<int>(n / kHopLength);
  int frames = natural;
  if (options.target_frames > 0) {
    frames = options.target_frames;
  } else if (options.target_frames < 0 &&
             n == static_cast<size_t>(10 * kSampleRate)) {
    frames = kSceneFrames;
  }

  const auto& fb = SharedFilterbank();
  const std::vector<double> window = dsp::HannWindow(kWindowLength);
  const int half = kWindowLength / 2;
  const dsp::Signal left = ReflectPad(audio.channels[0], half);
  const dsp::Signal right = ReflectPad(audio.channels[1], half);

  BinauralSpectrogram spec(2, frames, kNumMels, LogFloor());
  const int bins = kFftSize / 2 + 1;
  std::vector<std::complex<double>> buf(kFftSize);
  std::vector<double> power_l(bins), power_r(bins), mel(kNumMels);
  const int computed = std::min(frames, natural);
  for (int t = 0; t < computed; ++t) {
    // Both ears share one complex transform: left in the real part, right in
    // the imaginary part.
    const size_t start = static_cast<size_t>(t) * kHopLength;
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int i = 0; i < kWindowLength; ++i) {
      buf[i] = {left[start + i] * window[i], right[start + i] * window[i]};
    }
    dsp::Fft(buf);
    for (int k = 0; k < bins; ++k) {
      const std::complex<double> z = buf[k];
      const std::complex<double> zc = std::conj(buf[(kFftSize - k) & (kFftSize - 1)]);
      power_l[k] = std::norm(0.5 * (z + zc));
      power_r[k] = std::norm(0.5 * (z - zc));
    }
    fb.Apply(power_l, mel);
    for (int m = 0; m < kNumMels; ++m) {
      spec.at(0, t, m) = static_cast<float>(std::log(mel[m] + kLogFloorEpsilon));
    }
    fb.Apply(power_r, mel);
    for (int m = 0; m < kNumMels; ++m) {
      spec.at(1, t, m) = static_cast<float>(std::log(mel[m] + kLogFloorEpsilon));
    }
  }
  return spec;
}

BinauralSpectrogram CropFrames(const BinauralSpectrogram& spec, int offset,
                               int frames) {
  Require(offset >= 0 && frames > 0 && offset + frames <= spec.frames,
          ErrorCode::kOutOfRange, "crop outside spectrogram");
  BinauralSpectrogram out(spec.channels, frames, spec.mels);
  for (int c = 0; c < spec.channels; ++c) {
    const float* src = &spec.values[spec.Index(c, offset, 0)];
    std::copy(src, src + static_cast<size_t>(frames) * spec.mels,
              &out.values[out.Index(c, 0, 0)]);
  }
  return out;
}

SegmentBatch SampleSegments(const BinauralSpectrogram& spec, uint64_t seed,
                            const std::string& parent_id, int count,
                            int segment_frames) {
  Require(spec.frames >= segment_frames, ErrorCode::kInvalidArgument,
          "clip has " + std::to_string(spec.frames) +
              " frames, shorter than one segment of " +
              std::to_string(segment_frames));
  Rng rng(seed);
  SegmentBatch batch;
  const uint64_t choices = static_cast<uint64_t>(spec.frames - segment_frames + 1);
  for (int i = 0; i < count; ++i) {
    const int offset = static_cast<int>(rng.UniformInt(choices));
    batch.segments.push_back(CropFrames(spec, offset, segment_frames));
    batch.parent_ids.push_back(parent_id);
    batch.offsets_frames.push_back(offset);
  }
  return batch;
}

SegmentBatch SampleBatch(const std::vector<const BinauralSpectrogram*>& clips,
                         const std::vector<std::string>& ids, uint64_t seed,
                         int count, int segment_frames) {
  Require(clips.size() == ids.size(), ErrorCode::kInvalidArgument,
          "clip and id counts differ");
  SegmentBatch out;
  for (size_t i = 0; i < clips.size(); ++i) {
    SegmentBatch one = SampleSegments(*clips[i], DeriveSeed(seed, i), ids[i],
                                      count, segment_frames);
    for (size_t k = 0; k < one.size(); ++k) {
      out.segments.push_back(std::move(one.segments[k]));
      out.parent_ids.push_back(one.parent_ids[k]);
      out.offsets_frames.push_back(one.offsets_frames[k]);
    }
  }
  return out;
}

}  // namespace gram::features
