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

#ifndef GRAM_AUDIO_IO_H_
#define GRAM_AUDIO_IO_H_

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "gram/common.h"
#include "gram/spectrogram.h"

namespace gram::audio {

// Multi-channel audio. Samples are held in double precision; float32 files
// round-trip exactly because float -> double -> float is lossless.
struct Waveform {
  int rate_hz = kSampleRate;
  std::vector<std::vector<double>> channels;

  Waveform() = default;
  Waveform(int num_channels, size_t samples_per_channel,
           int rate = kSampleRate)
      : rate_hz(rate),
        channels(num_channels, std::vector<double>(samples_per_channel, 0.0)) {}
  static Waveform Mono(std::vector<double> samples, int rate = kSampleRate);
  static Waveform Stereo(std::vector<double> left, std::vector<double> right,
                         int rate = kSampleRate);

  int num_channels() const { return static_cast<int>(channels.size()); }
  size_t samples_per_channel() const {
    return channels.empty() ? 0 : channels.front().size();
  }
  double duration_s() const {
    return static_cast<double>(samples_per_channel()) / rate_hz;
  }

  // Throws kInvalidArgument when channel lengths differ, the rate is not
  // positive, or a sample is NaN/Inf.
  void Validate() const;
};

// Throws kInvalidArgument unless the waveform is at the internal rate.
void RequireRate(const Waveform& wav, int rate_hz = kSampleRate);

enum class WavEncoding { kPcm16, kFloat32 };

// Reads PCM16 or IEEE float32 RIFF/WAVE. PCM16 is scaled by 1/32768.
// Errors: kMissingFile, kUnsupportedEncoding, kCorruptHeader.
Waveform ReadWav(const std::filesystem::path& path);

void WriteWav(const std::filesystem::path& path, const Waveform& wav,
              WavEncoding encoding = WavEncoding::kFloat32);

// FeatureFile: "GRAMBSF1", u32 channels, u32 frames, u32 mels, then float32
// little-endian payload in channel-major, frame-row order.
inline constexpr char kFeatureMagic[8] = {'G', 'R', 'A', 'M',
                                          'B', 'S', 'F', '1'};
inline constexpr size_t kFeatureHeaderBytes = 8 + 3 * 4;

void WriteFeature(const std::filesystem::path& path,
                  const BinauralSpectrogram& spec);
BinauralSpectrogram ReadFeature(const std::filesystem::path& path);

// A manifest label is either a class name or a real vector (unit-sphere
// direction for localization tasks).
using Label = std::variant<std::monostate, std::string, std::vector<double>>;

struct ManifestEntry {
  std::string id;
  std::string audio_path;
  Label label;
  double duration_s = 0.0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  const ManifestEntry* Find(const std::string& id) const;
};

// Line-delimited JSON, one object per entry. Relative audio paths are
// resolved against the manifest's directory. With `check_paths`, missing
// files raise kMissingFile. Duplicate ids raise kDuplicateId naming the id.
Manifest LoadManifest(const std::filesystem::path& path,
                      bool check_paths = true);
void SaveManifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace gram::audio

#endif  // GRAM_AUDIO_IO_H_
