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

#ifndef GRAM_ACOUSTICS_H_
#define GRAM_ACOUSTICS_H_

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gram/common.h"
#include "gram/dsp.h"
#include "json.hpp"

namespace gram::acoustics {

using Vec3 = std::array<double, 3>;

inline constexpr double kListenerHeight = 1.5;      // m
inline constexpr double kMinSourceDistance = 1.5;   // m
inline constexpr double kMaxSourceDistance = 5.0;   // m
inline constexpr double kWallClearance = 0.25;      // m, all sampled points
inline constexpr int kRejectionBudget = 10000;
// Default uniform wall absorption; tuned so that default rooms measure an
// RT60 inside [0.2, 0.5] s.
inline constexpr double kDefaultAbsorption = 0.35;
inline constexpr int kDefaultMaxOrder = 30;
inline constexpr int kFractionalDelayTaps = 33;

struct RoomSpec {
  Vec3 dims_m = {5.0, 4.0, 3.0};
  double absorption = kDefaultAbsorption;  // (0, 1], uniform over walls
  int max_order = kDefaultMaxOrder;

  double ReflectionCoefficient() const;
  bool Contains(const Vec3& p, double clearance = 0.0) const;
  void Validate() const;
};

// Draws a room from the default distribution (dims in [4,7] x [3.5,6] x
// [2.6,3.4] m, default absorption and order).
RoomSpec SampleDefaultRoom(uint64_t seed);

enum class NoiseKind { kLocalized, kDiffuse };

struct ScenePose {
  Vec3 listener_pos_m{};
  double listener_heading_deg = 0.0;  // [0, 360)
  Vec3 source_pos_m{};
  std::vector<Vec3> noise_positions_m;
  NoiseKind noise_kind = NoiseKind::kLocalized;

  // Sampled head-relative direction and distance of the source.
  double source_azimuth_deg = 0.0;
  double source_elevation_deg = 0.0;
  double source_distance_m = 0.0;
};

struct BrirMeta {
  double rt60_s = 0.0;
  double source_azimuth_deg = 0.0;
  double source_elevation_deg = 0.0;
  double distance_m = 0.0;
};

struct BinauralImpulseResponse {
  dsp::Signal left;
  dsp::Signal right;
  int rate_hz = kSampleRate;
  BrirMeta meta;

  size_t size() const { return left.size(); }
};

// Head-relative direction of `target` seen from `listener` facing
// `heading_deg`. Azimuth grows from the front (+x) towards the right ear;
// elevation is positive upwards.
struct Direction {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double distance_m = 0.0;
};
Direction RelativeDirection(const Vec3& listener, double heading_deg,
                            const Vec3& target);

// Listener at 1.5 m, random heading, source at a head-relative direction
// with distance in [1.5, 5] m, azimuth uniform in [0, 360) and elevation
// proposed uniformly in [-90, 90]; localized noise (p = 0.5, one position)
// or diffuse noise (3, 4 or 5 positions) uniform over the interior.
// The azimuth is drawn once and kept; distance, elevation and listener
// position are redrawn until every point lies inside the room.
// Throws kRejectionBudgetExhausted after 10,000 draws.
ScenePose SampleScene(uint64_t seed, const RoomSpec& room);

// Shoebox image-source response at the receiver: impulses of amplitude
// r^k / d at delay d / c placed with a 33-tap Hann-windowed sinc.
// Throws kInvalidArgument for coincident or outside points.
dsp::Signal ImageSourceRir(const RoomSpec& room, const Vec3& source,
                           const Vec3& receiver, int rate_hz = kSampleRate);

// Interaural time difference (seconds) for a head-relative direction;
// positive when the right ear leads.
double InterauralTimeDifference(double azimuth_deg, double elevation_deg);

// Applies the spherical-head model to a monaural response: Woodworth ITD
// split +/- ITD/2 as fractional delays around a common bulk delay, then a
// first-order head-shadow shelf per ear. `meta.rt60_s` is left at zero.
BinauralImpulseResponse Binauralize(const dsp::Signal& rir, double azimuth_deg,
                                    double elevation_deg,
                                    int rate_hz = kSampleRate);

// Common delay (samples) added to both ears by Binauralize.
inline constexpr int kBinauralBulkDelay = 32;

// Schroeder backward integration, least-squares line on the [-5, -25] dB
// part of the decay curve, RT60 = 3 * T20; averaged over channels.
// Throws kInsufficientDecay when the curve never reaches -25 dB.
double MeasureRt60(const dsp::Signal& channel, int rate_hz = kSampleRate);
double MeasureRt60(const BinauralImpulseResponse& brir);

struct SceneBrirs {
  BinauralImpulseResponse source;
  std::vector<BinauralImpulseResponse> noise;
};

// One BRIR per source/noise position, each relative to the listener heading.
SceneBrirs RenderSceneBrirs(const RoomSpec& room, const ScenePose& pose,
                            int rate_hz = kSampleRate);

// BRIR export: stereo float32 WAV plus a JSON sidecar next to it
// ({rt60_s, azimuth_deg, elevation_deg, distance_m, room, seed}).
void ExportBrir(const std::filesystem::path& wav_path,
                const BinauralImpulseResponse& brir, const RoomSpec& room,
                uint64_t seed);
// Loads an external or exported BRIR. The sidecar is optional; without it
// the RT60 is measured and angles are taken from `fallback`.
BinauralImpulseResponse LoadBrir(const std::filesystem::path& wav_path,
                                 const BrirMeta& fallback = {});

nlohmann::ordered_json RoomToJson(const RoomSpec& room);
RoomSpec RoomFromJson(const nlohmann::json& j);
nlohmann::ordered_json PoseToJson(const ScenePose& pose);
ScenePose PoseFromJson(const nlohmann::json& j);

}  // namespace gram::acoustics

#endif  // GRAM_ACOUSTICS_H_
