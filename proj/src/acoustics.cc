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

#include "gram/acoustics.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "gram/audio_io.h"

namespace gram::acoustics {
namespace {

namespace fs = std::filesystem;

constexpr int kHalfTaps = kFractionalDelayTaps / 2;
// Ears sit slightly behind the interaural axis, which gives the head-shadow
// shelf a weak front/back asymmetry.
constexpr double kEarAzimuthDeg = 100.0;
// Depth of the head-shadow shelf: HF power gain^2 = 1 + depth * cos(angle
// between source and ear axis). Power-complementary across ears on the
// interaural axis.
constexpr double kShadowDepth = 0.9;

double Distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double Sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(kPi * x) / (kPi * x);
}

// Adds amplitude * windowed-sinc centred at fractional sample `delay`.
void AddFractionalImpulse(dsp::Signal& out, double delay, double amplitude) {
  const long center = std::lround(delay);
  for (long n = center - kHalfTaps; n <= center + kHalfTaps; ++n) {
    if (n < 0 || n >= static_cast<long>(out.size())) continue;
    const double x = static_cast<double>(n) - delay;
    const double window = 0.5 * (1.0 + std::cos(kPi * x / (kHalfTaps + 1)));
    out[n] += amplitude * Sinc(x) * window;
  }
}

dsp::Signal FractionalDelayKernel(double delay, size_t length) {
  dsp::Signal kernel(length, 0.0);
  AddFractionalImpulse(kernel, delay, 1.0);
  return kernel;
}

dsp::Signal DirectConvolve(const dsp::Signal& x, const dsp::Signal& h,
                           size_t out_len) {
  dsp::Signal y(out_len, 0.0);
  for (size_t k = 0; k < h.size(); ++k) {
    if (h[k] == 0.0) continue;
    const double hk = h[k];
    const size_t limit = std::min(x.size(), out_len > k ? out_len - k : 0);
    for (size_t i = 0; i < limit; ++i) y[i + k] += hk * x[i];
  }
  return y;
}

// First-order shelf with unity gain at DC and `hf_gain` at high frequencies,
// corner at 2 * c / a (bilinear transform of the spherical-head shadow).
void HeadShadow(dsp::Signal& x, double hf_gain, int rate_hz) {
  const double omega0 = kSpeedOfSound / kHeadRadius;
  const double k = 2.0 * rate_hz / (2.0 * omega0);
  const double b0 = (1.0 + hf_gain * k) / (1.0 + k);
  const double b1 = (1.0 - hf_gain * k) / (1.0 + k);
  const double a1 = (1.0 - k) / (1.0 + k);
  double x1 = 0.0, y1 = 0.0;
  for (double& v : x) {
    const double y = b0 * v + b1 * x1 - a1 * y1;
    x1 = v;
    y1 = y;
    v = y;
  }
}

Vec3 UnitDirection(double azimuth_deg, double elevation_deg) {
  // Map azimuth to (-180, 180] so mirrored directions produce exactly
  // negated lateral components.
  double az = WrapDegrees(azimuth_deg);
  if (az > 180.0) az -= 360.0;
  const double a = DegToRad(az), e = DegToRad(elevation_deg);
  return {std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)};
}

}  // namespace

double RoomSpec::ReflectionCoefficient() const {
  return std::sqrt(1.0 - absorption);
}

bool RoomSpec::Contains(const Vec3& p, double clearance) const {
  for (int i = 0; i < 3; ++i) {
    if (!(p[i] > clearance && p[i] < dims_m[i] - clearance)) return false;
  }
  return true;
}

void RoomSpec::Validate() const {
  for (double d : dims_m) {
    Require(d > 2.0 * kWallClearance, ErrorCode::kInvalidArgument,
            "room dimensions must exceed twice the wall clearance");
  }
  Require(absorption > 0.0 && absorption <= 1.0, ErrorCode::kInvalidArgument,
          "absorption must lie in (0, 1]");
  Require(max_order >= 0, ErrorCode::kInvalidArgument,
          "max_order must be non-negative");
}

RoomSpec SampleDefaultRoom(uint64_t seed) {
  Rng rng(seed);
  RoomSpec room;
  room.dims_m = {rng.Uniform(4.0, 7.0), rng.Uniform(3.5, 6.0),
                 rng.Uniform(2.6, 3.4)};
  return room;
}

Direction RelativeDirection(const Vec3& listener, double heading_deg,
                            const Vec3& target) {
  const double dx = target[0] - listener[0];
  const double dy = target[1] - listener[1];
  const double dz = target[2] - listener[2];
  const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
  Direction dir;
  dir.distance_m = dist;
  dir.azimuth_deg = WrapDegrees(RadToDeg(std::atan2(dy, dx)) - heading_deg);
  dir.elevation_deg =
      dist > 0.0 ? RadToDeg(std::asin(std::clamp(dz / dist, -1.0, 1.0))) : 0.0;
  return dir;
}

ScenePose SampleScene(uint64_t seed, const RoomSpec& room) {
  room.Validate();
  Require(room.dims_m[2] - kWallClearance > kListenerHeight,
          ErrorCode::kInvalidArgument, "room too low for a 1.5 m listener");
  Rng rng(seed);
  ScenePose pose;
  pose.listener_heading_deg = rng.Uniform(0.0, 360.0);
  pose.source_azimuth_deg = rng.Uniform(0.0, 360.0);
  const bool localized = rng.Uniform() < 0.5;
  pose.noise_kind = localized ? NoiseKind::kLocalized : NoiseKind::kDiffuse;
  const int noise_count = localized ? 1 : 3 + static_cast<int>(rng.UniformInt(3));

  int draws = 0;
  auto spend = [&]() {
    if (++draws > kRejectionBudget) {
      Fail(ErrorCode::kRejectionBudgetExhausted,
           "scene sampling exceeded " + std::to_string(kRejectionBudget) +
               " draws");
    }
  };
  const double lo = kWallClearance;
  while (true) {
    spend();
    const double distance = rng.Uniform(kMinSourceDistance, kMaxSourceDistance);
    const double elevation = rng.Uniform(-90.0, 90.0);
    const Vec3 listener = {rng.Uniform(lo, room.dims_m[0] - lo),
                           rng.Uniform(lo, room.dims_m[1] - lo),
                           kListenerHeight};
    const double world_az =
        DegToRad(pose.listener_heading_deg + pose.source_azimuth_deg);
    const double e = DegToRad(elevation);
    const Vec3 source = {listener[0] + distance * std::cos(e) * std::cos(world_az),
                         listener[1] + distance * std::cos(e) * std::sin(world_az),
                         listener[2] + distance * std::sin(e)};
    if (!room.Contains(source, kWallClearance)) continue;
    pose.listener_pos_m = listener;
    pose.source_pos_m = source;
    pose.source_distance_m = distance;
    pose.source_elevation_deg = elevation;
    break;
  }
  while (static_cast<int>(pose.noise_positions_m.size()) < noise_count) {
    spend();
    const Vec3 p = {rng.Uniform(lo, room.dims_m[0] - lo),
                    rng.Uniform(lo, room.dims_m[1] - lo),
                    rng.Uniform(lo, room.dims_m[2] - lo)};
    if (Distance(p, pose.listener_pos_m) < 0.5) continue;
    pose.noise_positions_m.push_back(p);
  }
  return pose;
}

dsp::Signal ImageSourceRir(const RoomSpec& room, const Vec3& source,
                           const Vec3& receiver, int rate_hz) {
  room.Validate();
  Require(room.Contains(source) && room.Contains(receiver),
          ErrorCode::kInvalidArgument, "source and receiver must be inside the room");
  Require(Distance(source, receiver) > 1e-6, ErrorCode::kInvalidArgument,
          "source and receiver coincide");

  struct Image {
    double delay;
    double amplitude;
  };
  std::vector<Image> images;
  const double r = room.ReflectionCoefficient();
  const int order = room.max_order;
  const int n_max = (order + 1) / 2;
  const double samples_per_meter = rate_hz / kSpeedOfSound;
  double max_delay = 0.0;

  // Image coordinate along one axis: (1 - 2q) * s + 2 n L, reflecting
  // |2n - q| times.
  for (int nx = -n_max; nx <= n_max; ++nx) {
    for (int qx = 0; qx <= 1; ++qx) {
      const int ox = std::abs(2 * nx - qx);
      if (ox > order) continue;
      const double x = (1 - 2 * qx) * source[0] + 2.0 * nx * room.dims_m[0];
      for (int ny = -n_max; ny <= n_max; ++ny) {
        for (int qy = 0; qy <= 1; ++qy) {
          const int oy = std::abs(2 * ny - qy);
          if (ox + oy > order) continue;
          const double y = (1 - 2 * qy) * source[1] + 2.0 * ny * room.dims_m[1];
          for (int nz = -n_max; nz <= n_max; ++nz) {
            for (int qz = 0; qz <= 1; ++qz) {
              const int oz = std::abs(2 * nz - qz);
              const int total = ox + oy + oz;
              if (total > order) continue;
              if (r == 0.0 && total > 0) continue;
              const double z = (1 - 2 * qz) * source[2] + 2.0 * nz * room.dims_m[2];
              const double d = Distance({x, y, z}, receiver);
              const double amplitude = std::pow(r, total) / d;
              images.push_back({d * samples_per_meter, amplitude});
              max_delay = std::max(max_delay, d * samples_per_meter);
            }
          }
        }
      }
    }
  }
  const size_t length = static_cast<size_t>(std::ceil(max_delay)) + kHalfTaps + 2;
  dsp::Signal rir(length, 0.0);
  std::sort(images.begin(), images.end(),
            [](const Image& a, const Image& b) { return a.delay < b.delay; });
  for (const auto& img : images) AddFractionalImpulse(rir, img.delay, img.amplitude);
  return rir;
}

double InterauralTimeDifference(double azimuth_deg, double elevation_deg) {
  const Vec3 u = UnitDirection(azimuth_deg, elevation_deg);
  const double lateral = std::asin(std::clamp(std::abs(u[1]), 0.0, 1.0));
  const double itd = kHeadRadius / kSpeedOfSound * (lateral + std::sin(lateral));
  return u[1] >= 0.0 ? itd : -itd;
}

BinauralImpulseResponse Binauralize(const dsp::Signal& rir, double azimuth_deg,
                                    double elevation_deg, int rate_hz) {
  Require(azimuth_deg >= 0.0 && azimuth_deg < 360.0, ErrorCode::kOutOfRange,
          "azimuth must lie in [0, 360)");
  Require(elevation_deg >= -90.0 && elevation_deg <= 90.0,
          ErrorCode::kOutOfRange, "elevation must lie in [-90, 90]");
  Require(!rir.empty(), ErrorCode::kEmptyInput, "empty impulse response");

  const Vec3 u = UnitDirection(azimuth_deg, elevation_deg);
  const double lateral = std::asin(std::clamp(std::abs(u[1]), 0.0, 1.0));
  const double half_itd_samples = 0.5 * rate_hz * kHeadRadius / kSpeedOfSound *
                                  (lateral + std::sin(lateral));
  // Right ear leads for sources on the right (u_y > 0).
  const double sign = u[1] >= 0.0 ? 1.0 : -1.0;
  const double right_delay = kBinauralBulkDelay - sign * half_itd_samples;
  const double left_delay = kBinauralBulkDelay + sign * half_itd_samples;

  const double ear_cos = std::cos(DegToRad(kEarAzimuthDeg));
  const double ear_sin = std::sin(DegToRad(kEarAzimuthDeg));
  const double cos_right = u[0] * ear_cos + u[1] * ear_sin;
  const double cos_left = u[0] * ear_cos + u[1] * -ear_sin;
  const double gain_right = std::sqrt(1.0 + kShadowDepth * cos_right);
  const double gain_left = std::sqrt(1.0 + kShadowDepth * cos_left);

  const size_t kernel_len = 2 * kBinauralBulkDelay + 1;
  const size_t out_len = rir.size() + 2 * kBinauralBulkDelay;
  BinauralImpulseResponse brir;
  brir.rate_hz = rate_hz;
  brir.left = DirectConvolve(rir, FractionalDelayKernel(left_delay, kernel_len), out_len);
  brir.right = DirectConvolve(rir, FractionalDelayKernel(right_delay, kernel_len), out_len);
  HeadShadow(brir.left, gain_left, rate_hz);
  HeadShadow(brir.right, gain_right, rate_hz);
  brir.meta.source_azimuth_deg = azimuth_deg;
  brir.meta.source_elevation_deg = elevation_deg;
  return brir;
}

double MeasureRt60(const dsp::Signal& channel, int rate_hz) {
  Require(!channel.empty(), ErrorCode::kEmptyInput, "empty impulse response");
  std::vector<double> edc(channel.size());
  double acc = 0.0;
  for (size_t i = channel.size(); i-- > 0;) {
    acc += channel[i] * channel[i];
    edc[i] = acc;
  }
  Require(acc > 0.0, ErrorCode::kInsufficientDecay, "impulse response is silent");
  const double total = acc;
  long start = -1, stop = -1;
  for (size_t i = 0; i < edc.size(); ++i) {
    const double db = 10.0 * std::log10(std::max(edc[i] / total, 1e-300));
    if (start < 0 && db <= -5.0) start = static_cast<long>(i);
    if (db <= -25.0) {
      stop = static_cast<long>(i);
      break;
    }
  }
  Require(start >= 0 && stop > start, ErrorCode::kInsufficientDecay,
          "energy decay curve does not reach -25 dB");
  // Least-squares line through (t, dB) on [start, stop].
  double sum_t = 0, sum_y = 0, sum_tt = 0, sum_ty = 0;
  const double n = static_cast<double>(stop - start + 1);
  for (long i = start; i <= stop; ++i) {
    const double t = static_cast<double>(i) / rate_hz;
    const double y = 10.0 * std::log10(edc[i] / total);
    sum_t += t;
    sum_y += y;
    sum_tt += t * t;
    sum_ty += t * y;
  }
  const double denom = n * sum_tt - sum_t * sum_t;
  Require(denom > 0.0, ErrorCode::kInsufficientDecay, "degenerate decay fit");
  const double slope = (n * sum_ty - sum_t * sum_y) / denom;  // dB per second
  Require(slope < 0.0, ErrorCode::kInsufficientDecay, "decay slope is not negative");
  const double t20 = -20.0 / slope;
  return 3.0 * t20;
}

double MeasureRt60(const BinauralImpulseResponse& brir) {
  return 0.5 * (MeasureRt60(brir.left, brir.rate_hz) +
                MeasureRt60(brir.right, brir.rate_hz));
}

SceneBrirs RenderSceneBrirs(const RoomSpec& room, const ScenePose& pose,
                            int rate_hz) {
  auto render = [&](const Vec3& position) {
    const dsp::Signal rir = ImageSourceRir(room, position, pose.listener_pos_m, rate_hz);
    const Direction dir =
        RelativeDirection(pose.listener_pos_m, pose.listener_heading_deg, position);
    BinauralImpulseResponse brir =
        Binauralize(rir, dir.azimuth_deg, dir.elevation_deg, rate_hz);
    brir.meta.distance_m = dir.distance_m;
    brir.meta.rt60_s = MeasureRt60(brir);
    return brir;
  };
  SceneBrirs out;
  out.source = render(pose.source_pos_m);
  for (const auto& p : pose.noise_positions_m) out.noise.push_back(render(p));
  return out;
}

nlohmann::ordered_json RoomToJson(const RoomSpec& room) {
  nlohmann::ordered_json j;
  j["dims_m"] = room.dims_m;
  j["absorption"] = room.absorption;
  j["max_order"] = room.max_order;
  return j;
}

RoomSpec RoomFromJson(const nlohmann::json& j) {
  RoomSpec room;
  room.dims_m = j.at("dims_m").get<Vec3>();
  room.absorption = j.value("absorption", kDefaultAbsorption);
  room.max_order = j.value("max_order", kDefaultMaxOrder);
  room.Validate();
  return room;
}

nlohmann::ordered_json PoseToJson(const ScenePose& pose) {
  nlohmann::ordered_json j;
  j["listener_pos_m"] = pose.listener_pos_m;
  j["listener_heading_deg"] = pose.listener_heading_deg;
  j["source_pos_m"] = pose.source_pos_m;
  j["noise_positions_m"] = pose.noise_positions_m;
  j["noise_kind"] = pose.noise_kind == NoiseKind::kLocalized ? "localized" : "diffuse";
  j["source_azimuth_deg"] = pose.source_azimuth_deg;
  j["source_elevation_deg"] = pose.source_elevation_deg;
  j["source_distance_m"] = pose.source_distance_m;
  return j;
}

ScenePose PoseFromJson(const nlohmann::json& j) {
  ScenePose pose;
  pose.listener_pos_m = j.at("listener_pos_m").get<Vec3>();
  pose.listener_heading_deg = j.at("listener_heading_deg").get<double>();
  pose.source_pos_m = j.at("source_pos_m").get<Vec3>();
  pose.noise_positions_m = j.at("noise_positions_m").get<std::vector<Vec3>>();
  pose.noise_kind = j.at("noise_kind").get<std::string>() == "localized"
                        ? NoiseKind::kLocalized
                        : NoiseKind::kDiffuse;
  pose.source_azimuth_deg = j.value("source_azimuth_deg", 0.0);
  pose.source_elevation_deg = j.value("source_elevation_deg", 0.0);
  pose.source_distance_m = j.value("source_distance_m", 0.0);
  return pose;
}

void ExportBrir(const fs::path& wav_path, const BinauralImpulseResponse& brir,
                const RoomSpec& room, uint64_t seed) {
  audio::WriteWav(wav_path, audio::Waveform::Stereo(brir.left, brir.right, brir.rate_hz),
                  audio::WavEncoding::kFloat32);
  nlohmann::ordered_json j;
  j["rt60_s"] = brir.meta.rt60_s;
  j["azimuth_deg"] = brir.meta.source_azimuth_deg;
  j["elevation_deg"] = brir.meta.source_elevation_deg;
  j["distance_m"] = brir.meta.distance_m;
  j["room"] = RoomToJson(room);
  j["seed"] = seed;
  fs::path sidecar = wav_path;
  sidecar.replace_extension(".json");
  std::ofstream out(sidecar);
  if (!out) Fail(ErrorCode::kUnwritablePath, "cannot write " + sidecar.string());
  out << j.dump(2) << '\n';
}

BinauralImpulseResponse LoadBrir(const fs::path& wav_path, const BrirMeta& fallback) {
  const audio::Waveform wav = audio::ReadWav(wav_path);
  audio::RequireRate(wav);
  Require(wav.num_channels() == 2, ErrorCode::kInvalidArgument,
          "BRIR must be a stereo WAV: " + wav_path.string());
  BinauralImpulseResponse brir;
  brir.left = wav.channels[0];
  brir.right = wav.channels[1];
  brir.rate_hz = wav.rate_hz;
  brir.meta = fallback;
  fs::path sidecar = wav_path;
  sidecar.replace_extension(".json");
  if (fs::exists(sidecar)) {
    std::ifstream in(sidecar);
    const nlohmann::json j = nlohmann::json::parse(in);
    brir.meta.rt60_s = j.value("rt60_s", 0.0);
    brir.meta.source_azimuth_deg = j.value("azimuth_deg", fallback.source_azimuth_deg);
    brir.meta.source_elevation_deg =
        j.value("elevation_deg", fallback.source_elevation_deg);
    brir.meta.distance_m = j.value("distance_m", fallback.distance_m);
  } else {
    brir.meta.rt60_s = MeasureRt60(brir);
  }
  return brir;
}

}  // namespace gram::acoustics
