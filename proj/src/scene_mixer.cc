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

#include "gram/scene_mixer.h"

#include <algorithm>
#include <cmath>

#include "gram/dsp.h"

namespace gram::scene {
namespace {

size_t SceneSamples() {
  return static_cast<size_t>(std::llround(kSceneDurationS * kSampleRate));
}

dsp::Signal FitLength(dsp::Signal x, size_t length) {
  x.resize(length, 0.0);
  return x;
}

dsp::Signal SumKernels(const std::vector<acoustics::BinauralImpulseResponse>& brirs,
                       bool left) {
  size_t length = 0;
  for (const auto& b : brirs) length = std::max(length, b.size());
  dsp::Signal sum(length, 0.0);
  for (const auto& b : brirs) {
    const auto& ch = left ? b.left : b.right;
    for (size_t i = 0; i < ch.size(); ++i) sum[i] += ch[i];
  }
  return sum;
}

void NormalizeRms(dsp::Signal& x, double rms) {
  const double p = dsp::MeanPower(x);
  if (p <= 0.0) return;
  const double g = rms / std::sqrt(p);
  for (double& v : x) v *= g;
}

// One-pole low-pass, in place.
void OnePole(dsp::Signal& x, double cutoff_hz) {
  const double a = std::exp(-2.0 * kPi * cutoff_hz / kSampleRate);
  double y = 0.0;
  for (double& v : x) {
    y = (1.0 - a) * v + a * y;
    v = y;
  }
}

}  // namespace

audio::Waveform PrepareNoise(const audio::Waveform& noise) {
  Require(noise.num_channels() == 1, ErrorCode::kInvalidArgument,
          "noise clip must be mono");
  audio::RequireRate(noise);
  const auto fade = static_cast<size_t>(std::llround(kNoiseFadeS * kSampleRate));
  const dsp::Signal& x = noise.channels.front();
  Require(x.size() >= 2 * fade, ErrorCode::kInvalidArgument,
          "noise clip shorter than 0.4 s");
  const size_t target_len = SceneSamples();
  dsp::Signal out(x.begin(), x.begin() + std::min(x.size(), target_len));
  // Loop-pad: each repetition overlaps the previous tail by one fade length
  // with a linear crossfade.
  while (out.size() < target_len) {
    const size_t seam = out.size() - fade;
    for (size_t i = 0; i < fade; ++i) {
      const double g = static_cast<double>(i + 1) / static_cast<double>(fade + 1);
      out[seam + i] = (1.0 - g) * out[seam + i] + g * x[i];
    }
    for (size_t i = fade; i < x.size() && out.size() < target_len; ++i) {
      out.push_back(x[i]);
    }
  }
  return audio::Waveform::Mono(dsp::ApplyFade(out, kNoiseFadeS, kSampleRate));
}

std::array<double, 3> DirectionVector(double azimuth_deg, double elevation_deg) {
  const double a = DegToRad(WrapDegrees(azimuth_deg));
  const double e = DegToRad(elevation_deg);
  return {std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)};
}

double DrawSnrDb(Rng& rng) { return rng.Uniform(kMinSnrDb, kMaxSnrDb); }

MixedScene MixScene(const SceneSpec& spec, const audio::Waveform& target,
                    const audio::Waveform& noise) {
  Require(target.num_channels() == 1 && noise.num_channels() == 1,
          ErrorCode::kInvalidArgument, "target and noise clips must be mono");
  audio::RequireRate(target);
  audio::RequireRate(noise);
  Require(!spec.brirs.noise.empty(), ErrorCode::kInvalidArgument,
          "scene needs at least one noise BRIR");
  if (!spec.noiseless) {
    Require(spec.snr_db >= kMinSnrDb && spec.snr_db <= kMaxSnrDb,
            ErrorCode::kOutOfRange, "SNR must lie in [5, 40] dB");
  }
  const size_t length = SceneSamples();

  auto [t_left, t_right] = dsp::FftConvolvePair(
      target.channels.front(), spec.brirs.source.left, spec.brirs.source.right);
  t_left = FitLength(std::move(t_left), length);
  t_right = FitLength(std::move(t_right), length);
  const double p_target = dsp::MeanPower({t_left, t_right});
  Require(p_target > 0.0, ErrorCode::kZeroPower, "convolved target is silent");

  MixedScene scene;
  double b = 0.0;
  dsp::Signal n_left(length, 0.0), n_right(length, 0.0);
  if (!spec.noiseless) {
    // Convolution is linear, so summing the noise BRIRs first gives N = sum N_i.
    const dsp::Signal h_left = SumKernels(spec.brirs.noise, true);
    const dsp::Signal h_right = SumKernels(spec.brirs.noise, false);
    auto [nl, nr] = dsp::FftConvolvePair(noise.channels.front(), h_left, h_right);
    n_left = FitLength(std::move(nl), length);
    n_right = FitLength(std::move(nr), length);
    b = dsp::ComputeSnrScale(p_target, dsp::MeanPower({n_left, n_right}), spec.snr_db).b;
  }
  for (size_t i = 0; i < length; ++i) {
    n_left[i] *= b;
    n_right[i] *= b;
  }
  dsp::Signal left(length), right(length);
  for (size_t i = 0; i < length; ++i) {
    left[i] = t_left[i] + n_left[i];
    right[i] = t_right[i] + n_right[i];
  }
  scene.audio = audio::Waveform::Stereo(std::move(left), std::move(right));
  scene.target_part = audio::Waveform::Stereo(std::move(t_left), std::move(t_right));
  scene.noise_part = audio::Waveform::Stereo(std::move(n_left), std::move(n_right));
  scene.meta.scene_id = spec.scene_id;
  scene.meta.snr_db = spec.noiseless ? INFINITY : spec.snr_db;
  scene.meta.b = b;
  scene.meta.azimuth_deg = spec.brirs.source.meta.source_azimuth_deg;
  scene.meta.elevation_deg = spec.brirs.source.meta.source_elevation_deg;
  scene.meta.source_unit_vector =
      DirectionVector(scene.meta.azimuth_deg, scene.meta.elevation_deg);
  return scene;
}

std::string SyntheticClassName(int cls) {
  switch (cls) {
    case 0: return "harmonic";
    case 1: return "chirp";
    case 2: return "noise_burst";
    case 3: return "click_train";
  }
  Fail(ErrorCode::kOutOfRange, "unknown synthetic class " + std::to_string(cls));
}

audio::Waveform SynthesizeTarget(int cls, uint64_t seed, double duration_s) {
  Require(cls >= 0 && cls < kNumSyntheticClasses, ErrorCode::kOutOfRange,
          "unknown synthetic class " + std::to_string(cls));
  Rng rng(seed);
  const auto n = static_cast<size_t>(std::llround(duration_s * kSampleRate));
  dsp::Signal x(n, 0.0);
  const double fs = kSampleRate;
  switch (cls) {
    case 0: {  // Sequence of harmonic notes with vibrato.
      size_t pos = 0;
      while (pos < n) {
        const size_t len = static_cast<size_t>(rng.Uniform(0.2, 0.8) * fs);
        const double f0 = rng.Uniform(150.0, 600.0);
        const double vib_rate = rng.Uniform(3.0, 7.0);
        const double vib_depth = rng.Uniform(0.0, 0.02);
        double phase = 0.0;
        for (size_t i = 0; i < len && pos + i < n; ++i) {
          const double t = i / fs;
          const double f = f0 * (1.0 + vib_depth * std::sin(2.0 * kPi * vib_rate * t));
          phase += 2.0 * kPi * f / fs;
          const double env = std::min(1.0, t / 0.02) * std::exp(-2.0 * t);
          double v = 0.0;
          for (int k = 1; k <= 8 && k * f < 15000.0; ++k) v += std::sin(k * phase) / k;
          x[pos + i] = env * v;
        }
        pos += len;
      }
      break;
    }
    case 1: {  // Repeated logarithmic sweeps.
      size_t pos = 0;
      double phase = 0.0;
      while (pos < n) {
        const size_t len = static_cast<size_t>(rng.Uniform(0.3, 1.5) * fs);
        const double f_start = rng.Uniform(200.0, 1000.0);
        const double f_end = rng.Uniform(2000.0, 8000.0);
        const bool up = rng.Uniform() < 0.5;
        for (size_t i = 0; i < len && pos + i < n; ++i) {
          const double frac = static_cast<double>(i) / len;
          const double r = up ? frac : 1.0 - frac;
          const double f = f_start * std::pow(f_end / f_start, r);
          phase += 2.0 * kPi * f / fs;
          x[pos + i] = std::sin(phase) * std::sin(kPi * frac);
        }
        pos += len;
      }
      break;
    }
    case 2: {  // Low-passed noise bursts.
      dsp::Signal noise(n);
      for (double& v : noise) v = rng.Normal();
      OnePole(noise, rng.Uniform(500.0, 6000.0));
      size_t pos = 0;
      while (pos < n) {
        const size_t on = static_cast<size_t>(rng.Uniform(0.05, 0.4) * fs);
        const size_t off = static_cast<size_t>(rng.Uniform(0.05, 0.5) * fs);
        for (size_t i = 0; i < on && pos + i < n; ++i) {
          x[pos + i] = noise[pos + i] * std::sin(kPi * i / on);
        }
        pos += on + off;
      }
      break;
    }
    case 3: {  // Click train through a decaying resonance.
      const double rate = rng.Uniform(5.0, 40.0);
      const double f_res = rng.Uniform(800.0, 4000.0);
      const double decay = rng.Uniform(0.002, 0.01);
      double t_next = rng.Uniform(0.0, 1.0 / rate);
      while (t_next < duration_s) {
        const auto start = static_cast<size_t>(t_next * fs);
        const double amp = rng.Uniform(0.5, 1.0);
        for (size_t i = 0; i < static_cast<size_t>(6 * decay * fs) && start + i < n; ++i) {
          const double t = i / fs;
          x[start + i] += amp * std::exp(-t / decay) * std::sin(2.0 * kPi * f_res * t);
        }
        t_next += (1.0 / rate) * rng.Uniform(0.7, 1.3);
      }
      break;
    }
  }
  NormalizeRms(x, 0.1);
  return audio::Waveform::Mono(std::move(x));
}

audio::Waveform SynthesizeNoise(uint64_t seed, double duration_s) {
  Rng rng(seed);
  const auto n = static_cast<size_t>(std::llround(duration_s * kSampleRate));
  // Mixture of three one-pole-filtered noise layers with slow amplitude
  // modulation: roughly pink, varying colour per clip.
  dsp::Signal x(n, 0.0);
  for (int layer = 0; layer < 3; ++layer) {
    dsp::Signal band(n);
    for (double& v : band) v = rng.Normal();
    OnePole(band, rng.Uniform(100.0, 8000.0));
    NormalizeRms(band, rng.Uniform(0.2, 1.0));
    const double mod_rate = rng.Uniform(0.1, 2.0);
    const double mod_depth = rng.Uniform(0.0, 0.6);
    const double mod_phase = rng.Uniform(0.0, 2.0 * kPi);
    for (size_t i = 0; i < n; ++i) {
      const double m = 1.0 + mod_depth * std::sin(2.0 * kPi * mod_rate * i / kSampleRate + mod_phase);
      x[i] += m * band[i];
    }
  }
  NormalizeRms(x, 0.1);
  return audio::Waveform::Mono(std::move(x));
}

}  // namespace gram::scene
