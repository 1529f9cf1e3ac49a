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

#ifndef GRAM_DSP_H_
#define GRAM_DSP_H_

#include <complex>
#include <span>
#include <utility>
#include <vector>

#include "gram/common.h"

namespace gram::dsp {

using Signal = std::vector<double>;

size_t NextPowerOfTwo(size_t n);

// In-place iterative radix-2 FFT. `data.size()` must be a power of two.
// The inverse transform includes the 1/N scaling.
void Fft(std::span<std::complex<double>> data, bool inverse = false);

// Full linear convolution (length |x| + |h| - 1) via zero-padded FFT.
// Throws kEmptyInput when either operand is empty.
Signal FftConvolve(std::span<const double> x, std::span<const double> h);

// Convolves one signal with two kernels using a single packed complex
// transform; returns {x * h_a, x * h_b}. Kernels may differ in length.
std::pair<Signal, Signal> FftConvolvePair(std::span<const double> x,
                                          std::span<const double> h_a,
                                          std::span<const double> h_b);

// Linear ramps 0 -> 1 over the first round(fade_s * rate) samples and
// 1 -> 0 over the last ones. Throws kInvalidArgument when the signal is
// shorter than two fades.
Signal ApplyFade(std::span<const double> x, double fade_s, int rate_hz);

// Mean squared amplitude over all samples of all channels.
double MeanPower(std::span<const double> x);
double MeanPower(const std::vector<Signal>& channels);

struct SnrScale {
  double target_snr_db = 0.0;
  double b = 1.0;
};

// b such that P(target) / P(b * noise) equals 10^(snr_db / 10), with P the
// full-clip mean square. Throws kZeroPower for silent inputs.
SnrScale ComputeSnrScale(double target_power, double noise_power,
                         double snr_db);
SnrScale ComputeSnrScale(std::span<const double> target,
                         std::span<const double> noise, double snr_db);

double MeasureSnrDb(double target_power, double scaled_noise_power);

double HzToMel(double hz);
double MelToHz(double mel);

struct MelFilterbank {
  int n_mels = 128;
  double f_low_hz = 50.0;
  double f_high_hz = 16000.0;
  int n_fft = 0;
  int rate_hz = kSampleRate;
  std::vector<double> center_hz;  // n_mels
  // Row-major n_mels x (n_fft / 2 + 1); unnormalized triangles (peak 1).
  std::vector<double> weights;

  int num_bins() const { return n_fft / 2 + 1; }
  double weight(int mel, int bin) const {
    return weights[static_cast<size_t>(mel) * num_bins() + bin];
  }
  // mel[k] = sum_b weight(k, b) * power[b].
  void Apply(std::span<const double> power, std::span<double> mel) const;
};

// Throws kOutOfRange when f_high exceeds Nyquist or the band is empty.
MelFilterbank BuildMelFilterbank(int n_fft, int rate_hz = kSampleRate,
                                 int n_mels = 128, double f_low_hz = 50.0,
                                 double f_high_hz = 16000.0);

// Periodic Hann window of the given length.
std::vector<double> HannWindow(int length);

}  // namespace gram::dsp

#endif  // GRAM_DSP_H_
