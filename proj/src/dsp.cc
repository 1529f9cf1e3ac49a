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

#include "gram/dsp.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace gram::dsp {
namespace {

// Twiddles exp(-2*pi*i*k/n) for k < n/2, computed directly (no recurrence)
// so the error does not accumulate with transform size.
const std::vector<std::complex<double>>& Twiddles(size_t n) {
  thread_local std::vector<std::complex<double>> table;
  thread_local size_t table_n = 0;
  if (table_n != n) {
    table.resize(n / 2);
    for (size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * kPi * static_cast<double>(k) / n;
      table[k] = {std::cos(angle), std::sin(angle)};
    }
    table_n = n;
  }
  return table;
}

}  // namespace

size_t NextPowerOfTwo(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void Fft(std::span<std::complex<double>> data, bool inverse) {
  const size_t n = data.size();
  Require(n > 0 && (n & (n - 1)) == 0, ErrorCode::kInvalidArgument,
          "FFT size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  const auto& twiddles = Twiddles(n);
  for (size_t len = 2; len <= n; len <<= 1) {
    const size_t half = len / 2;
    const size_t stride = n / len;
    for (size_t start = 0; start < n; start += len) {
      for (size_t k = 0; k < half; ++k) {
        std::complex<double> w = twiddles[k * stride];
        if (inverse) w = std::conj(w);
        const std::complex<double> u = data[start + k];
        const std::complex<double> v = data[start + k + half] * w;
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : data) v *= scale;
  }
}

Signal FftConvolve(std::span<const double> x, std::span<const double> h) {
  Require(!x.empty() && !h.empty(), ErrorCode::kEmptyInput,
          "convolution operands must be non-empty");
  const size_t out_len = x.size() + h.size() - 1;
  const size_t n = NextPowerOfTwo(out_len);
  // Pack x into the real part and h into the imaginary part; one forward
  // transform then yields both spectra by conjugate symmetry.
  std::vector<std::complex<double>> z(n);
  for (size_t i = 0; i < x.size(); ++i) z[i].real(x[i]);
  for (size_t i = 0; i < h.size(); ++i) z[i].imag(h[i]);
  Fft(z);
  std::vector<std::complex<double>> prod(n);
  for (size_t k = 0; k < n; ++k) {
    const std::complex<double> zk = z[k];
    const std::complex<double> zc = std::conj(z[(n - k) & (n - 1)]);
    const std::complex<double> xk = 0.5 * (zk + zc);
    const std::complex<double> hk = std::complex<double>(0.0, -0.5) * (zk - zc);
    prod[k] = xk * hk;
  }
  Fft(prod, /*inverse=*/true);
  Signal out(out_len);
  for (size_t i = 0; i < out_len; ++i) out[i] = prod[i].real();
  return out;
}

std::pair<Signal, Signal> FftConvolvePair(std::span<const double> x,
                                          std::span<const double> h_a,
                                          std::span<const double> h_b) {
  Require(!x.empty() && !h_a.empty() && !h_b.empty(), ErrorCode::kEmptyInput,
          "convolution operands must be non-empty");
  const size_t len_a = x.size() + h_a.size() - 1;
  const size_t len_b = x.size() + h_b.size() - 1;
  const size_t n = NextPowerOfTwo(std::max(len_a, len_b));
  std::vector<std::complex<double>> xs(n), hs(n);
  for (size_t i = 0; i < x.size(); ++i) xs[i].real(x[i]);
  for (size_t i = 0; i < h_a.size(); ++i) hs[i].real(h_a[i]);
  for (size_t i = 0; i < h_b.size(); ++i) hs[i].imag(h_b[i]);
  Fft(xs);
  Fft(hs);
  for (size_t k = 0; k < n; ++k) xs[k] *= hs[k];
  Fft(xs, /*inverse=*/true);
  Signal a(len_a), b(len_b);
  for (size_t i = 0; i < len_a; ++i) a[i] = xs[i].real();
  for (size_t i = 0; i < len_b; ++i) b[i] = xs[i].imag();
  return {std::move(a), std::move(b)};
}

Signal ApplyFade(std::span<const double> x, double fade_s, int rate_hz) {
  Require(fade_s >= 0.0 && rate_hz > 0, ErrorCode::kInvalidArgument,
          "fade length and rate must be non-negative");
  const auto fade = static_cast<size_t>(std::llround(fade_s * rate_hz));
  Require(x.size() >= 2 * fade, ErrorCode::kInvalidArgument,
          "signal of " + std::to_string(x.size()) +
              " samples is shorter than two fades of " + std::to_string(fade));
  Signal out(x.begin(), x.end());
  for (size_t i = 0; i < fade; ++i) {
    const double gain = static_cast<double>(i) / static_cast<double>(fade);
    out[i] *= gain;
    out[out.size() - 1 - i] *= gain;
  }
  return out;
}

double MeanPower(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

double MeanPower(const std::vector<Signal>& channels) {
  double acc = 0.0;
  size_t count = 0;
  for (const auto& ch : channels) {
    for (double v : ch) acc += v * v;
    count += ch.size();
  }
  return count == 0 ? 0.0 : acc / static_cast<double>(count);
}

SnrScale ComputeSnrScale(double target_power, double noise_power,
                         double snr_db) {
  Require(target_power > 0.0 && std::isfinite(target_power),
          ErrorCode::kZeroPower, "target has zero power");
  Require(noise_power > 0.0 && std::isfinite(noise_power),
          ErrorCode::kZeroPower, "noise has zero power");
  const double b =
      std::sqrt(target_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
  return {snr_db, b};
}

SnrScale ComputeSnrScale(std::span<const double> target,
                         std::span<const double> noise, double snr_db) {
  return ComputeSnrScale(MeanPower(target), MeanPower(noise), snr_db);
}

double MeasureSnrDb(double target_power, double scaled_noise_power) {
  return 10.0 * std::log10(target_power / scaled_noise_power);
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

void MelFilterbank::Apply(std::span<const double> power,
                          std::span<double> mel) const {
  const int bins = num_bins();
  for (int k = 0; k < n_mels; ++k) {
    const double* row = weights.data() + static_cast<size_t>(k) * bins;
    double acc = 0.0;
    for (int b = 0; b < bins; ++b) acc += row[b] * power[b];
    mel[k] = acc;
  }
}

MelFilterbank BuildMelFilterbank(int n_fft, int rate_hz, int n_mels,
                                 double f_low_hz, double f_high_hz) {
  Require(n_fft >= 2 && n_mels >= 1, ErrorCode::kInvalidArgument,
          "n_fft and n_mels must be positive");
  Require(f_high_hz <= rate_hz / 2.0, ErrorCode::kOutOfRange,
          "f_high " + std::to_string(f_high_hz) + " Hz exceeds Nyquist " +
              std::to_string(rate_hz / 2.0) + " Hz");
  Require(f_low_hz >= 0.0 && f_low_hz < f_high_hz, ErrorCode::kOutOfRange,
          "empty mel band");
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.f_low_hz = f_low_hz;
  fb.f_high_hz = f_high_hz;
  fb.n_fft = n_fft;
  fb.rate_hz = rate_hz;

  const double mel_low = HzToMel(f_low_hz);
  const double mel_high = HzToMel(f_high_hz);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = MelToHz(mel_low + (mel_high - mel_low) * i / (n_mels + 1));
  }
  const int bins = fb.num_bins();
  fb.center_hz.resize(n_mels);
  fb.weights.assign(static_cast<size_t>(n_mels) * bins, 0.0);
  for (int k = 0; k < n_mels; ++k) {
    const double lo = edges[k], center = edges[k + 1], hi = edges[k + 2];
    fb.center_hz[k] = center;
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * rate_hz / n_fft;
      double w = 0.0;
      if (f > lo && f <= center) {
        w = (f - lo) / (center - lo);
      } else if (f > center && f < hi) {
        w = (hi - f) / (hi - center);
      }
      fb.weights[static_cast<size_t>(k) * bins + b] = w;
    }
  }
  return fb;
}

std::vector<double> HannWindow(int length) {
  std::vector<double> w(length);
  for (int i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / length);
  }
  return w;
}

}  // namespace gram::dsp
