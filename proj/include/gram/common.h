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

#ifndef GRAM_COMMON_H_
#define GRAM_COMMON_H_

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gram {

// All internal processing runs at this rate; other rates are rejected.
inline constexpr int kSampleRate = 32000;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfSound = 343.0;  // m/s
inline constexpr double kHeadRadius = 0.0875;   // m

enum class ErrorCode {
  kMissingFile,
  kUnsupportedEncoding,
  kCorruptHeader,
  kCorruptPayload,
  kUnwritablePath,
  kDuplicateId,
  kInvalidArgument,
  kShapeMismatch,
  kEmptyInput,
  kOutOfRange,
  kZeroPower,
  kRejectionBudgetExhausted,
  kInsufficientDecay,
  kNonFinite,
  kInvalidConfig,
};

std::string_view ErrorCodeName(ErrorCode code);

// The single exception type thrown by the library. `code()` distinguishes
// failure classes so callers (and the CLI error JSON) can branch on them.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void Fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void Require(bool condition, ErrorCode code,
                    const std::string& message) {
  if (!condition) Fail(code, message);
}

// SplitMix64 finalizer. Used to derive independent stream seeds.
inline uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Hierarchical seed derivation: master -> stage -> item.
inline uint64_t DeriveSeed(uint64_t parent, uint64_t child) {
  return Mix64(parent ^ Mix64(child + 0x632be59bd9b4e019ULL));
}

// Stage tags for DeriveSeed. Values are part of the reproducibility contract.
enum class SeedStage : uint64_t {
  kRooms = 1,
  kScenes = 2,
  kMixing = 3,
  kCorpus = 4,
  kSegments = 5,
  kMasks = 6,
  kInit = 7,
  kProbe = 8,
  kBatches = 9,
};

inline uint64_t StageSeed(uint64_t master, SeedStage stage) {
  return DeriveSeed(master, static_cast<uint64_t>(stage));
}

// Deterministic random source. Distributions are implemented here rather than
// through <random> distributions so sequences do not depend on the standard
// library vendor.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(Mix64(seed)) {}

  uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1).
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [0, n).
  uint64_t UniformInt(uint64_t n) {
    if (n <= 1) return 0;
    const uint64_t limit = std::numeric_limits<uint64_t>::max() -
                           std::numeric_limits<uint64_t>::max() % n;
    uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  double Normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = Uniform();
    } while (u1 <= 0.0);
    const double u2 = Uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    spare_ = radius * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return radius * std::cos(2.0 * kPi * u2);
  }
  double Normal(double mean, double stddev) { return mean + stddev * Normal(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double DegToRad(double deg) { return deg * kPi / 180.0; }
inline double RadToDeg(double rad) { return rad * 180.0 / kPi; }

// Wraps to [0, 360).
inline double WrapDegrees(double deg) {
  double wrapped = std::fmod(deg, 360.0);
  if (wrapped < 0.0) wrapped += 360.0;
  if (wrapped >= 360.0) wrapped -= 360.0;
  return wrapped;
}

}  // namespace gram

#endif  // GRAM_COMMON_H_
