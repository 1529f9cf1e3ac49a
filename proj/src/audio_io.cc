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

#include "gram/audio_io.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gram::audio {
namespace {

namespace fs = std::filesystem;

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

uint16_t LoadU16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
uint32_t LoadU32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}
void StoreU16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}
void StoreU32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void StoreF32(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  StoreU32(out, bits);
}
float LoadF32(const unsigned char* p) {
  const uint32_t bits = LoadU32(p);
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

std::string ReadAll(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCode::kMissingFile, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void WriteAll(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorCode::kUnwritablePath, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) Fail(ErrorCode::kUnwritablePath, "write failed for " + path.string());
}

}  // namespace

Waveform Waveform::Mono(std::vector<double> samples, int rate) {
  Waveform wav;
  wav.rate_hz = rate;
  wav.channels.push_back(std::move(samples));
  return wav;
}

Waveform Waveform::Stereo(std::vector<double> left, std::vector<double> right,
                          int rate) {
  Waveform wav;
  wav.rate_hz = rate;
  wav.channels.push_back(std::move(left));
  wav.channels.push_back(std::move(right));
  return wav;
}

void Waveform::Validate() const {
  Require(rate_hz > 0, ErrorCode::kInvalidArgument, "sample rate must be > 0");
  Require(!channels.empty(), ErrorCode::kInvalidArgument, "no channels");
  for (const auto& ch : channels) {
    Require(ch.size() == channels.front().size(), ErrorCode::kInvalidArgument,
            "channel lengths differ");
    for (double s : ch) {
      Require(std::isfinite(s), ErrorCode::kInvalidArgument,
              "waveform contains NaN/Inf");
    }
  }
}

void RequireRate(const Waveform& wav, int rate_hz) {
  Require(wav.rate_hz == rate_hz, ErrorCode::kInvalidArgument,
          "expected " + std::to_string(rate_hz) + " Hz input, got " +
              std::to_string(wav.rate_hz) + " Hz (resampling is not supported)");
}

Waveform ReadWav(const fs::path& path) {
  if (!fs::exists(path)) {
    Fail(ErrorCode::kMissingFile, "no such file: " + path.string());
  }
  const std::string bytes = ReadAll(path);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const size_t size = bytes.size();
  if (size < 12 || std::memcmp(data, "RIFF", 4) != 0 ||
      std::memcmp(data + 8, "WAVE", 4) != 0) {
    Fail(ErrorCode::kCorruptHeader, "not a RIFF/WAVE file: " + path.string());
  }

  bool have_fmt = false;
  uint16_t format = 0, num_channels = 0, bits = 0, block_align = 0;
  uint32_t rate = 0;
  const unsigned char* payload = nullptr;
  size_t payload_size = 0;

  size_t pos = 12;
  while (pos + 8 <= size) {
    const unsigned char* chunk = data + pos;
    const uint32_t chunk_size = LoadU32(chunk + 4);
    const size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (chunk_size < 16 || body + chunk_size > size) {
        Fail(ErrorCode::kCorruptHeader, "truncated fmt chunk in " + path.string());
      }
      format = LoadU16(data + body);
      num_channels = LoadU16(data + body + 2);
      rate = LoadU32(data + body + 4);
      block_align = LoadU16(data + body + 12);
      bits = LoadU16(data + body + 14);
      if (format == kFormatExtensible) {
        if (chunk_size < 40) {
          Fail(ErrorCode::kCorruptHeader, "truncated extensible fmt chunk");
        }
        format = LoadU16(data + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      payload = data + body;
      payload_size = std::min<size_t>(chunk_size, size - body);
      if (payload_size != chunk_size) {
        Fail(ErrorCode::kCorruptHeader, "data chunk extends past end of file");
      }
    }
    pos = body + chunk_size + (chunk_size & 1u);
  }

  if (!have_fmt || payload == nullptr) {
    Fail(ErrorCode::kCorruptHeader, "missing fmt or data chunk in " + path.string());
  }
  if (num_channels == 0 || rate == 0) {
    Fail(ErrorCode::kCorruptHeader, "zero channels or rate in " + path.string());
  }
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    Fail(ErrorCode::kUnsupportedEncoding,
         "unsupported WAV encoding (format " + std::to_string(format) + ", " +
             std::to_string(bits) + " bits) in " + path.string());
  }
  const size_t bytes_per_sample = bits / 8;
  if (block_align != bytes_per_sample * num_channels ||
      payload_size % block_align != 0) {
    Fail(ErrorCode::kCorruptHeader, "inconsistent block alignment in " + path.string());
  }

  const size_t frames = payload_size / block_align;
  Waveform wav(num_channels, frames, static_cast<int>(rate));
  for (size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < num_channels; ++c) {
      const unsigned char* p = payload + i * block_align + c * bytes_per_sample;
      if (pcm16) {
        const auto v = static_cast<int16_t>(LoadU16(p));
        wav.channels[c][i] = static_cast<double>(v) / 32768.0;
      } else {
        wav.channels[c][i] = static_cast<double>(LoadF32(p));
      }
    }
  }
  return wav;
}

void WriteWav(const fs::path& path, const Waveform& wav, WavEncoding encoding) {
  wav.Validate();
  const uint16_t num_channels = static_cast<uint16_t>(wav.num_channels());
  const uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const uint16_t block_align = num_channels * bits / 8;
  const size_t frames = wav.samples_per_channel();
  const uint32_t data_bytes = static_cast<uint32_t>(frames * block_align);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  StoreU32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  StoreU32(out, 16);
  StoreU16(out, encoding == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat);
  StoreU16(out, num_channels);
  StoreU32(out, static_cast<uint32_t>(wav.rate_hz));
  StoreU32(out, static_cast<uint32_t>(wav.rate_hz) * block_align);
  StoreU16(out, block_align);
  StoreU16(out, bits);
  out += "data";
  StoreU32(out, data_bytes);
  for (size_t i = 0; i < frames; ++i) {
    for (const auto& ch : wav.channels) {
      if (encoding == WavEncoding::kPcm16) {
        const double scaled = std::round(ch[i] * 32768.0);
        const auto clamped =
            static_cast<int16_t>(std::clamp(scaled, -32768.0, 32767.0));
        StoreU16(out, static_cast<uint16_t>(clamped));
      } else {
        StoreF32(out, static_cast<float>(ch[i]));
      }
    }
  }
  WriteAll(path, out);
}

void WriteFeature(const fs::path& path, const BinauralSpectrogram& spec) {
  Require(spec.channels > 0 && spec.frames > 0 && spec.mels > 0 &&
              spec.values.size() == static_cast<size_t>(spec.channels) *
                                        spec.frames * spec.mels,
          ErrorCode::kShapeMismatch, "spectrogram shape does not match payload");
  std::string out(kFeatureMagic, sizeof(kFeatureMagic));
  StoreU32(out, static_cast<uint32_t>(spec.channels));
  StoreU32(out, static_cast<uint32_t>(spec.frames));
  StoreU32(out, static_cast<uint32_t>(spec.mels));
  out.reserve(kFeatureHeaderBytes + spec.values.size() * 4);
  for (float v : spec.values) StoreF32(out, v);
  WriteAll(path, out);
}

BinauralSpectrogram ReadFeature(const fs::path& path) {
  if (!fs::exists(path)) {
    Fail(ErrorCode::kMissingFile, "no such file: " + path.string());
  }
  const std::string bytes = ReadAll(path);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kFeatureHeaderBytes ||
      std::memcmp(data, kFeatureMagic, sizeof(kFeatureMagic)) != 0) {
    Fail(ErrorCode::kCorruptHeader, "bad feature file header: " + path.string());
  }
  const uint32_t channels = LoadU32(data + 8);
  const uint32_t frames = LoadU32(data + 12);
  const uint32_t mels = LoadU32(data + 16);
  const uint64_t count = static_cast<uint64_t>(channels) * frames * mels;
  if (bytes.size() != kFeatureHeaderBytes + count * 4) {
    Fail(ErrorCode::kCorruptPayload,
         "feature payload has " + std::to_string(bytes.size() - kFeatureHeaderBytes) +
             " bytes, header declares " + std::to_string(count * 4));
  }
  BinauralSpectrogram spec(static_cast<int>(channels), static_cast<int>(frames),
                           static_cast<int>(mels));
  for (uint64_t i = 0; i < count; ++i) {
    spec.values[i] = LoadF32(data + kFeatureHeaderBytes + 4 * i);
  }
  return spec;
}

const ManifestEntry* Manifest::Find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

Manifest LoadManifest(const fs::path& path, bool check_paths) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCode::kMissingFile, "cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  Manifest manifest;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      Fail(ErrorCode::kCorruptPayload, path.string() + ":" +
                                           std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("audio_path")) {
      Fail(ErrorCode::kCorruptPayload, path.string() + ":" + std::to_string(line_no) +
                                           ": entry needs id and audio_path");
    }
    ManifestEntry entry;
    entry.id = j.at("id").get<std::string>();
    entry.audio_path = j.at("audio_path").get<std::string>();
    if (j.contains("label")) {
      const auto& label = j.at("label");
      if (label.is_string()) {
        entry.label = label.get<std::string>();
      } else if (label.is_array()) {
        entry.label = label.get<std::vector<double>>();
      }
    }
    entry.duration_s = j.value("duration_s", 0.0);
    if (!seen.insert(entry.id).second) {
      Fail(ErrorCode::kDuplicateId, "duplicate manifest id '" + entry.id + "'");
    }
    fs::path audio(entry.audio_path);
    if (audio.is_relative()) audio = base / audio;
    if (check_paths && !fs::exists(audio)) {
      Fail(ErrorCode::kMissingFile, "manifest entry '" + entry.id +
                                        "' points to missing " + audio.string());
    }
    entry.audio_path = audio.lexically_normal().string();
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void SaveManifest(const fs::path& path, const Manifest& manifest) {
  std::ostringstream out;
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["audio_path"] = e.audio_path;
    if (const auto* s = std::get_if<std::string>(&e.label)) {
      j["label"] = *s;
    } else if (const auto* v = std::get_if<std::vector<double>>(&e.label)) {
      j["label"] = *v;
    }
    j["duration_s"] = e.duration_s;
    out << j.dump() << '\n';
  }
  WriteAll(path, out.str());
}

}  // namespace gram::audio
