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

#include <gtest/gtest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gram/audio_io.h"
#include "test_util.h"

namespace gram::audio {
namespace {

using gram::testing::CodeOf;
using gram::testing::ReadBytes;
using gram::testing::TempDir;
using gram::testing::WriteBytes;

void PutU32(std::vector<char>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void PutU16(std::vector<char>& b, uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}

// Hand-built canonical 44-byte-header PCM WAV, independent of WriteWav.
std::vector<char> PcmWav(const std::vector<int16_t>& samples, int channels, int rate,
                         uint16_t format = 1, uint16_t bits = 16) {
  const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  std::vector<char> b = {'R', 'I', 'F', 'F'};
  PutU32(b, 36 + data_bytes);
  for (char c : std::string("WAVEfmt ")) b.push_back(c);
  PutU32(b, 16);
  PutU16(b, format);
  PutU16(b, static_cast<uint16_t>(channels));
  PutU32(b, static_cast<uint32_t>(rate));
  PutU32(b, static_cast<uint32_t>(rate * channels * bits / 8));
  PutU16(b, static_cast<uint16_t>(channels * bits / 8));
  PutU16(b, bits);
  for (char c : std::string("data")) b.push_back(c);
  PutU32(b, data_bytes);
  for (int16_t s : samples) PutU16(b, static_cast<uint16_t>(s));
  return b;
}

TEST(ReadWav, SilenceIsAllZeros) {
  TempDir dir;
  WriteBytes(dir / "s.wav", PcmWav(std::vector<int16_t>(32000, 0), 1, 32000));
  const Waveform w = ReadWav(dir / "s.wav");
  EXPECT_EQ(w.num_channels(), 1);
  EXPECT_EQ(w.samples_per_channel(), 32000u);
  EXPECT_EQ(w.rate_hz, 32000);
  for (double s : w.channels[0]) ASSERT_EQ(s, 0.0);
}

TEST(ReadWav, Pcm16ScalesBy32768) {
  TempDir dir;
  WriteBytes(dir / "p.wav", PcmWav({-32768, 32767, 16384, -1, 0, 1}, 2, 32000));
  const Waveform w = ReadWav(dir / "p.wav");
  ASSERT_EQ(w.num_channels(), 2);
  ASSERT_EQ(w.samples_per_channel(), 3u);
  EXPECT_EQ(w.channels[0][0], -1.0);
  EXPECT_EQ(w.channels[1][0], 32767.0 / 32768.0);
  EXPECT_EQ(w.channels[0][1], 0.5);
  EXPECT_EQ(w.channels[1][1], -1.0 / 32768.0);
  EXPECT_EQ(w.channels[1][2], 1.0 / 32768.0);
}

TEST(ReadWav, Float32RoundTripIsBitIdentical) {
  TempDir dir;
  Rng rng(11);
  std::vector<double> l(4001), r(4001);
  for (size_t i = 0; i < l.size(); ++i) {
    l[i] = static_cast<float>(rng.Uniform(-1, 1));
    r[i] = static_cast<float>(rng.Normal() * 0.3);
  }
  WriteWav(dir / "a.wav", Waveform::Stereo(l, r));
  const Waveform w = ReadWav(dir / "a.wav");
  ASSERT_EQ(w.samples_per_channel(), l.size());
  for (size_t i = 0; i < l.size(); ++i) {
    ASSERT_EQ(w.channels[0][i], l[i]);
    ASSERT_EQ(w.channels[1][i], r[i]);
  }
  // Rewriting the decoded waveform reproduces the file byte for byte.
  WriteWav(dir / "b.wav", w);
  EXPECT_EQ(ReadBytes(dir / "a.wav"), ReadBytes(dir / "b.wav"));
}

TEST(ReadWav, Pcm16WriteReadIsExactOnGrid) {
  TempDir dir;
  std::vector<double> x;
  for (int v = -32768; v < 32768; v += 97) x.push_back(v / 32768.0);
  WriteWav(dir / "g.wav", Waveform::Mono(x), WavEncoding::kPcm16);
  const Waveform w = ReadWav(dir / "g.wav");
  EXPECT_EQ(w.channels[0], x);
}

TEST(ReadWav, DistinctErrors) {
  TempDir dir;
  EXPECT_EQ(CodeOf([&] { ReadWav(dir / "absent.wav"); }), ErrorCode::kMissingFile);

  WriteBytes(dir / "junk.wav", std::vector<char>(64, 'x'));
  EXPECT_EQ(CodeOf([&] { ReadWav(dir / "junk.wav"); }), ErrorCode::kCorruptHeader);

  // 8-bit PCM is well formed but not supported.
  std::vector<char> b8 = PcmWav({0, 0}, 1, 32000, 1, 8);
  WriteBytes(dir / "b8.wav", b8);
  EXPECT_EQ(CodeOf([&] { ReadWav(dir / "b8.wav"); }), ErrorCode::kUnsupportedEncoding);

  // A-law (format 6).
  WriteBytes(dir / "alaw.wav", PcmWav({0, 0}, 1, 32000, 6, 16));
  EXPECT_EQ(CodeOf([&] { ReadWav(dir / "alaw.wav"); }), ErrorCode::kUnsupportedEncoding);

  // Data chunk claims more bytes than the file holds.
  std::vector<char> cut = PcmWav(std::vector<int16_t>(100, 3), 1, 32000);
  cut.resize(cut.size() - 50);
  WriteBytes(dir / "cut.wav", cut);
  EXPECT_EQ(CodeOf([&] { ReadWav(dir / "cut.wav"); }), ErrorCode::kCorruptHeader);
}

TEST(WaveformValidate, RejectsRaggedAndNonFinite) {
  Waveform w(2, 10);
  EXPECT_NO_THROW(w.Validate());
  w.channels[1].pop_back();
  EXPECT_EQ(CodeOf([&] { w.Validate(); }), ErrorCode::kInvalidArgument);
  Waveform n(1, 4);
  n.channels[0][2] = std::nan("");
  EXPECT_EQ(CodeOf([&] { n.Validate(); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([] { RequireRate(Waveform(1, 4, 44100)); }), ErrorCode::kInvalidArgument);
}

TEST(FeatureFile, ZerosHaveExpectedSize) {
  TempDir dir;
  WriteFeature(dir / "z.gbsf", BinauralSpectrogram(2, 200, 128));
  EXPECT_EQ(std::filesystem::file_size(dir / "z.gbsf"), 204820u);
  const auto bytes = ReadBytes(dir / "z.gbsf");
  EXPECT_EQ(std::memcmp(bytes.data(), "GRAMBSF1", 8), 0);
  uint32_t hdr[3];
  std::memcpy(hdr, bytes.data() + 8, 12);
  EXPECT_EQ(hdr[0], 2u);
  EXPECT_EQ(hdr[1], 200u);
  EXPECT_EQ(hdr[2], 128u);
}

TEST(FeatureFile, RoundTripIsIdentical) {
  TempDir dir;
  Rng rng(5);
  BinauralSpectrogram s(2, 37, 128);
  for (auto& v : s.values) v = static_cast<float>(rng.Normal() * 10);
  WriteFeature(dir / "r.gbsf", s);
  EXPECT_EQ(ReadFeature(dir / "r.gbsf"), s);

  // Payload order is channel-major then frame rows.
  const auto bytes = ReadBytes(dir / "r.gbsf");
  float v;
  std::memcpy(&v, bytes.data() + kFeatureHeaderBytes + 4 * s.Index(1, 3, 7), 4);
  EXPECT_EQ(v, s.at(1, 3, 7));
}

TEST(FeatureFile, TruncatedPayloadIsCorrupt) {
  TempDir dir;
  WriteFeature(dir / "t.gbsf", BinauralSpectrogram(2, 200, 128));
  auto bytes = ReadBytes(dir / "t.gbsf");
  bytes.resize(bytes.size() - 4 * 128);
  WriteBytes(dir / "t.gbsf", bytes);
  EXPECT_EQ(CodeOf([&] { ReadFeature(dir / "t.gbsf"); }), ErrorCode::kCorruptPayload);
}

TEST(FeatureFile, BadMagicAndUnwritablePath) {
  TempDir dir;
  WriteBytes(dir / "m.gbsf", std::vector<char>(40, 0));
  EXPECT_EQ(CodeOf([&] { ReadFeature(dir / "m.gbsf"); }), ErrorCode::kCorruptHeader);
  EXPECT_EQ(CodeOf([&] {
              WriteFeature(dir / "no" / "such" / "dir" / "x.gbsf", BinauralSpectrogram(2, 1, 1));
            }),
            ErrorCode::kUnwritablePath);
}

TEST(Manifest, RoundTripResolvesRelativePaths) {
  TempDir dir;
  WriteWav(dir / "a.wav", Waveform::Mono(std::vector<double>(320, 0.0)));
  Manifest m;
  m.entries.push_back({"a", "a.wav", std::string("speech"), 0.01});
  m.entries.push_back({"b", "a.wav", std::vector<double>{0.0, 1.0, 0.0}, 0.01});
  SaveManifest(dir / "m.jsonl", m);
  const Manifest loaded = LoadManifest(dir / "m.jsonl");
  ASSERT_EQ(loaded.entries.size(), 2u);
  EXPECT_EQ(std::filesystem::path(loaded.entries[0].audio_path), dir / "a.wav");
  EXPECT_EQ(std::get<std::string>(loaded.entries[0].label), "speech");
  EXPECT_EQ(std::get<std::vector<double>>(loaded.Find("b")->label),
            (std::vector<double>{0.0, 1.0, 0.0}));
  EXPECT_EQ(loaded.Find("zzz"), nullptr);
}

TEST(Manifest, DuplicateIdIsNamed) {
  TempDir dir;
  Manifest m;
  m.entries.push_back({"x1", "a.wav", std::string("a"), 1.0});
  m.entries.push_back({"dup-7", "a.wav", std::string("a"), 1.0});
  m.entries.push_back({"dup-7", "a.wav", std::string("b"), 1.0});
  SaveManifest(dir / "m.jsonl", m);
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      LoadManifest(dir / "m.jsonl", false);
      FAIL() << "duplicate id accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kDuplicateId);
      EXPECT_NE(std::string(e.what()).find("dup-7"), std::string::npos);
    }
  }
}

TEST(Manifest, MissingAudioFails) {
  TempDir dir;
  Manifest m;
  m.entries.push_back({"a", "gone.wav", std::string("a"), 1.0});
  SaveManifest(dir / "m.jsonl", m);
  EXPECT_EQ(CodeOf([&] { LoadManifest(dir / "m.jsonl"); }), ErrorCode::kMissingFile);
  EXPECT_NO_THROW(LoadManifest(dir / "m.jsonl", false));
  EXPECT_EQ(CodeOf([&] { LoadManifest(dir / "none.jsonl"); }), ErrorCode::kMissingFile);
}

}  // namespace
}  // namespace gram::audio
