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

#include "gram/nn/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace gram::nn {
namespace {

constexpr char kMagic[8] = {'G', 'R', 'A', 'M', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

}  // namespace

void SaveCheckpoint(const std::string& path, const Checkpoint& checkpoint) {
  nlohmann::json index;
  index["arrays"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, array] : checkpoint.arrays) {
    Require(NumElements(array.shape) == array.data.size(), ErrorCode::kShapeMismatch,
            "array '" + name + "' data does not match its shape");
    index["arrays"].push_back({{"name", name}, {"shape", array.shape}, {"offset", offset}});
    offset += array.data.size() * sizeof(double);
  }
  index["metadata"] = nlohmann::json::parse(checkpoint.metadata_json);
  const std::string text = index.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorCode::kUnwritablePath, "cannot write checkpoint " + path);
  const uint64_t length = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, array] : checkpoint.arrays) {
    out.write(reinterpret_cast<const char*>(array.data.data()),
              static_cast<std::streamsize>(array.data.size() * sizeof(double)));
  }
  if (!out) Fail(ErrorCode::kUnwritablePath, "failed writing checkpoint " + path);
}

Checkpoint LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCode::kMissingFile, "checkpoint not found: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const size_t header = sizeof(kMagic) + sizeof(uint64_t);
  if (bytes.size() < header || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    Fail(ErrorCode::kCorruptHeader, "not a checkpoint: " + path);
  }
  uint64_t length = 0;
  std::memcpy(&length, bytes.data() + sizeof(kMagic), sizeof(length));
  if (length > bytes.size() - header) {
    Fail(ErrorCode::kCorruptHeader, "checkpoint index truncated: " + path);
  }
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(bytes.substr(header, length));
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kCorruptHeader, "checkpoint index unreadable: " + std::string(e.what()));
  }
  const size_t payload = header + length;
  Checkpoint checkpoint;
  checkpoint.metadata_json = index.value("metadata", nlohmann::json::object()).dump();
  for (const auto& entry : index.at("arrays")) {
    NamedArray array;
    array.shape = entry.at("shape").get<Shape>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    const size_t count = NumElements(array.shape);
    if (payload + offset + count * sizeof(double) > bytes.size()) {
      Fail(ErrorCode::kCorruptPayload,
           "array '" + entry.at("name").get<std::string>() + "' runs past end of file");
    }
    array.data.resize(count);
    std::memcpy(array.data.data(), bytes.data() + payload + offset, count * sizeof(double));
    checkpoint.arrays.emplace(entry.at("name").get<std::string>(), std::move(array));
  }
  return checkpoint;
}

}  // namespace gram::nn
