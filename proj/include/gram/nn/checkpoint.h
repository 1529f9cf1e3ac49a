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

#ifndef GRAM_NN_CHECKPOINT_H_
#define GRAM_NN_CHECKPOINT_H_

#include <map>
#include <string>
#include <vector>

#include "gram/nn/tensor.h"

namespace gram::nn {

struct NamedArray {
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::map<std::string, NamedArray> arrays;  // ordered by name
  std::string metadata_json = "{}";
};

// Layout: "GRAMCKP1", u64 little-endian index length, JSON index
// {"arrays": [{name, shape, offset}], "metadata": {...}}, then the arrays as
// little-endian float64 in name order. Offsets count bytes from the payload
// start.
void SaveCheckpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint LoadCheckpoint(const std::string& path);

}  // namespace gram::nn

#endif  // GRAM_NN_CHECKPOINT_H_
