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

#include "gram/common.h"

namespace gram {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingFile: return "missing_file";
    case ErrorCode::kUnsupportedEncoding: return "unsupported_encoding";
    case ErrorCode::kCorruptHeader: return "corrupt_header";
    case ErrorCode::kCorruptPayload: return "corrupt_payload";
    case ErrorCode::kUnwritablePath: return "unwritable_path";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kZeroPower: return "zero_power";
    case ErrorCode::kRejectionBudgetExhausted: return "rejection_budget_exhausted";
    case ErrorCode::kInsufficientDecay: return "insufficient_decay";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kInvalidConfig: return "invalid_config";
  }
  return "unknown";
}

}  // namespace gram
