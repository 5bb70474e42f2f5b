/* Copyright 2026 The stquant Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "stq/error.hpp"

namespace stq {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kUninitializedState: return "uninitialized_state";
    case ErrorCode::kDegenerateThreshold: return "degenerate_threshold";
    case ErrorCode::kNegativeThreshold: return "negative_threshold";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kOverflow: return "overflow";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kMissingTensor: return "missing_tensor";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace stq
