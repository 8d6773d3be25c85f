// Copyright 2026 The cnx Authors. All Rights Reserved.
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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cnx {

enum class ErrorKind {
  kShape,           // extents incompatible with the operation
  kInvalidArgument, // bad parameter value or spec invariant violation
  kUnknownName,     // unknown variant / op / step
  kOrder,           // roadmap step applied out of order
  kMissingEntry,    // weight binding: spec needs a name the store lacks
  kExtraEntry,      // weight binding: store has a name the spec does not use
  kExtentMismatch,  // weight binding: extents differ
  kBadMagic,
  kTruncated,
  kDuplicateName,
  kOutOfBounds,
  kHeaderMismatch,
  kMalformed,
  kIo,
  kNonFinite,
  kBudget,
  kState,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kUnknownName: return "unknown-name";
    case ErrorKind::kOrder: return "order";
    case ErrorKind::kMissingEntry: return "missing-entry";
    case ErrorKind::kExtraEntry: return "extra-entry";
    case ErrorKind::kExtentMismatch: return "extent-mismatch";
    case ErrorKind::kBadMagic: return "bad-magic";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kDuplicateName: return "duplicate-name";
    case ErrorKind::kOutOfBounds: return "out-of-bounds";
    case ErrorKind::kHeaderMismatch: return "header-mismatch";
    case ErrorKind::kMalformed: return "malformed";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kNonFinite: return "non-finite";
    case ErrorKind::kBudget: return "budget";
    case ErrorKind::kState: return "state";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI exit-code mapping) can tell error classes apart without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace cnx
