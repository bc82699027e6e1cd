// Copyright 2026 The Dyadkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DYADKIT_ERROR_HPP_
#define DYADKIT_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace dyad {

enum class ErrorKind {
  kIo,
  kValidation,
  kConfig,
  kCalibration,
  kLookup,
  kShape,
  kPrecondition,
  kNotFound,
  kMissingPrerequisite,
  kDataIntegrity,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` carries the category so
/// callers (the CLI, the HTTP layer) can map it to exit codes or statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace dyad

#endif  // DYADKIT_ERROR_HPP_
