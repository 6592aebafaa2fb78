// Copyright 2026 The abnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace abnet {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };

enum class CheckpointFault {
  bad_magic,
  unsupported_version,
  truncated,
  extent_mismatch,
  malformed,
  io,
};

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointFault fault, const std::string& what)
      : Error(what), fault_(fault) {}
  CheckpointFault fault() const noexcept { return fault_; }

 private:
  CheckpointFault fault_;
};

}  // namespace abnet
