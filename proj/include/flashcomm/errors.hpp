// Copyright 2026 The FlashComm Authors
// SPDX-License-Identifier: Apache-2.0
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

#pragma once

#include <stdexcept>
#include <string>

namespace flashcomm {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  Error(const std::string& kind, const std::string& detail) : std::runtime_error(kind + ": " + detail), detail_(detail) {}

  // Message without the error-kind prefix.
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
};

// Invalid argument values: empty groups, non-finite inputs, length mismatch.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain error", what) {}
};

// Unsupported or inconsistent configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error", what) {}
};

// Malformed wire data or quantized tensors.
class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& what) : Error("integrity error", what) {}
};

// Collective protocol violations: deadlock timeouts, leftover messages.
class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error("protocol error", what) {}
};

}  // namespace flashcomm
