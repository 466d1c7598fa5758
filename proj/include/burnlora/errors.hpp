// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every burnlora module. Each kind maps to a
// distinct CLI exit code (see tools/burnlora.cpp).

#pragma once

#include <stdexcept>
#include <string>

namespace burnlora {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Tensor shapes or axes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "dimension"; }
};

/// A caller broke an API contract (non-scalar loss to backward, mismatched
/// optimizer state, ...).
class ContractError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "contract"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

/// Invalid input data: bad labels, too-small scenes, unknown biomes.
class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data"; }
};

/// Malformed BARC1 scene or checkpoint bytes.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

/// NaN/Inf produced during a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

}  // namespace burnlora
