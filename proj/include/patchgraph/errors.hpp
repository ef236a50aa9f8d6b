// SPDX-FileCopyrightText: Copyright (c) 2026 The patchgraph Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace patchgraph {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration (bad k, sigma, lambda, ...). Maps to CLI exit 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed sparse structure: out-of-range index, negative weight.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward twice on one tape.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Labels or data values outside their declared domain.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Macro metrics requested with nothing to average.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Binary/text file that does not follow its format. Carries the byte offset
/// at which parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace patchgraph
