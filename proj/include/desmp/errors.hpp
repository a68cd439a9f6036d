// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace desmp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension mismatch between matrices, parameter vectors or datasets.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced during training. Carries the layer index.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t layer)
      : Error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid privacy calibration parameters.
class CalibrationError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Invalid configuration; names the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed input file. `position` is a byte offset or a line number
/// depending on the format.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t position)
      : Error(what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace desmp
