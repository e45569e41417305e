#pragma once

#include <stdexcept>
#include <string>

namespace rawdeblur {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Odd or too-small frame extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Crop offsets or extents that would break the CFA phase.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Index or window outside its permitted range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (matrix, gains, loss weight, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File system failure. The message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// API misuse such as calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value observed while checked mode is active.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by an unsupported format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Checkpoint lacks a parameter the model needs, or carries one it does not know.
class MissingParameterError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Checkpoint names the same parameter twice.
class DuplicateParameterError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Checkpoint parameter whose dimensions differ from the model's.
class ParameterShapeError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Checkpoint built for a different model configuration.
class ConfigMismatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace rawdeblur
