#pragma once

#include <stdexcept>

namespace skipnet {

// Base class for all library errors. The CLI maps subclasses onto its exit
// code policy: usage/config/data problems exit 2, failed checks exit 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not line up (wrong rank, mismatched axes).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A hyperparameter or layer configuration is invalid (non-positive output
// extent, odd spatial size where an even one is required, bad fractions).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset content is broken (malformed manifest row, undecodable image).
class DataError : public Error {
 public:
  using Error::Error;
};

// The API was called incorrectly (non-scalar loss, empty confusion matrix).
class UsageError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Operating-system file I/O failure (open, read, write, rename).
class IoError : public Error {
 public:
  using Error::Error;
};

// A checkpoint file violates the format contract: bad magic, unsupported
// version, CRC mismatch, or a structurally inconsistent body. The message
// names the specific violation.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// A patient-level split came out unusable (a class missing from a split,
// too few patients to populate three splits). Re-seed or change fractions.
class SplitError : public Error {
 public:
  using Error::Error;
};

}  // namespace skipnet
