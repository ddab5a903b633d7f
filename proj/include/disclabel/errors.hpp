#pragma once

#include <stdexcept>
#include <string>

namespace disclabel {

// Base class for all library errors. CLI maps ValidationError-family to
// exit code 1 and IoError-family to exit code 2.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// --- validation family (exit 1) ---

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptyDataset : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptyEvaluation : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class TooFewSlices : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InputTooSmall : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DivergenceError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// --- I/O family (exit 2) ---

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class CorruptFile : public IoError {
 public:
  using IoError::IoError;
};

class CorruptCheckpoint : public IoError {
 public:
  using IoError::IoError;
};

class UnsupportedVersion : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace disclabel
