#pragma once

#include <stdexcept>
#include <string>

namespace urep {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible or invalid tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced, or division by an exact zero while debug checks are on.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Missing or unusable data (empty datasets, absent labels, too few groups).
class DataError : public Error {
 public:
  using Error::Error;
};

// Ground truth a task or metric needs is absent.
class MissingLabelsError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ImageFormatError : public IoError {
 public:
  using IoError::IoError;
};

class ImageTruncatedError : public IoError {
 public:
  using IoError::IoError;
};

class UnsupportedDepthError : public IoError {
 public:
  using IoError::IoError;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Every grid point failed.
class SearchError : public Error {
 public:
  using Error::Error;
};

class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

class CheckpointHeaderError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace urep
