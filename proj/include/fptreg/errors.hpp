#pragma once

#include <stdexcept>
#include <string>

namespace fptreg {

// Every failure raised by the library derives from Error. The category
// drives the CLI exit code (see fptreg/cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data is malformed or unusable (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

// A computation broke down: singular systems, non-finite losses (exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Bad command line or configuration (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class EmptyInputError : public DataError {
 public:
  using DataError::DataError;
};

class UnitError : public DataError {
 public:
  using DataError::DataError;
};

class PairingError : public DataError {
 public:
  using DataError::DataError;
};

class InvariantError : public DataError {
 public:
  using DataError::DataError;
};

class ParameterError : public DataError {
 public:
  using DataError::DataError;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class VisibilityError : public DataError {
 public:
  using DataError::DataError;
};

class DegeneracyError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularSystemError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Checkpoint failures are split so callers can tell them apart.
class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

class CorruptCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ShapeMismatchError : public CheckpointError {
 public:
  ShapeMismatchError(const std::string& what, std::string layer)
      : CheckpointError(what), layer_(std::move(layer)) {}
  const std::string& layer() const { return layer_; }

 private:
  std::string layer_;
};

}  // namespace fptreg
