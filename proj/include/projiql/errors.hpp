#pragma once

#include <stdexcept>
#include <string>

namespace projiql {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or parameter shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An input value violates a documented precondition (non-finite, empty, out of range).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API contract (e.g. backward from a non-scalar node).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries a 1-based line and column.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line, int column)
      : Error(what + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")"),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

/// Unknown or malformed configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver hit its iteration cap.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}

  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Binary container errors. Each failure mode has its own type so callers can tell them apart.
class FormatError : public Error {
 public:
  using Error::Error;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Non-finite loss or gradient during training; records where it happened.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}

  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace projiql
