#pragma once

#include <stdexcept>
#include <string>

namespace w2s {

// Base of every error thrown by the library. Each subclass maps onto one of
// the failure classes the CLI reports through exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes for an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced by a forward op, or a numerically hopeless solve.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input data does not satisfy the invariants an operation needs.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed input line. `line()` is 1-based.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Invalid experiment or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace w2s
