#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lbt {

/// Base of every exception thrown by the library. The C API maps each
/// subclass onto a status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes violate a primitive's shape rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain of an operation (log of a non-positive
/// number, non-positive standard deviation, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller-side precondition was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value. `step` carries the iteration
/// (or unroll step) at which it was first observed, -1 when not applicable.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long step = -1)
      : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Invalid experiment configuration. `line` is 1-based, 0 when unknown.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A verification check did not hold.
class CheckFailure : public Error {
 public:
  using Error::Error;
};

/// A file could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lbt
