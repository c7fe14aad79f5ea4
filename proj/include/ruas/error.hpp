#pragma once

#include <stdexcept>
#include <string>

namespace ruas {

/// Base class of every error raised by the library. The CLI maps the
/// concrete subclasses onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that cannot be combined.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (even kernels, empty datasets, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Inputs outside an operation's mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an API precondition (non-scalar loss, missing gradient).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ruas
