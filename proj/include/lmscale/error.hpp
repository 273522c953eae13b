#pragma once

#include <stdexcept>
#include <string>

namespace lmscale {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters, flags or configuration values (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, insufficient or inconsistent input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// An iterative numerical method failed to converge (exit code 4).
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace lmscale
