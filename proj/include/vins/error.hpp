#pragma once

#include <stdexcept>
#include <string>

namespace vins {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition or invariant on an argument was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input (annotation files, manifests, configs).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Unknown or invalid key in a run configuration.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& why)
      : Error("config key '" + key + "': " + why), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver did not reach its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// A loss component became NaN or infinite during training.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& component, double value)
      : Error("non-finite loss component '" + component + "' = " + std::to_string(value)),
        component_(component) {}
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace vins
