#pragma once

#include <stdexcept>
#include <string>

namespace d2s {

// Bad or inconsistent configuration (file schema, invalid hyperparameter).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem / serialization failures. Message names the offending path.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values on a numeric path (diverged training, bad input data).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace d2s
