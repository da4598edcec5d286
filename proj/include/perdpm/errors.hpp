#pragma once

#include <stdexcept>
#include <string>

namespace perdpm {

// Invalid configuration or mismatched inputs; the CLI maps this to exit 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric failure (divergence, non-finite loss); the CLI maps this to exit 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace perdpm
