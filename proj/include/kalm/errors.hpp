#pragma once

#include <stdexcept>
#include <string>

namespace kalm {

// Bad flags, config keys, invalid hyperparameters. CLI exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Malformed or missing input files. CLI exit code 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

// NaN loss and friends. CLI exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace kalm
