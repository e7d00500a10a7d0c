#pragma once

#include <stdexcept>
#include <string>

namespace ood {

// Bad user input: malformed files, unknown keys, invalid hyperparameters.
// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric breakdown at runtime: NaN/inf loss, diverged training, all attack
// restarts discarded. The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ood
