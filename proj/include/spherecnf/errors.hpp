#pragma once

#include <stdexcept>
#include <string>

namespace spherecnf {

/// Invalid configuration, arguments or file contents. The CLI maps this to
/// exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure (non-finite state, degenerate retraction, ...). The CLI
/// maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Integration failure carrying the step index at which the state went bad.
class IntegrationError : public NumericError {
 public:
  IntegrationError(const std::string& what, int step)
      : NumericError(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}

  int step() const noexcept { return step_; }

 private:
  int step_;
};

}  // namespace spherecnf
