#pragma once

#include <stdexcept>
#include <string>

namespace peac {

/// Invalid configuration or argument (CLI exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// GridSpec invariant violation; the message names the violated rule.
class GridSpecError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Array shapes do not match the operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Missing, unreadable or malformed input data (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or degenerate numerics (CLI exit code 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace peac
