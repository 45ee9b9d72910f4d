#pragma once

#include <stdexcept>
#include <string>

namespace lpimpute {

// Precondition and shape violations use std::invalid_argument / std::out_of_range.
// The types below classify failures that callers (the CLI in particular) map to
// distinct exit codes.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lpimpute
