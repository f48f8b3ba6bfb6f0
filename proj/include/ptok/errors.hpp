#pragma once

#include <stdexcept>
#include <string>

namespace ptok {

// Invalid settings or arguments: bad dimensions, out-of-range options,
// unusable CLI invocations. Exit code 2 at the CLI boundary.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data: dataset files, checkpoints,
// fixture records. Exit code 3 at the CLI boundary.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures while computing: divergence, non-finite values, context
// overflow, missing vocabulary coverage. Exit code 4 at the CLI boundary.
class ComputeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ptok
