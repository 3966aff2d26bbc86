#pragma once

#include <stdexcept>
#include <string>

namespace eer {

/// Bad input: malformed files, invalid configuration, violated preconditions.
/// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while doing valid work (I/O, divergence, numerical trouble).
/// The CLI maps this to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eer
