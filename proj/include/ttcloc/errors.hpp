#pragma once

#include <stdexcept>
#include <string>

namespace ttcloc {

/// Bad input: malformed files, invariant violations, invalid configuration.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or a failed gradient check.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ttcloc
