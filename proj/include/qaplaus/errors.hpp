#pragma once

#include <stdexcept>
#include <string>

namespace qaplaus {

// Bad input data or configuration. The CLI maps this to exit code 1.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File could not be opened, read or written. Also exit code 1.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite activation or loss during a forward/backward pass.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace qaplaus
