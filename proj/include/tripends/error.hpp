#pragma once

#include <stdexcept>
#include <string>

namespace tripends {

/// Bad or missing input: unreadable files, malformed headers, invalid config.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input that is well-formed but cannot support the requested computation.
class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tripends
