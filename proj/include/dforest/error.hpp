#pragma once

#include <stdexcept>
#include <string>

namespace dforest {

// Runtime failure in data, model or training code. The CLI maps it to exit 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad command-line input. The CLI maps it to exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dforest
