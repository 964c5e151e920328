#pragma once

#include <stdexcept>
#include <string>

namespace vrfuse {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: config, CLI arguments, manifest contents.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace vrfuse
