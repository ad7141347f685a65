#pragma once

#include <stdexcept>
#include <string>

namespace dyntreat {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input, config, or violated precondition. The CLI maps this to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or exploding parameters during learning. The CLI maps this to exit code 3.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dyntreat
