#pragma once

#include <stdexcept>
#include <string>

namespace pldnet {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-range caller input (empty audio, wrong channel count, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that do not agree with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced inside the tensor engine (checked builds only).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pldnet
