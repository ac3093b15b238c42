#pragma once

#include <stdexcept>
#include <string>

namespace dietfield {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for the named op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value that must be finite was NaN or infinite.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// File contents violate the expected format (bad magic, truncated payload, missing tensor, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Input data or configuration violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace dietfield
