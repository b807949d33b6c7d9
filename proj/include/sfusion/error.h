#pragma once

#include <stdexcept>
#include <string>

namespace sfusion {

// Root of every error thrown by the library. The CLI maps these to a
// structured message and a nonzero exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not satisfy an op's shape rule.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A precondition of a call was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed input file or stream.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Missing or unreadable/unwritable file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sfusion
