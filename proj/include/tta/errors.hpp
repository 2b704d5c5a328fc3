#pragma once

#include <stdexcept>
#include <string>

namespace tta {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A softmax row with every entry masked.
class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

/// A forward op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Sequence length outside the supported range.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Token position outside the range an operation accepts.
class PositionError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a precondition that is not about shapes.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the offending line when known.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace tta
