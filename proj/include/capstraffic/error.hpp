#pragma once

#include <stdexcept>
#include <string>

namespace capstraffic {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required (NaN loss, inf gradient).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (CSV content, imputation, windowing).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Task/model geometry that cannot be built or does not match the data.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, corrupt or incompatible checkpoint file.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// File system failures while writing outputs.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace capstraffic
