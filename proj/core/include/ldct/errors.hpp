#pragma once

#include <stdexcept>
#include <string>

namespace ldct {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor extents or layer dimensions do not line up.
struct ShapeError : Error {
  using Error::Error;
};

/// An argument value is outside its admissible range.
struct ParameterError : Error {
  using Error::Error;
};

/// A file or checkpoint does not match the expected on-disk format.
struct FormatError : Error {
  using Error::Error;
};

/// An API was invoked in a state its contract forbids
/// (e.g. inference through uninitialized batch-norm statistics).
struct ContractError : Error {
  using Error::Error;
};

/// Non-finite values or numerical divergence were detected.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace ldct
