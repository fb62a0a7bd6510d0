#pragma once

#include <stdexcept>
#include <string>

namespace vpflip {

/// Base class for all library failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration values.
struct ConfigError : Error {
  using Error::Error;
};

/// Numerical failure: divergence, loss of rank, out-of-domain input.
struct NumericsError : Error {
  using Error::Error;
};

/// Euler-angle or matrix singularity guard tripped.
struct SingularityError : NumericsError {
  using NumericsError::NumericsError;
};

/// An iteration exhausted its budget without meeting its tolerance.
struct ConvergenceError : NumericsError {
  using NumericsError::NumericsError;
};

/// Filesystem / serialization failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace vpflip
