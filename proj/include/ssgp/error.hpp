#pragma once

#include <stdexcept>
#include <string>

namespace ssgp {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input lies outside the mathematical domain of an operation
/// (non-finite parameter, negative step, unknown quantity, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An object could not be built from the given parts (unsupported
/// smoothness, dimension mismatch, non-PSD covariance, ...).
class ConstructionError : public Error {
 public:
  using Error::Error;
};

/// A factorization or solve failed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A query fell outside a tabulated range; tables never extrapolate.
class ExtrapolationError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// A problem exceeds a hard size guard.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or input file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssgp
