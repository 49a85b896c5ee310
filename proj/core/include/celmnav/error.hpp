#pragma once

#include <stdexcept>
#include <string>

namespace celmnav {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument or shape inconsistency detected at a function boundary.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// The blob analysis found no foreground pixel.
class EmptyBlobError : public Error {
 public:
  using Error::Error;
};

/// The rendered body does not intersect the field of view.
class OutOfViewError : public Error {
 public:
  using Error::Error;
};

/// Cholesky factorization of a regularized Gram matrix failed.
class FactorizationError : public Error {
 public:
  using Error::Error;
};

/// A training loss or a feature became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace celmnav
