#pragma once

#include <stdexcept>
#include <string>

namespace nirvis {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument values, shapes, or ranges.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (e.g. spectral grid mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or malformed data on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace detail
}  // namespace nirvis
