#pragma once

#include <stdexcept>
#include <string>

namespace rareaug {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Caller violated a documented precondition (bad argument, bad shape).
class PreconditionError : public Error {
  public:
    using Error::Error;
};

/// Input data is unusable: unparsable CSV, missing column, too few rows,
/// no minority structure.
class DataError : public Error {
  public:
    using Error::Error;
};

/// A numerical routine failed: non-finite values, unfactorizable matrix,
/// diverged training.
class NumericalError : public Error {
  public:
    using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw PreconditionError(message);
    }
}

} // namespace detail
} // namespace rareaug
