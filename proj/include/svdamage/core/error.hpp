#pragma once

#include <stdexcept>
#include <string>

namespace svdamage {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input from the caller: malformed files, out-of-range values, shape
// mismatches. The CLI maps these to exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

// A referenced entity (pair, image, layer) does not exist.
class NotFound : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Failure while doing otherwise valid work (I/O, numerical blow-up).
// The CLI maps these to exit code 2.
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

} // namespace svdamage
