#pragma once

#include <stdexcept>
#include <string>

namespace dsdm {

// Exception hierarchy. The CLI maps each kind to a distinct exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input values, malformed files, violated preconditions.
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// A kernel produced a non-finite quantity it cannot recover from.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace dsdm
