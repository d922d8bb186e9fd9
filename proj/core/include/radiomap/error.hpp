#pragma once

#include <stdexcept>
#include <string>

namespace radiomap {

// Base class for all errors raised by the library. Loaders and validators
// throw these instead of aborting; the CLI maps each category to an exit code.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid input data or configuration (bad shapes, out-of-range fields).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Filesystem and container-format failures (bad magic, truncation, unwritable).
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

} // namespace radiomap
