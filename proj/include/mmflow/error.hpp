#pragma once

#include <stdexcept>
#include <string>

namespace mmflow {

// Bad arguments, shapes, config values, malformed files. Maps to exit code 2.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (e.g. NaN loss). Exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mmflow
