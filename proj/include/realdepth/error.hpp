#pragma once

#include <stdexcept>
#include <string>

namespace realdepth {

// Invalid argument, shape or configuration. Maps to CLI exit code 1.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or unreadable file, failed write. Maps to CLI exit code 2.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure during optimization (non-finite gradient, empty data).
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ParameterError(message);
}

}  // namespace realdepth
