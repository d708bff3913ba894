// Shared error types and small utilities.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wid {

// Error taxonomy used across the library. The CLI maps these to exit codes:
//   ConfigError / DimError / StateError / IndexError -> 1
//   IoError                                          -> 2
//   NumericError                                     -> 3
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DimError : std::runtime_error {
    explicit DimError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr const char* kVersionString = "wid 0.1.0";

}  // namespace wid
