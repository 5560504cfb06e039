#pragma once

#include <stdexcept>
#include <string>

namespace shiftadapt {

// Thrown for malformed configuration (bad widths, negative rates, unknown
// config keys, ...). CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for malformed or inconsistent data (shape mismatches, missing
// columns, labels out of range, ...). CLI maps this to exit code 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a numeric invariant breaks (non-finite loss or gradient).
// CLI maps this to exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace shiftadapt
