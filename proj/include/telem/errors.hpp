#pragma once

#include <stdexcept>
#include <string>

namespace telem {

// Data problems found in input files: bad rows, impossible values, missing
// columns. Carries enough context to name the offending location.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Errors in caller-supplied configuration or arguments.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failures: rank deficiency, non-convergence, degenerate inputs.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace telem
