#pragma once

#include <stdexcept>
#include <string>

namespace psv {

// Bad inputs: shapes, ranges, malformed files, degenerate configurations.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical breakdown: NaN gradients, failed gradient checks.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace psv
