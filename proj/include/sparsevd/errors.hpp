#pragma once

#include <stdexcept>
#include <string>

namespace sparsevd {

/// Shape or extent mismatch between operands.
struct dimension_error : std::runtime_error {
    explicit dimension_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid argument value (out-of-range rate, zero sample count, bad label...).
struct argument_error : std::runtime_error {
    explicit argument_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operation called in the wrong order (e.g. backward without a cached forward).
struct state_error : std::runtime_error {
    explicit state_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure: singular system, NaN loss, overflow.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input data: IDX files, checkpoints, dataset inconsistencies.
struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed run configuration (unknown key, bad section, missing value).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace sparsevd
