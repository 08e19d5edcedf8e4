#pragma once

#include <stdexcept>
#include <string>

namespace panoctx {

// Bad arguments or violated preconditions (CLI exit code 1/2 depending on source).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files, shape mismatches, broken topology.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf, divergence, undefined metrics.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace panoctx
