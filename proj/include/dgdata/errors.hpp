#pragma once

#include <stdexcept>
#include <string>

namespace dgdata {

// Shape or size disagreement between operands.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (hyperparameter, schema name, transform, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or insufficient input data.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Label outside the declared range.
struct LabelError : std::runtime_error {
    explicit LabelError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation attempted in an invalid state (missing pseudo labels, detached backward, ...).
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value produced by a numeric op, or training divergence.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or incompatible checkpoint file.
struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace dgdata
