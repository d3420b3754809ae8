#pragma once

#include <stdexcept>
#include <string>

namespace sam {

/// Operand shapes do not fit the operation.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Caller broke a documented precondition (backward on a non-scalar, step before backward, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Input data outside the accepted domain.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sam
