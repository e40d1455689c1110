#pragma once

#include <stdexcept>
#include <string>

namespace mlctl {

// Inconsistent matrix/vector shapes.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Argument outside the set where an operation is defined (time outside [0,T],
// non-increasing grid, point outside a function's domain, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// A documented precondition of the operation does not hold.
struct PreconditionError : std::logic_error {
    using std::logic_error::logic_error;
};

// Non-finite values, eigensolver failure, ill-conditioned pivots.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Adjoint output sits on a breakpoint over a set of positive length.
struct DegenerateAdjointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Two breakpoint crossings were found inside one bracketing cell.
struct GridTooCoarseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A control level is not a member of the admissible level set.
struct MembershipError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed experiment configuration. `field` names the offending key.
struct ConfigError : std::runtime_error {
    ConfigError(std::string field_name, const std::string& what)
        : std::runtime_error(field_name + ": " + what), field(std::move(field_name)) {}
    std::string field;
};

} // namespace mlctl
