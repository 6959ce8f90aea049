#pragma once

#include <stdexcept>
#include <string>

namespace regnn {

/// Shape mismatches, empty inputs and other violated preconditions.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values, underflow, or an iteration that failed to settle.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An iterative solver ran out of iterations. Carries the last estimate
/// (power iteration) or residual (fixed-point inversion).
class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, double last_value, std::size_t iterations)
        : NumericError(what), last_value_(last_value), iterations_(iterations) {}

    double last_value() const noexcept { return last_value_; }
    std::size_t iterations() const noexcept { return iterations_; }

private:
    double last_value_;
    std::size_t iterations_;
};

/// A layer was used in a state its contract forbids (e.g. un-enforced).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace regnn
