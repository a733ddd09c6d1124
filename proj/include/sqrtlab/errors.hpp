#pragma once

#include <stdexcept>
#include <string>

namespace sqrtlab {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// An iterative evaluation did not reach its tolerance. `partial` holds the
/// last value computed before the budget ran out.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, double partial)
        : std::runtime_error(what), partial_(partial) {}

    double partial() const noexcept { return partial_; }

private:
    double partial_;
};

class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every importance weight in a batch vanished.
class DegenerateBatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The requested simulator cannot represent this configuration
/// (e.g. a squared Bessel process of non-positive dimension).
class UnsupportedConfiguration : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Too many simulated paths ended without a decision.
class InconclusiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sqrtlab
