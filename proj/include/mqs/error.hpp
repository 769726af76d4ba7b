#pragma once

#include <stdexcept>
#include <string>

namespace mqs {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: scenario files, mesh files, invalid arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A numerical kernel could not produce a result (non-convergence, breakdown).
class SolverError : public Error {
public:
    using Error::Error;
};

/// Cholesky-type breakdown on a nonpositive pivot. `pivot` is the failing row.
class FactorizationError : public SolverError {
public:
    FactorizationError(const std::string& what, std::size_t pivot)
        : SolverError(what), pivot_(pivot) {}
    std::size_t pivot() const noexcept { return pivot_; }

private:
    std::size_t pivot_;
};

/// The explicit scheme produced non-finite or exploding values.
class InstabilityError : public Error {
public:
    using Error::Error;
};

} // namespace mqs
