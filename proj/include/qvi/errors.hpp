#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qvi {

/// Invalid input: bad parameters, mismatched grids, violated preconditions.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An iterative solver stopped without meeting its tolerance. Carries the
/// recorded residual history so callers can report it.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, std::vector<double> history = {})
        : std::runtime_error(what), history_(std::move(history)) {}

    const std::vector<double>& history() const { return history_; }

private:
    std::vector<double> history_;
};

/// A property that must hold by construction (ordering, bracketing) failed.
/// Always indicates a bug, never bad input.
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace qvi
