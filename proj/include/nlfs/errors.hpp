#pragma once

#include <stdexcept>
#include <string>

namespace nlfs {

/// Bad user input: grid geometry, parameter ranges, malformed config.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An iterative solver ran out of iterations or detected a breakdown.
/// Carries the last residual so callers can report how close it got.
struct SolverError : std::runtime_error {
  SolverError(const std::string& what, double residual_, int iterations_)
      : std::runtime_error(what), residual(residual_), iterations(iterations_) {}
  double residual;
  int iterations;
};

/// Internal consistency violation: transform residue, algebra mismatch,
/// broken invariant. These indicate a bug, not bad input.
struct InternalError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Filesystem trouble: unreadable input, unwritable output.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nlfs
