#pragma once

#include <stdexcept>
#include <string>

namespace tselab {

// Incompatible matrix dimensions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration or malformed input (bad flag combination,
// non-stochastic matrix, h not dividing d, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A measure was requested at a boundary where it is undefined
// (similarity exactly 0 or 1, vanishing projector energy).
class BoundaryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A measure is undefined for the whole input (zero matrix, zero row).
class UndefinedMeasureError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite values appeared where finite arithmetic was required.
class OverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An iterative method ran out of its iteration budget. Carries the last
// iterate so callers can inspect how far it got.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_estimate)
      : std::runtime_error(what), last_estimate_(last_estimate) {}

  double last_estimate() const noexcept { return last_estimate_; }

 private:
  double last_estimate_;
};

}  // namespace tselab
