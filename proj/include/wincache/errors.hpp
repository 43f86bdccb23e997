#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace wincache {

// Base for every error the library raises. The CLI maps subclasses onto
// process exit codes (validation -> 2, fit -> 3, invariant -> 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// A numerical fit that failed to converge or was rank deficient. Carries the
// best parameters found so far (empty when none are meaningful).
class FitError : public Error {
 public:
  FitError(const std::string& what, std::vector<double> best = {})
      : Error(what), best_(std::move(best)) {}
  const std::vector<double>& best() const { return best_; }

 private:
  std::vector<double> best_;
};

// Operation invoked in the wrong lifecycle state (stepping a finished
// episode, detecting before warm-up, re-estimating a set-once baseline).
class StateError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

// Internal invariant breach; indicates a bug rather than bad input.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace wincache
