#pragma once

#include <stdexcept>
#include <string>

namespace mtsparse {

/// Invalid shapes, hyperparameters or config fields.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation invoked in the wrong lifecycle state (e.g. backward twice).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite values surfaced from a numeric kernel.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input data inconsistent with stored constants or schemas.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A training hook failed; `hook()` names it.
class HookError : public std::runtime_error {
 public:
  HookError(std::string hook, const std::string& what)
      : std::runtime_error("hook '" + hook + "' failed: " + what), hook_(std::move(hook)) {}
  const std::string& hook() const { return hook_; }

 private:
  std::string hook_;
};

}  // namespace mtsparse
