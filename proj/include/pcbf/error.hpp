#pragma once

#include <stdexcept>
#include <string>

namespace pcbf {

/// Invalid configuration value (ranges, sizes, coefficients).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dimension mismatch between parameters and data.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An operation was called outside its precondition (empty batch, bad t, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value appeared during a computation.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long index = -1)
      : std::runtime_error(what), index_(index) {}
  /// Step, layer, or item index where the failure was detected (-1 if none).
  long index() const noexcept { return index_; }

 private:
  long index_;
};

/// A closed-form map evaluated at a point where it is undefined.
class SingularError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pcbf
