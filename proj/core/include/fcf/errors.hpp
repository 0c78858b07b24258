#pragma once

#include <stdexcept>
#include <string>

namespace fcf {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor extent mismatch; the message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration value.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// A forward op produced NaN/Inf while finite checks were enabled,
/// or a loss became non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File I/O or format failure; the message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fcf
