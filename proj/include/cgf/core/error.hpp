#pragma once

#include <stdexcept>
#include <string>

namespace cgf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or rank contract violated by a caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A primitive produced NaN/Inf, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable on-disk data (rasters, checkpoints, manifests).
class FormatError : public Error {
 public:
  enum class Kind { io, bad_magic, truncated, zero_dims, bad_version, malformed };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace cgf
