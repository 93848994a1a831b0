#pragma once

#include <stdexcept>
#include <string>

namespace geomt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or map dimensions disagree with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid value in a configuration struct or config file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent on-disk data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A loss term or gradient became NaN/Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace geomt
