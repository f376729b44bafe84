#pragma once

#include <stdexcept>
#include <string>

namespace pren {

/// Operand shapes do not fit the operation.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Hyperparameters or layer settings produce an invalid network (e.g. a
/// convolution whose output would be empty).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// API misuse: calling backward on a non-scalar, overlong label, etc.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

/// NaN/Inf where finite values are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or incompatible file (checkpoint, PGM, config).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pren
