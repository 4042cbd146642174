#pragma once

#include <stdexcept>
#include <string>

namespace vcm {

inline constexpr const char* kVersion = "0.1.0";

// Base error for all library failures surfaced to callers.
class VcmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension/shape mismatches; the message names both shapes.
class ShapeError : public VcmError {
 public:
  using VcmError::VcmError;
};

// Invalid configuration or argument values.
class ConfigError : public VcmError {
 public:
  using VcmError::VcmError;
};

}  // namespace vcm
