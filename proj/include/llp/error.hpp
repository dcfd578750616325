#pragma once

#include <stdexcept>
#include <string>

namespace llp {

// Base class for all errors raised by the engine.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / rank mismatches.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// NaN or Inf produced by a numeric primitive.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Domain errors: unknown class codes, bad configuration values, empty inputs.
struct ValueError : Error {
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

// Binary file format errors, with a distinct kind per failure mode.
struct FormatError : Error {
  enum class Kind { BadMagic, BadVersion, Truncated, ChecksumMismatch, BadValue };

  FormatError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
  Kind kind;
};

}  // namespace llp
