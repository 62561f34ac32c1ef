#pragma once

#include <stdexcept>
#include <string>

namespace flare {

// Base class for every error this library raises on contract violations.
struct FlareError : std::runtime_error {
  explicit FlareError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes incompatible with the requested operation.
struct ShapeError : FlareError {
  using FlareError::FlareError;
};

// Symmetric factorization failed; `minor_index` is the first leading minor
// (0-based pivot) that was not positive.
struct SingularMatrixError : FlareError {
  int minor_index;
  SingularMatrixError(const std::string& msg, int minor)
      : FlareError(msg), minor_index(minor) {}
};

// A numeric result left the finite range (NaN or infinity).
struct NumericError : FlareError {
  using FlareError::FlareError;
};

// Caller violated a documented precondition.
struct ContractError : FlareError {
  using FlareError::FlareError;
};

// Malformed input file; `row` is the 1-based offending line, 0 if unknown.
struct ParseError : FlareError {
  int row;
  explicit ParseError(const std::string& msg, int row_ = 0)
      : FlareError(msg), row(row_) {}
};

// The request is well formed but cannot be satisfied by the data.
struct InfeasibleError : FlareError {
  using FlareError::FlareError;
};

}  // namespace flare
