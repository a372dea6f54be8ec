#pragma once

#include <stdexcept>
#include <string>

namespace regime {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Violated precondition on a call argument (lengths, ranges, signs).
class ArgumentError : public Error {
public:
  using Error::Error;
};

// Data that is finite and well-shaped but carries no usable information,
// e.g. a constant column.
class DegenerateDataError : public Error {
public:
  using Error::Error;
};

// Factorization failures, non-convergence and similar.
class NumericalError : public Error {
public:
  using Error::Error;
};

// Fewer distinct points than trend coefficients.
class IdentifiabilityError : public Error {
public:
  using Error::Error;
};

class UnsupportedDimensionError : public Error {
public:
  using Error::Error;
};

// Malformed user input files (CSV, artifacts).
class InputError : public Error {
public:
  using Error::Error;
};

// Configuration schema violations; the message carries the key path.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Wraps a sub-module failure with the pipeline stage it came from.
class StageError : public Error {
public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

private:
  std::string stage_;
};

}  // namespace regime
