#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spde {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument or configuration value (maps to CLI exit code 1).
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Configuration file / override could not be parsed.
class ConfigError : public InvalidParameter {
 public:
  using InvalidParameter::InvalidParameter;
};

/// A numerical failure (maps to CLI exit code 2).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A pointwise function returned a non-finite value.
class EvaluationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Linear solve failed (factorization breakdown, singular matrix, residual too large).
class SolverError : public NumericalError {
 public:
  SolverError(const std::string& what, double residual = -1.0)
      : NumericalError(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Newton iteration did not reach tolerance.
class StepFailure : public NumericalError {
 public:
  StepFailure(const std::string& what, double residual, int iterations)
      : NumericalError(what), residual_(residual), iterations_(iterations) {}
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// A state became non-finite or exceeded the divergence guard.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace spde
