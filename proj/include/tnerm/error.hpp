#pragma once

#include <stdexcept>
#include <string>

namespace tnerm {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Bad input data: domain violations, malformed files, degenerate designs.
class InputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "input"; }
};

/// Parameter outside its admissible range (e.g. a negative lambda).
class ParameterError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "parameter"; }
};

/// Floating point overflow or saturation that would otherwise yield inf/NaN.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

class LinearAlgebraError : public Error {
 public:
  LinearAlgebraError(const std::string& what, double condition)
      : Error(what + " (condition estimate " + std::to_string(condition) + ")"),
        condition_(condition) {}
  const char* kind() const noexcept override { return "linear_algebra"; }
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Iterative solver failure. Carries the last iterate and its residual.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_iterate = 0.0, double residual = 0.0)
      : Error(what), last_iterate_(last_iterate), residual_(residual) {}
  const char* kind() const noexcept override { return "convergence"; }
  double last_iterate() const noexcept { return last_iterate_; }
  double residual() const noexcept { return residual_; }

 private:
  double last_iterate_;
  double residual_;
};

}  // namespace tnerm
