#ifndef DETTHIN_ERROR_HPP
#define DETTHIN_ERROR_HPP

#include <stdexcept>
#include <string>

namespace detthin {

enum class ErrorKind {
  invalid_subset,
  invalid_kernel,
  no_l_representation,
  invalid_function,
  zero_probability_conditioning,
  numeric,
  too_large,
  invalid_argument,
  saturation,
  invalid_training_pair,
  unstable_conditioning,
  optimization_failure,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_subset: return "invalid-subset";
    case ErrorKind::invalid_kernel: return "invalid-kernel";
    case ErrorKind::no_l_representation: return "no-L-representation";
    case ErrorKind::invalid_function: return "invalid-function";
    case ErrorKind::zero_probability_conditioning: return "zero-probability-conditioning";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::too_large: return "too-large";
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::saturation: return "saturation";
    case ErrorKind::invalid_training_pair: return "invalid-training-pair";
    case ErrorKind::unstable_conditioning: return "unstable-conditioning";
    case ErrorKind::optimization_failure: return "optimization-failure";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Single exception type for the library; `kind()` tells callers which
/// contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Numeric failure that carries the residual norm of the failed step.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, double residual)
      : Error(ErrorKind::numeric, what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Thrown when a quality exponent would overflow exp().
class SaturationError : public Error {
 public:
  SaturationError(std::size_t index, double exponent)
      : Error(ErrorKind::saturation, "quality exponent " + std::to_string(exponent) +
                                         " at point " + std::to_string(index)),
        index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace detthin

#endif  // DETTHIN_ERROR_HPP
