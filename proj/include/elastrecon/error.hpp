#pragma once

#include <stdexcept>
#include <string>

namespace elastrecon {

/// An iterative method (Jacobi sweeps, conjugate gradients) exhausted its budget.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, int iterations, double residual)
      : std::runtime_error(what), iterations_(iterations), residual_(residual) {}

  int iterations() const { return iterations_; }
  double residual() const { return residual_; }

 private:
  int iterations_;
  double residual_;
};

/// A matrix that must be inverted was numerically singular.
class SingularMatrixError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace elastrecon
