#pragma once

// Finite-difference forward solver for div(C : eps(u)) = 0 with Dirichlet data.
//
// Collocated grid. Unmixed terms d_i(C_ijki d_i u_k) use the compact
// three-point stencil with C averaged to the half-node; mixed terms (i != l)
// use wide central differences d_i(C d_l u). The resulting operator is
// symmetric on interior nodes, exact on quadratics for constant C, and
// needs no one-sided stencils.

#include <cstddef>
#include <functional>
#include <optional>

#include "elastrecon/grid.hpp"
#include "elastrecon/tensor_core.hpp"

namespace elastrecon {

/// Stiffness stored as 21 components per node (stiffness_component_pairs order).
Field stiffness_field(const Grid& grid, const std::function<Stiffness(const Vec3&)>& fn);
Stiffness stiffness_at(const Field& c21, std::size_t node);

struct ForwardProblem {
  Field stiffness;  // 21 components
  Field boundary;   // 3 components; only boundary nodes are read

  /// Throws std::invalid_argument on grid mismatch or an unstable node.
  void validate() const;
};

/// (div C : eps(u)) at interior nodes, zero on the boundary.
Field assemble_apply(const ForwardProblem& p, const Field& u);

struct CgIteration {
  std::size_t iteration = 0;
  double relative_residual = 0.0;
  /// 1/2 x.Kx - b.x for the SPD system K x = b; decreases monotonically.
  double energy = 0.0;
};

struct SolveOptions {
  double tol = 1e-10;
  /// 0 selects 20 * sqrt(number of unknowns).
  std::size_t max_iter = 0;
  std::size_t threads = 1;
  /// Interior values of this field seed the iteration.
  const Field* initial_guess = nullptr;
  std::function<void(const CgIteration&)> on_iteration;
};

struct SolveResult {
  Field u;
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

/// Conjugate gradients on the interior unknowns, boundary values moved to the
/// right-hand side. Throws ConvergenceError when max_iter is exhausted.
SolveResult solve_dirichlet(const ForwardProblem& p, const SolveOptions& opt = {});

/// Strain-convention Voigt strain of a displacement field by finite differences.
Field strain_of(const Field& u, int order = 2);

}  // namespace elastrecon
