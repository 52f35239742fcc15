#pragma once

// Exact polynomial solutions of div(C : eps(u)) = 0 for constant C.

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "elastrecon/dense.hpp"
#include "elastrecon/tensor_core.hpp"

namespace elastrecon {

/// Strain-convention Voigt vectors with eps_V(x) = x V1 + y V2 + z V3.
struct VTriple {
  Vec6 v1{}, v2{}, v3{};

  const Vec6& operator[](std::size_t a) const { return a == 0 ? v1 : (a == 1 ? v2 : v3); }
  Vec6& operator[](std::size_t a) { return a == 0 ? v1 : (a == 1 ? v2 : v3); }
};

/// u(x) = (x.Px/2, x.Qx/2, x.Rx/2) + L x + u0.
struct QuadraticDisplacement {
  Sym3 p, q, r;
  Mat3 linear{};
  Vec3 constant{};
};

/// The six affine fields whose Voigt strains are the unit vectors e_1..e_6.
std::array<QuadraticDisplacement, 6> linear_basis_fields();

VTriple v_from_pqr(const Sym3& p, const Sym3& q, const Sym3& r);

struct PQR {
  Sym3 p, q, r;
};
PQR pqr_from_v(const VTriple& v);

/// Residuals of the three scalar conditions c_1.V1 + c_6.V2 + c_5.V3 etc.;
/// equal to div(c eps) of the quadratic field.
Vec3 solution_conditions(const Stiffness& c, const VTriple& v);

QuadraticDisplacement from_vtriple(const VTriple& v);
VTriple vtriple_of(const QuadraticDisplacement& f);

/// Quadratic solutions whose constraint matrices span the orthogonal
/// complement of c: the three "two vanishing V" cases (three fields each) and
/// the two "one vanishing V" families with unit (alpha, beta, gamma). Emits 15
/// fields. Throws SingularMatrixError when c is numerically singular.
std::vector<QuadraticDisplacement> general_family(const Stiffness& c);

/// Fixed-size random linear combinations of general_family(c) (seeded),
/// chosen so that the stacked constraints still reach rank 20.
std::vector<QuadraticDisplacement> mixed_family(const Stiffness& c, std::size_t count, std::uint64_t seed);

/// Transversely isotropic parameters (axis e_3).
struct TIParams {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0, e = 0.0;

  Vec<5> as_vector() const { return {a, b, c, d, e}; }
};

Stiffness ti_tensor(const TIParams& t);

class SplitMix64;

/// Random stiffness whose Mehrabadi matrix has eigenvalues uniform in
/// [lo, hi] and Haar-like random eigenvectors (Gram-Schmidt of a Gaussian matrix).
Stiffness random_stable_stiffness(SplitMix64& rng, double lo = 0.5, double hi = 5.0);

/// Random TI parameters whose Mehrabadi eigenvalues lie in [lo, hi].
TIParams random_ti_params(SplitMix64& rng, double lo = 0.5, double hi = 5.0);

/// Matrix representation of the TI parameter map: ti_tensor(t) = sum_k t_k B_k.
const std::array<Mat6, 5>& ti_basis();

/// The two extra quadratic solutions for the TI tensor. Coefficients follow
/// the (P,Q,R) <-> V correspondence exactly; they are half of the fields as
/// usually printed, which are solutions all the same.
std::pair<QuadraticDisplacement, QuadraticDisplacement> ti_fields(const TIParams& t);

/// 3x5 matrix K(V) such that solution_conditions(ti_tensor(t), V) = K(V) t.
Mat<3, 5> ti_condition_rows(const VTriple& v);

Vec3 eval_field(const QuadraticDisplacement& f, const Vec3& x);
Sym3 eval_strain(const QuadraticDisplacement& f, const Vec3& x);
/// Second derivatives: strain_gradient(f)[a] = d eps_V / d x_a (constant).
VTriple strain_gradient(const QuadraticDisplacement& f);
/// Symmetric part of the linear map as a strain-convention Voigt vector.
Vec6 affine_strain(const QuadraticDisplacement& f);

/// Analytic div(c eps(u)) for constant c (constant in space).
Vec3 stress_divergence(const Stiffness& c, const QuadraticDisplacement& f);

/// Symmetrized constraint matrices of a quadratic field for constant data
/// with the linear basis: M^1 = V1 (x) e1 + V2 (x) e6 + V3 (x) e5, etc.
std::array<Mat6, 3> constraint_matrices_of(const VTriple& v);

}  // namespace elastrecon
