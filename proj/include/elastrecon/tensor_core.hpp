#pragma once

// Voigt-notation tensor algebra for 3D linear elasticity.
//
// Index conventions: Voigt slot order is 11, 22, 33, 23, 31, 12. Strain
// vectors carry doubled shear entries, stress vectors do not, so that
// sigma_V = c * eps_V with c the symmetric 6x6 stiffness matrix.

#include <array>
#include <cstddef>
#include <span>
#include <utility>

#include "elastrecon/dense.hpp"

namespace elastrecon {

/// Symmetric 3x3 tensor stored by its six independent entries.
struct Sym3 {
  double xx = 0.0, yy = 0.0, zz = 0.0, yz = 0.0, xz = 0.0, xy = 0.0;

  /// Entry (i, j), 0-based.
  double operator()(std::size_t i, std::size_t j) const;

  static Sym3 from_matrix(const Mat3& m);  // symmetric part
  Mat3 to_matrix() const;

  Sym3& operator+=(const Sym3& o);
  Sym3& operator*=(double s);
  friend Sym3 operator+(Sym3 l, const Sym3& r) { return l += r; }
  friend Sym3 operator*(double s, Sym3 t) { return t *= s; }
  friend bool operator==(const Sym3&, const Sym3&) = default;
};

/// A : B = sum_ij A_ij B_ij.
double contract(const Sym3& a, const Sym3& b);
double trace(const Sym3& a);

enum class VoigtConvention { Strain, Stress };

struct Voigt6 {
  Vec6 v{};
  VoigtConvention convention = VoigtConvention::Strain;

  double operator[](std::size_t i) const { return v[i]; }
  double& operator[](std::size_t i) { return v[i]; }
};

/// Maps a symmetric index pair (1-based, 1..3) to its Voigt slot (1..6).
int voigt_index(int i, int j);

/// Voigt slot (0-based) -> index pair (0-based).
std::pair<std::size_t, std::size_t> voigt_pair(std::size_t slot);

Voigt6 strain_to_voigt(const Sym3& e);
Sym3 voigt_to_strain(const Voigt6& v);
Voigt6 stress_to_voigt(const Sym3& s);
Sym3 voigt_to_stress(const Voigt6& v);

/// Number of independent entries of a symmetric 6x6 matrix.
inline constexpr std::size_t kStiffnessComponents = 21;

/// Storage order of the 21 independent entries: the six diagonal entries,
/// then the off-diagonal pairs (a, b), a < b, lexicographically.
const std::array<std::pair<std::size_t, std::size_t>, kStiffnessComponents>& stiffness_component_pairs();

/// Symmetric 6x6 Voigt stiffness matrix c_ab.
class Stiffness {
 public:
  Stiffness() = default;

  /// Throws std::invalid_argument if `m` is not symmetric to 1e-12 relative.
  static Stiffness from_matrix(const Mat6& m);
  static Stiffness from_components(std::span<const double> c21);
  static Stiffness identity() { return Stiffness(Mat6::identity()); }
  static Stiffness isotropic(double lambda, double mu);

  double operator()(std::size_t a, std::size_t b) const { return c_(a, b); }
  const Mat6& matrix() const { return c_; }
  std::array<double, kStiffnessComponents> components() const;

  /// Fourth-order entry C_ijkl (0-based indices).
  double tensor(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const;

  Stiffness scaled(double s) const { return Stiffness(c_ * s); }

 private:
  explicit Stiffness(const Mat6& m) : c_(m) {}
  Mat6 c_ = Mat6::identity();
};

/// Hooke's law sigma_V = c eps_V. Throws std::invalid_argument when the
/// input is not in strain convention.
Voigt6 apply_hooke(const Stiffness& c, const Voigt6& strain);

/// C : e for a symmetric strain tensor, as a symmetric stress tensor.
Sym3 apply_hooke(const Stiffness& c, const Sym3& strain);

/// det of the 6x6 matrix whose columns are the strain-convention Voigt images.
double det_v(std::span<const Sym3, 6> strains);

/// Voigt matrix with columns taken as given (already strain convention).
double det_v(std::span<const Vec6, 6> columns);

/// Scaled representation c'_ij = 2^{(chi(i)+chi(j))/2} c_ij with chi = 0 on the
/// normal block and 1 on the shear block; its eigenvalues are the eigenvalues
/// of C acting on symmetric matrices and det(c') = 8 det(c).
Mat6 mehrabadi(const Stiffness& c);

/// All eigenvalues (ascending) of a symmetric 6x6 matrix by cyclic Jacobi
/// rotations. Throws ConvergenceError after 50 sweeps.
Vec6 eigenvalues_sym6(const Mat6& a);

double min_eig_sym6(const Mat6& a);

struct StabilityReport {
  bool is_stable = false;
  /// lambda_min(c') / 2.
  double kappa_eff = 0.0;
  /// lambda_min(c')^6 / 8, a lower bound for det(c) when stable.
  double det_lower_bound = 0.0;
  double lambda_min = 0.0;
};

StabilityReport stability_check(const Stiffness& c);

}  // namespace elastrecon
