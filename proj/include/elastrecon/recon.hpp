#pragma once

// Pointwise reconstruction of C = tau * C~ from strain measurements.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "elastrecon/grid.hpp"
#include "elastrecon/hyperplane.hpp"
#include "elastrecon/synth_fields.hpp"
#include "elastrecon/tensor_core.hpp"

namespace elastrecon {

/// eps_V(x) = base + x V1 + y V2 + z V3 in absolute coordinates.
struct AffineStrain {
  Vec6 base{};
  VTriple gradient;

  Vec6 at(const Vec3& x) const;
  static AffineStrain of(const QuadraticDisplacement& f);
};

struct MeasurementSet {
  Grid grid;
  /// Strain-convention Voigt fields; the first six form the candidate basis.
  std::vector<Field> strains;
  /// Either empty or one entry per strain. Strain derivatives are taken from
  /// these when every entry is present, by finite differences otherwise.
  std::vector<std::optional<AffineStrain>> analytic;

  bool is_analytic() const;
  std::size_t extra() const { return strains.size() > 6 ? strains.size() - 6 : 0; }
  /// Throws std::invalid_argument on inconsistent grids or component counts.
  void validate() const;

  /// Samples the strains of polynomial fields and keeps their exact gradients.
  static MeasurementSet sample(const Grid& grid, const std::vector<QuadraticDisplacement>& fields);
};

enum class NormalMethod { Nullspace, CrossprodSum, Auto };
enum class TauMethod { Path, Poisson };
/// Full: 21-parameter tensor. TransverseIsotropic: 5 parameters, axis e_3.
enum class Symmetry { Full, TransverseIsotropic };

struct ReconConfig {
  double c0 = 1e-6;
  double c1 = 1e-20;
  int fd_order = 2;
  std::size_t subset_cap = 64;
  NormalMethod method = NormalMethod::Auto;
  TauMethod tau_method = TauMethod::Path;
  Symmetry symmetry = Symmetry::Full;
  /// Node indices; the grid center when unset.
  std::optional<std::array<std::size_t, 3>> base_point;
  double tau_ref = 1.0;
  double cg_tol = 1e-12;
  std::size_t cg_max_iter = 0;
  std::size_t threads = 1;

  /// Throws std::invalid_argument on non-positive thresholds or a bad order.
  void validate() const;
  /// Method actually used for `extra` additional solutions.
  NormalMethod resolved_method(std::size_t extra) const;
};

/// Per-node mask reasons (bit flags); 0 means the node was reconstructed.
enum MaskBits : std::uint8_t {
  kMaskF1 = 1,
  kMaskF2 = 2,
  kMaskRank = 4,
  kMaskSign = 8,
  kMaskGram = 16,
};

/// det_v of the six basis strains at every node; zero when fewer than six
/// strains are present.
Field f1_map(const MeasurementSet& m);

/// Coordinates of strain p in the basis: solves E mu = eps^(p).
Field mu_coeffs(const MeasurementSet& m, std::size_t p);
/// Same coordinates by Cramer's rule (ratios of det_v).
Field mu_coeffs_cramer(const MeasurementSet& m, std::size_t p);

/// d eps^(j) / d x_a for every strain j: result[j][a] (6 components each).
std::vector<std::array<Field, 3>> strain_derivatives(const MeasurementSet& m, int fd_order);

/// d mu_p / d x_a from d mu = E^-1 (d eps^(p) - (d E) mu).
std::array<Field, 3> mu_gradients(const MeasurementSet& m, std::size_t p, int fd_order);

/// The three symmetrized constraint matrices of solution p, stored with the
/// 21-component layout of Stiffness. c : M = 0 for the true c.
std::array<Field, 3> constraint_matrices(const MeasurementSet& m, std::size_t p, int fd_order);

Mat6 sym6_from_components(std::span<const double> c21);

struct AnisotropyResult {
  Field ctilde;  // 21 components, det = 1, c11 > 0; zero where masked
  Field f1;
  Field f2;
  std::vector<std::uint8_t> mask;
};

AnisotropyResult reconstruct_anisotropy(const MeasurementSet& m, const ReconConfig& cfg);

struct TauResult {
  Field tau;
  /// -sum_j mu_j div(C~ : eps^(j)), the gradient of log tau.
  Field grad_log_tau;
  std::size_t components = 0;
};

/// Updates `mask` where the Gram matrix of the basis stresses is singular.
TauResult reconstruct_tau(const MeasurementSet& m, const Field& ctilde, std::vector<std::uint8_t>& mask,
                          const ReconConfig& cfg);

/// Three Sym3 rows (div C)_j.., 18 components in stress layout
/// (xx, yy, zz, yz, xz, xy per j).
Field reconstruct_divC(const MeasurementSet& m, const Field& c_full, std::vector<std::uint8_t>& mask,
                       const ReconConfig& cfg);

/// (div C)_jkl = sum_i d_i C_ijkl from the three partial derivatives of C.
std::array<double, 18> divc_from_derivatives(const std::array<Mat6, 3>& dc);

/// p = 0: max |a - b| over unmasked nodes. p = 1: adds the max of the central
/// difference first derivatives of a - b.
double error_norm(const Field& a, const Field& b, int p, const std::vector<std::uint8_t>* mask = nullptr);

struct ReconReport {
  Field ctilde, tau, divc, f1, f2;
  std::vector<std::uint8_t> mask;
  double masked_fraction = 1.0;
  std::size_t tau_components = 0;
};

/// Runs anisotropy, tau and div C recovery.
ReconReport reconstruct(const MeasurementSet& m, const ReconConfig& cfg);

}  // namespace elastrecon
