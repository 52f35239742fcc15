#pragma once

// Normals to hyperplanes of S_6(R), the 21-dimensional space of symmetric
// 6x6 matrices with inner product A:B = tr(A B^T).

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "elastrecon/dense.hpp"

namespace elastrecon {

inline constexpr std::size_t kSymDim = 21;
inline constexpr std::size_t kHyperplaneDim = kSymDim - 1;

using S6Basis = std::array<Mat6, kSymDim>;

/// Orthonormal basis: E_aa (a = 1..6), then (E_ab + E_ba)/sqrt(2) for a < b in
/// lexicographic order.
const S6Basis& canonical_basis();

/// Coordinates in the canonical basis.
Vec<kSymDim> sym_coordinates(const Mat6& m);
Mat6 from_sym_coordinates(std::span<const double> x);

Mat6 symmetrized(const Mat6& m);

/// Generalized cross product of 20 symmetric matrices: the expansion along its
/// last row of the formal determinant whose first 20 rows are <M_i, m_j> and
/// last row is m_1..m_21, divided by det(m_1, ..., m_21). Basis independent;
/// orthogonal to every input; zero iff the inputs are linearly dependent.
Mat6 cross21(std::span<const Mat6> m, const S6Basis& basis = canonical_basis());

struct NullspaceNormal {
  /// Unit Frobenius norm, first nonzero coordinate positive; zero unless rank == 20.
  Mat6 normal;
  int rank = 0;
};

/// Normal to span(m) by Gaussian elimination on the k x 21 coordinate matrix.
NullspaceNormal nullspace_normal(std::span<const Mat6> m);

/// Least-squares normal: the unit eigenvector of the smallest eigenvalue of the
/// 21x21 Gram matrix of coordinates, first nonzero coordinate positive. Equals
/// the nullspace normal on exact rank-20 data and stays well defined when noise
/// makes the set rank 21.
Mat6 least_squares_normal(std::span<const Mat6> m);

/// Indices of up to 20 linearly independent members of `m`, chosen by the
/// pivots of row reduction. Used when noisy data makes the full set rank 21.
std::vector<std::size_t> independent_subset(std::span<const Mat6> m);

/// Deterministic seed for sampled subset sums.
inline constexpr std::uint64_t kSubsetSeed = 0x5EED;

/// Visits sorted k-subsets of {0..n-1}: every subset in lexicographic order
/// when C(n,k) <= cap, otherwise `cap` pseudorandom subsets drawn with
/// kSubsetSeed. Returns true when the visit was sampled.
bool for_each_subset(std::size_t n, std::size_t k, std::size_t cap,
                     const std::function<void(std::span<const std::size_t>)>& visit);

/// C(n, k), saturating at UINT64_MAX.
std::uint64_t binomial(std::size_t n, std::size_t k);

struct F2Value {
  double value = 0.0;
  bool sampled = false;
  std::size_t subsets = 0;
};

/// Sum over 20-subsets M' of N(M'):N(M'). Throws std::invalid_argument for
/// fewer than 20 matrices.
F2Value f2(std::span<const Mat6> m, std::size_t subset_cap);

/// Exact value of the full (unsampled) f2 sum via the Cauchy-Binet identity:
/// the sum of principal 20x20 minors of the 21x21 Gram matrix of coordinates.
double f2_exact(std::span<const Mat6> m);

/// Normalized subset-sum estimate of the common normal direction:
/// sum_{M'} sign(N(M')_11) N(M') / sum_{M'} det(sign * N(M'))^{1/6}.
/// Returns zero when no subset contributes.
struct SubsetSumNormal {
  Mat6 normal;
  std::size_t contributing = 0;
  bool sampled = false;
};
SubsetSumNormal crossprod_sum_normal(std::span<const Mat6> m, std::size_t subset_cap);

}  // namespace elastrecon
