#include "elastrecon/hyperplane.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "elastrecon/rng.hpp"

namespace elastrecon {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

DenseMatrix coordinate_rows(std::span<const Mat6> m) {
  DenseMatrix rows(m.size(), kSymDim);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto x = sym_coordinates(m[i]);
    std::copy(x.begin(), x.end(), rows.row(i).begin());
  }
  return rows;
}

double signed_sixth_root(double x) { return std::copysign(std::pow(std::abs(x), 1.0 / 6.0), x); }

}  // namespace

const S6Basis& canonical_basis() {
  static const S6Basis basis = [] {
    S6Basis b{};
    std::size_t k = 0;
    for (std::size_t a = 0; a < 6; ++a) b[k++](a, a) = 1.0;
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t c = a + 1; c < 6; ++c) {
        b[k](a, c) = b[k](c, a) = kInvSqrt2;
        ++k;
      }
    return b;
  }();
  return basis;
}

Vec<kSymDim> sym_coordinates(const Mat6& m) {
  Vec<kSymDim> x{};
  std::size_t k = 0;
  for (std::size_t a = 0; a < 6; ++a) x[k++] = m(a, a);
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t c = a + 1; c < 6; ++c) x[k++] = kInvSqrt2 * (m(a, c) + m(c, a));
  return x;
}

Mat6 from_sym_coordinates(std::span<const double> x) {
  if (x.size() != kSymDim) throw std::invalid_argument("from_sym_coordinates: expected 21 coordinates");
  Mat6 m;
  std::size_t k = 0;
  for (std::size_t a = 0; a < 6; ++a) m(a, a) = x[k++];
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t c = a + 1; c < 6; ++c) m(a, c) = m(c, a) = kInvSqrt2 * x[k++];
  return m;
}

Mat6 symmetrized(const Mat6& m) {
  Mat6 s;
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t c = 0; c < 6; ++c) s(a, c) = 0.5 * (m(a, c) + m(c, a));
  return s;
}

Mat6 cross21(std::span<const Mat6> m, const S6Basis& basis) {
  if (m.size() != kHyperplaneDim)
    throw std::invalid_argument("cross21: expected exactly 20 matrices, got " + std::to_string(m.size()));

  DenseMatrix gram(kHyperplaneDim, kSymDim);
  for (std::size_t i = 0; i < kHyperplaneDim; ++i)
    for (std::size_t j = 0; j < kSymDim; ++j) gram(i, j) = frobenius_dot(m[i], basis[j]);
  const auto cof = cofactor_normal(gram);

  double basis_det = 1.0;
  if (&basis != &canonical_basis()) {
    DenseMatrix b(kSymDim, kSymDim);
    for (std::size_t j = 0; j < kSymDim; ++j) {
      const auto x = sym_coordinates(basis[j]);
      for (std::size_t i = 0; i < kSymDim; ++i) b(i, j) = x[i];
    }
    basis_det = determinant(std::move(b));
    if (basis_det == 0.0) throw std::invalid_argument("cross21: basis matrices are linearly dependent");
  }

  Mat6 out;
  for (std::size_t k = 0; k < kSymDim; ++k) out += basis[k] * cof[k];
  return out * (1.0 / basis_det);
}

NullspaceNormal nullspace_normal(std::span<const Mat6> m) {
  if (m.size() < kHyperplaneDim)
    throw std::invalid_argument("nullspace_normal: need at least 20 matrices, got " + std::to_string(m.size()));
  const auto red = row_reduce(coordinate_rows(m));
  NullspaceNormal out;
  out.rank = static_cast<int>(red.rank);
  if (red.rank != kHyperplaneDim) return out;

  auto x = red.null_vector;
  double norm = 0.0;
  for (double v : x) norm += v * v;
  norm = std::sqrt(norm);
  const auto first = std::find_if(x.begin(), x.end(), [&](double v) { return std::abs(v) > 1e-14 * norm; });
  const double sign = (first != x.end() && *first < 0.0) ? -1.0 : 1.0;
  for (double& v : x) v *= sign / norm;
  out.normal = from_sym_coordinates(x);
  return out;
}

Mat6 least_squares_normal(std::span<const Mat6> m) {
  const auto rows = coordinate_rows(m);
  DenseMatrix gram(kSymDim, kSymDim);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto x = rows.row(r);
    for (std::size_t i = 0; i < kSymDim; ++i)
      for (std::size_t j = 0; j < kSymDim; ++j) gram(i, j) += x[i] * x[j];
  }
  const auto eig = symmetric_eigen(gram);
  Vec<kSymDim> x;
  for (std::size_t i = 0; i < kSymDim; ++i) x[i] = eig.vectors(i, 0);
  const auto first = std::find_if(x.begin(), x.end(), [](double v) { return std::abs(v) > 1e-14; });
  if (first != x.end() && *first < 0.0)
    for (double& v : x) v = -v;
  return from_sym_coordinates(x);
}

std::vector<std::size_t> independent_subset(std::span<const Mat6> m) {
  return row_reduce(coordinate_rows(m), kRankTolerance, kHyperplaneDim).pivot_rows;
}

std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    // r * (n - k + i) / i stays integral at every step.
    const std::uint64_t num = n - k + i;
    const std::uint64_t g = std::gcd(r, static_cast<std::uint64_t>(i));
    const std::uint64_t rr = r / g;
    const std::uint64_t ii = i / g;
    if (rr > kMax / num) return kMax;
    r = rr * num / ii;
  }
  return r;
}

bool for_each_subset(std::size_t n, std::size_t k, std::size_t cap,
                     const std::function<void(std::span<const std::size_t>)>& visit) {
  if (k > n) return false;
  if (binomial(n, k) <= cap) {
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
      visit(idx);
      std::size_t i = k;
      while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
      if (i == 0) break;
      ++idx[i - 1];
      for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
    return false;
  }

  SplitMix64 rng(kSubsetSeed);
  std::vector<std::size_t> pool(n);
  std::vector<std::size_t> pick(k);
  for (std::size_t s = 0; s < cap; ++s) {
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(pool[i], pool[j]);
    }
    std::copy_n(pool.begin(), k, pick.begin());
    std::sort(pick.begin(), pick.end());
    visit(pick);
  }
  return true;
}

F2Value f2(std::span<const Mat6> m, std::size_t subset_cap) {
  if (m.size() < kHyperplaneDim)
    throw std::invalid_argument("f2: need at least 20 matrices, got " + std::to_string(m.size()));
  F2Value out;
  std::vector<Mat6> subset(kHyperplaneDim);
  out.sampled = for_each_subset(m.size(), kHyperplaneDim, subset_cap, [&](std::span<const std::size_t> idx) {
    for (std::size_t i = 0; i < kHyperplaneDim; ++i) subset[i] = m[idx[i]];
    const Mat6 n = cross21(subset);
    out.value += frobenius_dot(n, n);
    ++out.subsets;
  });
  return out;
}

double f2_exact(std::span<const Mat6> m) {
  if (m.size() < kHyperplaneDim) return 0.0;
  return gram_minor_sum(coordinate_rows(m));
}

SubsetSumNormal crossprod_sum_normal(std::span<const Mat6> m, std::size_t subset_cap) {
  SubsetSumNormal out;
  if (m.size() < kHyperplaneDim) return out;
  Mat6 sum;
  double weight = 0.0;
  std::vector<Mat6> subset(kHyperplaneDim);
  auto accumulate = [&](std::span<const std::size_t> idx) {
    for (std::size_t i = 0; i < kHyperplaneDim; ++i) subset[i] = m[idx[i]];
    Mat6 n = cross21(subset);
    if (n(0, 0) == 0.0) return;
    if (n(0, 0) < 0.0) n *= -1.0;
    sum += n;
    weight += signed_sixth_root(determinant(n));
    ++out.contributing;
  };

  if (binomial(m.size(), kHyperplaneDim) <= subset_cap) {
    for_each_subset(m.size(), kHyperplaneDim, subset_cap, accumulate);
  } else {
    // Dependent subsets contribute nothing, so draw independent ones: scan a
    // random permutation and keep each member that enlarges the span.
    out.sampled = true;
    const auto rows = coordinate_rows(m);
    SplitMix64 rng(kSubsetSeed);
    std::vector<std::size_t> order(m.size());
    std::vector<std::size_t> pick;
    std::vector<Vec<kSymDim>> q;
    for (std::size_t s = 0; s < subset_cap; ++s) {
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = 0; i + 1 < order.size(); ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
      pick.clear();
      q.clear();
      for (std::size_t idx : order) {
        Vec<kSymDim> r;
        std::copy(rows.row(idx).begin(), rows.row(idx).end(), r.begin());
        const double norm = std::sqrt(dot(r, r));
        if (norm == 0.0) continue;
        for (int pass = 0; pass < 2; ++pass)
          for (const auto& b : q) {
            const double d = dot(r, b);
            for (std::size_t k = 0; k < kSymDim; ++k) r[k] -= d * b[k];
          }
        const double rn = std::sqrt(dot(r, r));
        if (rn <= kRankTolerance * norm) continue;
        for (double& x : r) x /= rn;
        q.push_back(r);
        pick.push_back(idx);
        if (pick.size() == kHyperplaneDim) break;
      }
      if (pick.size() < kHyperplaneDim) break;
      std::sort(pick.begin(), pick.end());
      accumulate(pick);
    }
  }

  if (out.contributing == 0 || weight == 0.0) {
    out.contributing = 0;
    return out;
  }
  out.normal = sum * (1.0 / weight);
  return out;
}

}  // namespace elastrecon
