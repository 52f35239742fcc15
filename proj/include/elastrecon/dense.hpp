#pragma once

// Small dense linear algebra used throughout the reconstruction pipeline:
// fixed-size matrices for the 3x3 / 6x6 tensor algebra and a dynamic
// row-major matrix for the 20x21 hyperplane computations.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace elastrecon {

template <std::size_t N>
using Vec = std::array<double, N>;

using Vec3 = Vec<3>;
using Vec6 = Vec<6>;

/// Fixed-size row-major matrix.
template <std::size_t R, std::size_t C = R>
struct Mat {
  std::array<double, R * C> a{};

  static constexpr std::size_t rows = R;
  static constexpr std::size_t cols = C;

  constexpr double& operator()(std::size_t i, std::size_t j) { return a[i * C + j]; }
  constexpr double operator()(std::size_t i, std::size_t j) const { return a[i * C + j]; }

  static constexpr Mat identity() requires(R == C) {
    Mat m;
    for (std::size_t i = 0; i < R; ++i) m(i, i) = 1.0;
    return m;
  }

  constexpr Mat<C, R> transposed() const {
    Mat<C, R> t;
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  constexpr Mat& operator+=(const Mat& o) {
    for (std::size_t k = 0; k < R * C; ++k) a[k] += o.a[k];
    return *this;
  }
  constexpr Mat& operator-=(const Mat& o) {
    for (std::size_t k = 0; k < R * C; ++k) a[k] -= o.a[k];
    return *this;
  }
  constexpr Mat& operator*=(double s) {
    for (auto& x : a) x *= s;
    return *this;
  }
  friend constexpr Mat operator+(Mat l, const Mat& r) { return l += r; }
  friend constexpr Mat operator-(Mat l, const Mat& r) { return l -= r; }
  friend constexpr Mat operator*(Mat l, double s) { return l *= s; }
  friend constexpr Mat operator*(double s, Mat l) { return l *= s; }
  friend constexpr bool operator==(const Mat&, const Mat&) = default;
};

using Mat3 = Mat<3>;
using Mat6 = Mat<6>;

template <std::size_t R, std::size_t C>
constexpr Vec<R> operator*(const Mat<R, C>& m, const Vec<C>& v) {
  Vec<R> out{};
  for (std::size_t i = 0; i < R; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) s += m(i, j) * v[j];
    out[i] = s;
  }
  return out;
}

template <std::size_t R, std::size_t K, std::size_t C>
constexpr Mat<R, C> operator*(const Mat<R, K>& l, const Mat<K, C>& r) {
  Mat<R, C> out;
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double lik = l(i, k);
      for (std::size_t j = 0; j < C; ++j) out(i, j) += lik * r(k, j);
    }
  return out;
}

template <std::size_t N>
constexpr double dot(const Vec<N>& x, const Vec<N>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < N; ++i) s += x[i] * y[i];
  return s;
}

/// Frobenius inner product A:B = tr(A B^T).
template <std::size_t R, std::size_t C>
constexpr double frobenius_dot(const Mat<R, C>& x, const Mat<R, C>& y) {
  double s = 0.0;
  for (std::size_t k = 0; k < R * C; ++k) s += x.a[k] * y.a[k];
  return s;
}

template <std::size_t R, std::size_t C>
double frobenius_norm(const Mat<R, C>& x) {
  return std::sqrt(frobenius_dot(x, x));
}

/// Outer product u v^T.
template <std::size_t N>
constexpr Mat<N> outer(const Vec<N>& u, const Vec<N>& v) {
  Mat<N> m;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) m(i, j) = u[i] * v[j];
  return m;
}

/// Dynamically sized row-major matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  /// Max absolute row sum.
  double norm_inf() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Relative pivot threshold below which an LU factorization is declared singular.
inline constexpr double kSingularPivotTolerance = 1e-13;

/// Determinant of the n x n row-major matrix stored in `a` by LU with partial
/// pivoting. `a` is overwritten. Returns exactly 0 when a pivot falls below
/// kSingularPivotTolerance * ||a||_inf.
double lu_determinant_inplace(std::span<double> a, std::size_t n);

double determinant(DenseMatrix a);

template <std::size_t N>
double determinant(Mat<N> m) {
  return lu_determinant_inplace(m.a, N);
}

/// Solves a x = b in place (b receives x). Returns false when singular.
bool lu_solve_inplace(std::span<double> a, std::span<double> b, std::size_t n);

template <std::size_t N>
std::optional<Vec<N>> solve(Mat<N> m, Vec<N> b) {
  if (!lu_solve_inplace(m.a, b, N)) return std::nullopt;
  return b;
}

template <std::size_t N>
std::optional<Mat<N>> inverse(const Mat<N>& m) {
  Mat<N> inv;
  for (std::size_t j = 0; j < N; ++j) {
    Vec<N> e{};
    e[j] = 1.0;
    auto col = solve(m, e);
    if (!col) return std::nullopt;
    for (std::size_t i = 0; i < N; ++i) inv(i, j) = (*col)[i];
  }
  return inv;
}

/// Result of Gaussian elimination with partial pivoting on a k x n row set.
struct RowReduction {
  std::size_t rank = 0;
  /// Input rows that received a pivot, in pivot order.
  std::vector<std::size_t> pivot_rows;
  /// Columns that received a pivot, in pivot order.
  std::vector<std::size_t> pivot_cols;
  /// Generator of the nullspace when rank == n - 1 (unnormalized), else empty.
  std::vector<double> null_vector;
};

/// Relative tolerance for rank decisions during row reduction.
inline constexpr double kRankTolerance = 1e-9;

/// Column-by-column Gaussian elimination with partial (row) pivoting.
/// A column whose best remaining pivot is below `tol * max|entry|` is free.
/// Elimination stops after `max_pivots` pivots (0 means no limit).
RowReduction row_reduce(const DenseMatrix& rows, double tol = kRankTolerance, std::size_t max_pivots = 0);

/// Cofactor vector of an (n-1) x n matrix: entry k is (-1)^(n+k) times the minor
/// omitting column k (1-based k), i.e. the expansion of the formal determinant
/// with a last row of unit vectors.
std::vector<double> cofactor_normal(const DenseMatrix& rows);

struct SymmetricEigen {
  /// Ascending.
  std::vector<double> values;
  /// Column k is the unit eigenvector of values[k].
  DenseMatrix vectors;
};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Throws ConvergenceError after 100 sweeps.
SymmetricEigen symmetric_eigen(const DenseMatrix& a);

/// Sum of the principal (n-1) x (n-1) minors of the n x n Gram matrix X^T X.
/// By Cauchy-Binet this equals the sum, over all (n-1)-row subsets S of X, of
/// |cofactor_normal(X_S)|^2.
double gram_minor_sum(const DenseMatrix& rows);

}  // namespace elastrecon
