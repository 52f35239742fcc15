#include "elastrecon/dense.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <numeric>
#include <utility>

#include "elastrecon/error.hpp"

namespace elastrecon {

double DenseMatrix::norm_inf() const {
  double best = 0.0;
  for (std::size_t i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (double x : row(i)) s += std::abs(x);
    best = std::max(best, s);
  }
  return best;
}

namespace {

double norm_inf(std::span<const double> a, std::size_t n) {
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::abs(a[i * n + j]);
    best = std::max(best, s);
  }
  return best;
}

// Factorizes in place; returns the permutation sign, or 0 when singular.
int lu_factor(std::span<double> a, std::size_t n, std::span<std::size_t> perm) {
  const double threshold = kSingularPivotTolerance * norm_inf(a, n);
  int sign = 1;
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(a[k * n + k]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(a[i * n + k]);
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (best <= threshold || best == 0.0) return 0;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[p * n + j]);
      std::swap(perm[k], perm[p]);
      sign = -sign;
    }
    const double inv = 1.0 / a[k * n + k];
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] * inv;
      a[i * n + k] = f;
      if (f == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
    }
  }
  return sign;
}

}  // namespace

double lu_determinant_inplace(std::span<double> a, std::size_t n) {
  if (a.size() < n * n) throw std::invalid_argument("lu_determinant: buffer too small");
  if (n == 0) return 1.0;
  std::vector<std::size_t> perm(n);
  const int sign = lu_factor(a, n, perm);
  if (sign == 0) return 0.0;
  double det = sign;
  for (std::size_t k = 0; k < n; ++k) det *= a[k * n + k];
  return det;
}

double determinant(DenseMatrix a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("determinant: matrix is not square");
  return lu_determinant_inplace(a.data(), a.rows());
}

bool lu_solve_inplace(std::span<double> a, std::span<double> b, std::size_t n) {
  std::array<std::size_t, 32> small{};
  std::vector<std::size_t> big;
  std::span<std::size_t> perm;
  if (n <= small.size()) {
    perm = std::span<std::size_t>(small.data(), n);
  } else {
    big.resize(n);
    perm = big;
  }
  if (lu_factor(a, n, perm) == 0) return false;

  std::array<double, 32> tmp_small{};
  std::vector<double> tmp_big;
  std::span<double> y;
  if (n <= tmp_small.size()) {
    y = std::span<double>(tmp_small.data(), n);
  } else {
    tmp_big.resize(n);
    y = tmp_big;
  }
  for (std::size_t i = 0; i < n; ++i) y[i] = b[perm[i]];
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t j = 0; j < i; ++j) s -= a[i * n + j] * y[j];
    y[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = y[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i * n + j] * y[j];
    y[i] = s / a[i * n + i];
  }
  std::copy(y.begin(), y.end(), b.begin());
  return true;
}

RowReduction row_reduce(const DenseMatrix& rows, double tol, std::size_t max_pivots) {
  const std::size_t k = rows.rows();
  const std::size_t n = rows.cols();
  DenseMatrix w = rows;
  double scale = 0.0;
  for (double x : w.data()) scale = std::max(scale, std::abs(x));

  RowReduction out;
  if (scale == 0.0) return out;
  const double threshold = tol * scale;
  std::vector<bool> used(k, false);
  std::vector<bool> pivot_col(n, false);

  for (std::size_t c = 0; c < n; ++c) {
    if (max_pivots != 0 && out.rank == max_pivots) break;
    std::size_t best_row = k;
    double best = threshold;
    for (std::size_t r = 0; r < k; ++r) {
      if (used[r]) continue;
      const double v = std::abs(w(r, c));
      if (v > best) {
        best = v;
        best_row = r;
      }
    }
    if (best_row == k) continue;
    used[best_row] = true;
    pivot_col[c] = true;
    out.pivot_rows.push_back(best_row);
    out.pivot_cols.push_back(c);
    ++out.rank;
    const double inv = 1.0 / w(best_row, c);
    for (std::size_t r = 0; r < k; ++r) {
      if (used[r]) continue;
      const double f = w(r, c) * inv;
      if (f == 0.0) continue;
      w(r, c) = 0.0;
      for (std::size_t j = c + 1; j < n; ++j) w(r, j) -= f * w(best_row, j);
    }
  }

  if (out.rank + 1 == n) {
    const std::size_t free_col =
        static_cast<std::size_t>(std::find(pivot_col.begin(), pivot_col.end(), false) - pivot_col.begin());
    std::vector<double> x(n, 0.0);
    x[free_col] = 1.0;
    for (std::size_t t = out.rank; t-- > 0;) {
      const std::size_t r = out.pivot_rows[t];
      const std::size_t c = out.pivot_cols[t];
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != c) s += w(r, j) * x[j];
      x[c] = -s / w(r, c);
    }
    out.null_vector = std::move(x);
  }
  return out;
}

std::vector<double> cofactor_normal(const DenseMatrix& rows) {
  const std::size_t n = rows.cols();
  if (rows.rows() + 1 != n) throw std::invalid_argument("cofactor_normal: expected (n-1) x n input");
  std::vector<double> out(n, 0.0);
  // The cofactor vector is orthogonal to every row, so it is a multiple a*x of
  // the null vector x. Expanding det([rows; x^T]) along its last row gives
  // sum_k x_k cof_k = a |x|^2, which fixes a with one determinant instead of n.
  const auto red = row_reduce(rows, kSingularPivotTolerance);
  if (red.rank + 1 != n) return out;
  const auto& x = red.null_vector;
  std::vector<double> full(n * n);
  std::copy(rows.data().begin(), rows.data().end(), full.begin());
  std::copy(x.begin(), x.end(), full.begin() + static_cast<std::ptrdiff_t>((n - 1) * n));
  double xx = 0.0;
  for (double v : x) xx += v * v;
  const double a = lu_determinant_inplace(full, n) / xx;
  for (std::size_t k = 0; k < n; ++k) out[k] = a * x[k];
  return out;
}

SymmetricEigen symmetric_eigen(const DenseMatrix& input) {
  const std::size_t n = input.rows();
  if (input.cols() != n) throw std::invalid_argument("symmetric_eigen: matrix must be square");
  constexpr int kMaxSweeps = 100;
  DenseMatrix a = input;
  DenseMatrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  double norm = 0.0;
  for (double x : a.data()) norm += x * x;
  norm = std::sqrt(norm);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q)
        if (p != q) s += a(p, q) * a(p, q);
    return std::sqrt(s);
  };

  int sweep = 0;
  double off = off_norm();
  while (off > 1e-14 * norm) {
    if (sweep == kMaxSweeps) throw ConvergenceError("symmetric_eigen: Jacobi iteration did not converge", sweep, off);
    ++sweep;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    off = off_norm();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
  SymmetricEigen out{std::vector<double>(n), DenseMatrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

double gram_minor_sum(const DenseMatrix& rows) {
  const std::size_t n = rows.cols();
  if (n == 0) return 0.0;
  std::vector<double> gram(n * n, 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto x = rows.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      if (x[i] == 0.0) continue;
      for (std::size_t j = i; j < n; ++j) gram[i * n + j] += x[i] * x[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) gram[i * n + j] = gram[j * n + i];

  const std::size_t m = n - 1;
  std::vector<double> minor(m * m);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t ii = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == k) continue;
      std::size_t jj = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == k) continue;
        minor[ii * m + jj++] = gram[i * n + j];
      }
      ++ii;
    }
    total += lu_determinant_inplace(minor, m);
  }
  return total;
}

}  // namespace elastrecon
