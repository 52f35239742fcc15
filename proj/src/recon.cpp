#include "elastrecon/recon.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "elastrecon/error.hpp"

namespace elastrecon {

namespace {

Vec6 vec6_at(const Field& f, std::size_t n) {
  Vec6 v;
  for (std::size_t i = 0; i < 6; ++i) v[i] = f(n, i);
  return v;
}

Mat6 basis_matrix(const MeasurementSet& m, std::size_t n) {
  Mat6 e;
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t i = 0; i < 6; ++i) e(i, j) = m.strains[j](n, i);
  return e;
}

Sym3 strain_tensor(const Vec6& v) { return voigt_to_strain(Voigt6{v, VoigtConvention::Strain}); }

double signed_sixth_root(double x) { return std::copysign(std::pow(std::abs(x), 1.0 / 6.0), x); }

std::array<std::size_t, 3> default_base(const Grid& g) { return {g.dims[0] / 2, g.dims[1] / 2, g.dims[2] / 2}; }

// Three constraint matrices of one solution at one node. Row patterns
// (d1 mu, 0, 0, 0, d3 mu, d2 mu) etc. in stress Voigt order.
std::array<Mat6, 3> node_constraints(const Mat6& basis, const std::array<Vec6, 3>& dmu) {
  std::array<Mat6, 3> out;
  for (std::size_t j = 0; j < 6; ++j) {
    Vec6 eps;
    for (std::size_t i = 0; i < 6; ++i) eps[i] = basis(i, j);
    const double d1 = dmu[0][j], d2 = dmu[1][j], d3 = dmu[2][j];
    const Vec6 r1{d1, 0.0, 0.0, 0.0, d3, d2};
    const Vec6 r2{0.0, d2, 0.0, d3, 0.0, d1};
    const Vec6 r3{0.0, 0.0, d3, d2, d1, 0.0};
    out[0] += outer(r1, eps);
    out[1] += outer(r2, eps);
    out[2] += outer(r3, eps);
  }
  for (auto& mm : out) mm = symmetrized(mm);
  return out;
}

// mu and its gradient for solution p at node n, given E^-1.
std::pair<Vec6, std::array<Vec6, 3>> node_mu(const MeasurementSet& m, const std::vector<std::array<Field, 3>>& deriv,
                                             const Mat6& einv, std::size_t p, std::size_t n) {
  const Vec6 mu = einv * vec6_at(m.strains[p], n);
  std::array<Vec6, 3> dmu;
  for (std::size_t a = 0; a < 3; ++a) {
    Vec6 rhs = vec6_at(deriv[p][a], n);
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t i = 0; i < 6; ++i) rhs[i] -= deriv[j][a](n, i) * mu[j];
    dmu[a] = einv * rhs;
  }
  return {mu, dmu};
}

void store_components(const Mat6& c, Field& f, std::size_t n) {
  const auto& pairs = stiffness_component_pairs();
  for (std::size_t k = 0; k < kStiffnessComponents; ++k) f(n, k) = c(pairs[k].first, pairs[k].second);
}

// Fixes the sign by c11 > 0 and scales to det = 1. Returns false when the
// determinant is not positive after the sign fix.
bool normalize_direction(Mat6& c) {
  if (c(0, 0) < 0.0) c *= -1.0;
  if (!(c(0, 0) > 0.0)) return false;
  const double d = determinant(c);
  if (!(d > 0.0)) return false;
  c *= 1.0 / std::pow(d, 1.0 / 6.0);
  return true;
}

Mat6 ti_matrix(std::span<const double> t) {
  const auto& b = ti_basis();
  Mat6 c;
  for (std::size_t k = 0; k < 5; ++k) c += b[k] * t[k];
  return c;
}

// Normal of the TI constraint rows (each in R^5). Empty on failure.
std::vector<double> ti_normal(const DenseMatrix& rows, NormalMethod method, std::size_t cap) {
  constexpr std::size_t kDim = 5;
  if (method == NormalMethod::CrossprodSum) {
    std::vector<double> sum(kDim, 0.0);
    double weight = 0.0;
    std::size_t used = 0;
    DenseMatrix sub(kDim - 1, kDim);
    for_each_subset(rows.rows(), kDim - 1, cap, [&](std::span<const std::size_t> idx) {
      for (std::size_t i = 0; i < kDim - 1; ++i)
        std::copy(rows.row(idx[i]).begin(), rows.row(idx[i]).end(), sub.row(i).begin());
      auto n = cofactor_normal(sub);
      const Mat6 c = ti_matrix(n);
      if (c(0, 0) == 0.0) return;
      const double s = c(0, 0) < 0.0 ? -1.0 : 1.0;
      for (std::size_t k = 0; k < kDim; ++k) sum[k] += s * n[k];
      weight += signed_sixth_root(determinant(c * s));
      ++used;
    });
    if (used == 0 || weight == 0.0) return {};
    for (double& v : sum) v /= weight;
    return sum;
  }
  auto red = row_reduce(rows);
  if (red.rank == kDim) {
    const auto sel = row_reduce(rows, kRankTolerance, kDim - 1).pivot_rows;
    DenseMatrix sub(sel.size(), kDim);
    for (std::size_t i = 0; i < sel.size(); ++i) std::copy(rows.row(sel[i]).begin(), rows.row(sel[i]).end(), sub.row(i).begin());
    red = row_reduce(sub);
  }
  if (red.rank != kDim - 1) return {};
  return red.null_vector;
}

// Derivative restricted to unmasked nodes: stencils never reach into masked
// nodes, falling back to one-sided differences next to them.
Field masked_derivative(const Field& f, std::size_t axis, int order, const std::vector<std::uint8_t>& mask) {
  if (std::none_of(mask.begin(), mask.end(), [](auto v) { return v != 0; })) return derivative(f, axis, order);
  const Grid& g = f.grid();
  const std::size_t nc = f.components();
  const std::size_t s = g.stride(axis);
  const double h = g.h;
  Field out(g, nc);
  for (std::size_t n = 0; n < g.nodes(); ++n) {
    if (mask[n]) continue;
    const std::size_t i = g.ijk(n)[axis];
    const auto live = [&](long off) {
      const long j = static_cast<long>(i) + off;
      if (j < 0 || j >= static_cast<long>(g.dims[axis])) return false;
      return mask[static_cast<std::size_t>(static_cast<long>(n) + off * static_cast<long>(s))] == 0;
    };
    const auto at = [&](long off, std::size_t c) {
      return f(static_cast<std::size_t>(static_cast<long>(n) + off * static_cast<long>(s)), c);
    };
    for (std::size_t c = 0; c < nc; ++c) {
      double d = 0.0;
      if (order == 4 && live(-2) && live(-1) && live(1) && live(2))
        d = (at(-2, c) - 8.0 * at(-1, c) + 8.0 * at(1, c) - at(2, c)) / (12.0 * h);
      else if (live(-1) && live(1))
        d = (at(1, c) - at(-1, c)) / (2.0 * h);
      else if (live(1) && live(2))
        d = (-1.5 * at(0, c) + 2.0 * at(1, c) - 0.5 * at(2, c)) / h;
      else if (live(-1) && live(-2))
        d = (1.5 * at(0, c) - 2.0 * at(-1, c) + 0.5 * at(-2, c)) / h;
      else if (live(1))
        d = (at(1, c) - at(0, c)) / h;
      else if (live(-1))
        d = (at(0, c) - at(-1, c)) / h;
      out(n, c) = d;
    }
  }
  return out;
}

void check_fd_order(int order) {
  if (order != 2 && order != 4) throw std::invalid_argument("finite-difference order must be 2 or 4");
}

}  // namespace

Vec6 AffineStrain::at(const Vec3& x) const {
  Vec6 v = base;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t i = 0; i < 6; ++i) v[i] += x[a] * gradient[a][i];
  return v;
}

AffineStrain AffineStrain::of(const QuadraticDisplacement& f) { return {affine_strain(f), strain_gradient(f)}; }

bool MeasurementSet::is_analytic() const {
  if (analytic.size() != strains.size() || strains.empty()) return false;
  return std::all_of(analytic.begin(), analytic.end(), [](const auto& a) { return a.has_value(); });
}

void MeasurementSet::validate() const {
  grid.validate();
  for (const auto& f : strains) {
    if (f.components() != 6) throw std::invalid_argument("measurement set: strain fields need 6 components");
    if (!(f.grid() == grid)) throw std::invalid_argument("measurement set: strain field grid mismatch");
  }
  if (!analytic.empty() && analytic.size() != strains.size())
    throw std::invalid_argument("measurement set: analytic tags must be absent or one per strain");
}

MeasurementSet MeasurementSet::sample(const Grid& grid, const std::vector<QuadraticDisplacement>& fields) {
  MeasurementSet m;
  m.grid = grid;
  for (const auto& f : fields) {
    const auto a = AffineStrain::of(f);
    m.strains.push_back(Field::sample(grid, 6, [&](const Vec3& x, std::span<double> out) {
      const auto v = strain_to_voigt(eval_strain(f, x)).v;
      std::copy(v.begin(), v.end(), out.begin());
    }));
    m.analytic.emplace_back(a);
  }
  return m;
}

void ReconConfig::validate() const {
  if (!(c0 > 0.0) || !(c1 > 0.0)) throw std::invalid_argument("recon config: c0 and c1 must be positive");
  check_fd_order(fd_order);
  if (subset_cap == 0) throw std::invalid_argument("recon config: subset_cap must be positive");
  if (!(tau_ref > 0.0)) throw std::invalid_argument("recon config: tau_ref must be positive");
}

NormalMethod ReconConfig::resolved_method(std::size_t extra) const {
  if (method != NormalMethod::Auto) return method;
  return 3 * extra <= 24 ? NormalMethod::CrossprodSum : NormalMethod::Nullspace;
}

Field f1_map(const MeasurementSet& m) {
  m.validate();
  Field f1(m.grid, 1);
  if (m.strains.size() < 6) return f1;
  for (std::size_t n = 0; n < m.grid.nodes(); ++n) f1(n, 0) = determinant(basis_matrix(m, n));
  return f1;
}

Field mu_coeffs(const MeasurementSet& m, std::size_t p) {
  m.validate();
  if (m.strains.size() < 6 || p >= m.strains.size()) throw std::out_of_range("mu_coeffs: solution index out of range");
  Field mu(m.grid, 6);
  for (std::size_t n = 0; n < m.grid.nodes(); ++n) {
    const auto x = solve(basis_matrix(m, n), vec6_at(m.strains[p], n));
    if (!x) throw SingularMatrixError("mu_coeffs: basis strains are dependent at node " + std::to_string(n));
    for (std::size_t j = 0; j < 6; ++j) mu(n, j) = (*x)[j];
  }
  return mu;
}

Field mu_coeffs_cramer(const MeasurementSet& m, std::size_t p) {
  m.validate();
  if (m.strains.size() < 6 || p >= m.strains.size()) throw std::out_of_range("mu_coeffs_cramer: solution index out of range");
  Field mu(m.grid, 6);
  for (std::size_t n = 0; n < m.grid.nodes(); ++n) {
    const Mat6 e = basis_matrix(m, n);
    const double d = determinant(e);
    if (d == 0.0) throw SingularMatrixError("mu_coeffs_cramer: basis strains are dependent at node " + std::to_string(n));
    const Vec6 rhs = vec6_at(m.strains[p], n);
    for (std::size_t j = 0; j < 6; ++j) {
      Mat6 ej = e;
      for (std::size_t i = 0; i < 6; ++i) ej(i, j) = rhs[i];
      mu(n, j) = determinant(ej) / d;
    }
  }
  return mu;
}

std::vector<std::array<Field, 3>> strain_derivatives(const MeasurementSet& m, int fd_order) {
  check_fd_order(fd_order);
  std::vector<std::array<Field, 3>> out(m.strains.size());
  const bool exact = m.is_analytic();
  for (std::size_t j = 0; j < m.strains.size(); ++j)
    for (std::size_t a = 0; a < 3; ++a) {
      if (exact) {
        const Vec6 g = m.analytic[j]->gradient[a];
        out[j][a] = Field::sample(m.grid, 6, [&](const Vec3&, std::span<double> o) { std::copy(g.begin(), g.end(), o.begin()); });
      } else {
        out[j][a] = derivative(m.strains[j], a, fd_order);
      }
    }
  return out;
}

std::array<Field, 3> mu_gradients(const MeasurementSet& m, std::size_t p, int fd_order) {
  m.validate();
  if (m.strains.size() < 6 || p >= m.strains.size()) throw std::out_of_range("mu_gradients: solution index out of range");
  const auto deriv = strain_derivatives(m, fd_order);
  std::array<Field, 3> out{Field(m.grid, 6), Field(m.grid, 6), Field(m.grid, 6)};
  for (std::size_t n = 0; n < m.grid.nodes(); ++n) {
    const auto einv = inverse(basis_matrix(m, n));
    if (!einv) throw SingularMatrixError("mu_gradients: basis strains are dependent at node " + std::to_string(n));
    const auto [mu, dmu] = node_mu(m, deriv, *einv, p, n);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t j = 0; j < 6; ++j) out[a](n, j) = dmu[a][j];
  }
  return out;
}

std::array<Field, 3> constraint_matrices(const MeasurementSet& m, std::size_t p, int fd_order) {
  const auto dmu = mu_gradients(m, p, fd_order);
  std::array<Field, 3> out{Field(m.grid, 21), Field(m.grid, 21), Field(m.grid, 21)};
  for (std::size_t n = 0; n < m.grid.nodes(); ++n) {
    std::array<Vec6, 3> d;
    for (std::size_t a = 0; a < 3; ++a) d[a] = vec6_at(dmu[a], n);
    const auto mats = node_constraints(basis_matrix(m, n), d);
    for (std::size_t i = 0; i < 3; ++i) store_components(mats[i], out[i], n);
  }
  return out;
}

Mat6 sym6_from_components(std::span<const double> c21) {
  if (c21.size() != kStiffnessComponents) throw std::invalid_argument("sym6_from_components: expected 21 values");
  const auto& pairs = stiffness_component_pairs();
  Mat6 m;
  for (std::size_t k = 0; k < kStiffnessComponents; ++k) m(pairs[k].first, pairs[k].second) = m(pairs[k].second, pairs[k].first) = c21[k];
  return m;
}

AnisotropyResult reconstruct_anisotropy(const MeasurementSet& m, const ReconConfig& cfg) {
  m.validate();
  cfg.validate();
  const Grid& g = m.grid;
  AnisotropyResult res{Field(g, kStiffnessComponents), f1_map(m), Field(g, 1), std::vector<std::uint8_t>(g.nodes(), 0)};
  if (m.strains.size() < 6) {
    std::fill(res.mask.begin(), res.mask.end(), kMaskF1 | kMaskF2);
    return res;
  }
  const auto deriv = strain_derivatives(m, cfg.fd_order);
  const NormalMethod method = cfg.resolved_method(m.extra());
  const bool ti = cfg.symmetry == Symmetry::TransverseIsotropic;

  parallel_for(g.nodes(), cfg.threads, [&](std::size_t begin, std::size_t end) {
    std::vector<Mat6> mats;
    for (std::size_t n = begin; n < end; ++n) {
      std::uint8_t& mask = res.mask[n];
      if (!(res.f1(n, 0) >= cfg.c0)) {
        mask |= kMaskF1 | kMaskF2;
        continue;
      }
      const Mat6 basis = basis_matrix(m, n);
      const auto einv = inverse(basis);
      if (!einv) {
        mask |= kMaskF1 | kMaskF2;
        continue;
      }
      mats.clear();
      for (std::size_t p = 6; p < m.strains.size(); ++p) {
        const auto dmu = node_mu(m, deriv, *einv, p, n).second;
        for (const auto& mm : node_constraints(basis, dmu)) {
          const double norm = frobenius_norm(mm);
          if (norm > 0.0) mats.push_back(mm * (1.0 / norm));
        }
      }

      Mat6 c;
      if (!ti) {
        const double f2 = mats.size() >= kHyperplaneDim ? f2_exact(mats) : 0.0;
        res.f2(n, 0) = f2;
        if (!(f2 >= cfg.c1)) {
          mask |= kMaskF2;
          continue;
        }
        if (method == NormalMethod::CrossprodSum) {
          const auto s = crossprod_sum_normal(mats, cfg.subset_cap);
          if (s.contributing == 0) {
            mask |= kMaskRank;
            continue;
          }
          c = s.normal;
        } else {
          const auto ns = nullspace_normal(mats);
          if (ns.rank == static_cast<int>(kHyperplaneDim)) {
            c = ns.normal;
          } else if (ns.rank == static_cast<int>(kSymDim)) {
            // Inconsistent (noisy) constraints: least-squares normal.
            c = least_squares_normal(mats);
          } else {
            mask |= kMaskRank;
            continue;
          }
        }
      } else {
        const auto& b = ti_basis();
        DenseMatrix rows(mats.size(), 5);
        for (std::size_t r = 0; r < mats.size(); ++r) {
          double norm = 0.0;
          for (std::size_t k = 0; k < 5; ++k) {
            rows(r, k) = frobenius_dot(b[k], mats[r]);
            norm += rows(r, k) * rows(r, k);
          }
          norm = std::sqrt(norm);
          if (norm > 0.0)
            for (std::size_t k = 0; k < 5; ++k) rows(r, k) /= norm;
        }
        const double f2 = mats.size() >= 4 ? gram_minor_sum(rows) : 0.0;
        res.f2(n, 0) = f2;
        if (!(f2 >= cfg.c1)) {
          mask |= kMaskF2;
          continue;
        }
        const auto t = ti_normal(rows, method, cfg.subset_cap);
        if (t.empty()) {
          mask |= kMaskRank;
          continue;
        }
        c = ti_matrix(t);
      }
      if (!normalize_direction(c)) {
        mask |= kMaskSign;
        continue;
      }
      store_components(c, res.ctilde, n);
    }
  });
  return res;
}

namespace {

// Connected components of unmasked nodes (6-neighbour); -1 for masked nodes.
std::vector<int> label_components(const Grid& g, const std::vector<std::uint8_t>& mask, int& count) {
  std::vector<int> label(g.nodes(), -1);
  count = 0;
  std::deque<std::size_t> queue;
  for (std::size_t s = 0; s < g.nodes(); ++s) {
    if (mask[s] || label[s] >= 0) continue;
    label[s] = count;
    queue.push_back(s);
    while (!queue.empty()) {
      const std::size_t n = queue.front();
      queue.pop_front();
      const auto p = g.ijk(n);
      for (std::size_t a = 0; a < 3; ++a) {
        if (p[a] > 0) {
          const std::size_t q = n - g.stride(a);
          if (!mask[q] && label[q] < 0) {
            label[q] = count;
            queue.push_back(q);
          }
        }
        if (p[a] + 1 < g.dims[a]) {
          const std::size_t q = n + g.stride(a);
          if (!mask[q] && label[q] < 0) {
            label[q] = count;
            queue.push_back(q);
          }
        }
      }
    }
    ++count;
  }
  return label;
}

// Trapezoid increment of log tau from node a to its neighbour b along axis.
double edge_increment(const Field& grad, std::size_t a, std::size_t b, std::size_t axis, double signed_h) {
  return 0.5 * signed_h * (grad(a, axis) + grad(b, axis));
}

// Staircase integration x -> y -> z from base inside the box two nodes away
// from the faces, where one-sided differences degrade the gradient; then a
// breadth-first fill of the outer shell and of any node whose staircase
// crosses a masked node, so shell nodes are reached by a few outward steps.
void integrate_path(const Grid& g, const Field& grad, const std::vector<int>& label, int comp, std::size_t base,
                    std::vector<double>& phi) {
  constexpr std::size_t kShell = 2;
  std::vector<char> done(g.nodes(), 0);
  const auto b = g.ijk(base);
  std::array<std::size_t, 3> lo{}, hi{};
  for (std::size_t a = 0; a < 3; ++a) {
    lo[a] = std::min(kShell, b[a]);
    hi[a] = g.dims[a] > 2 * kShell ? std::max(g.dims[a] - 1 - kShell, b[a]) : b[a];
  }
  auto in = [&](std::size_t n) { return label[n] == comp; };
  phi[base] = 0.0;
  done[base] = 1;

  // Sweep outward from `start` along `axis` while nodes stay in the component
  // and the box.
  auto sweep = [&](std::size_t start, std::size_t axis) {
    const std::size_t pos = g.ijk(start)[axis];
    const std::size_t s = g.stride(axis);
    for (std::size_t n = start, k = pos; k < hi[axis]; ++k, n += s) {
      if (!in(n + s)) break;
      phi[n + s] = phi[n] + edge_increment(grad, n, n + s, axis, g.h);
      done[n + s] = 1;
    }
    for (std::size_t n = start, k = pos; k > lo[axis]; --k, n -= s) {
      if (!in(n - s)) break;
      phi[n - s] = phi[n] + edge_increment(grad, n, n - s, axis, -g.h);
      done[n - s] = 1;
    }
  };

  sweep(base, 0);
  for (std::size_t i = lo[0]; i <= hi[0]; ++i) {
    const std::size_t n = g.index(i, b[1], b[2]);
    if (done[n]) sweep(n, 1);
  }
  for (std::size_t j = lo[1]; j <= hi[1]; ++j)
    for (std::size_t i = lo[0]; i <= hi[0]; ++i) {
      const std::size_t n = g.index(i, j, b[2]);
      if (done[n]) sweep(n, 2);
    }

  std::deque<std::size_t> queue;
  for (std::size_t n = 0; n < g.nodes(); ++n)
    if (done[n] && in(n)) queue.push_back(n);
  while (!queue.empty()) {
    const std::size_t n = queue.front();
    queue.pop_front();
    const auto p = g.ijk(n);
    for (std::size_t a = 0; a < 3; ++a) {
      if (p[a] + 1 < g.dims[a]) {
        const std::size_t q = n + g.stride(a);
        if (in(q) && !done[q]) {
          phi[q] = phi[n] + edge_increment(grad, n, q, a, g.h);
          done[q] = 1;
          queue.push_back(q);
        }
      }
      if (p[a] > 0) {
        const std::size_t q = n - g.stride(a);
        if (in(q) && !done[q]) {
          phi[q] = phi[n] + edge_increment(grad, n, q, a, -g.h);
          done[q] = 1;
          queue.push_back(q);
        }
      }
    }
  }
}

// Least squares fit of phi to the trapezoid edge increments over the
// component's edges: the graph Laplacian system L phi = s (natural Neumann
// boundary), solved by CG; the constant is fixed afterwards by phi(base) = 0.
void integrate_poisson(const Grid& g, const Field& grad, const std::vector<int>& label, int comp, std::size_t base,
                       std::vector<double>& phi, double tol, std::size_t max_iter) {
  std::vector<std::size_t> nodes;
  std::vector<std::size_t> local(g.nodes(), std::numeric_limits<std::size_t>::max());
  for (std::size_t n = 0; n < g.nodes(); ++n)
    if (label[n] == comp) {
      local[n] = nodes.size();
      nodes.push_back(n);
    }
  const std::size_t k = nodes.size();
  std::vector<double> s(k, 0.0);
  for (std::size_t li = 0; li < k; ++li) {
    const std::size_t n = nodes[li];
    const auto p = g.ijk(n);
    for (std::size_t a = 0; a < 3; ++a) {
      if (p[a] + 1 < g.dims[a] && label[n + g.stride(a)] == comp) {
        const std::size_t q = n + g.stride(a);
        const double inc = edge_increment(grad, n, q, a, g.h);
        s[li] -= inc;
        s[local[q]] += inc;
      }
    }
  }
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= static_cast<double>(k);
  for (double& v : s) v -= mean;

  auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t li = 0; li < k; ++li) {
      const std::size_t n = nodes[li];
      const auto p = g.ijk(n);
      double acc = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        if (p[a] + 1 < g.dims[a] && label[n + g.stride(a)] == comp) acc += x[li] - x[local[n + g.stride(a)]];
        if (p[a] > 0 && label[n - g.stride(a)] == comp) acc += x[li] - x[local[n - g.stride(a)]];
      }
      y[li] = acc;
    }
  };
  auto dotv = [](const std::vector<double>& a, const std::vector<double>& b) {
    double r = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) r += a[i] * b[i];
    return r;
  };

  std::vector<double> x(k, 0.0), r = s, p = s, ap(k);
  const double snorm = std::sqrt(dotv(s, s));
  double rr = dotv(r, r);
  if (max_iter == 0) max_iter = std::max<std::size_t>(100, static_cast<std::size_t>(20.0 * std::sqrt(static_cast<double>(k)) * 10));
  std::size_t it = 0;
  while (std::sqrt(rr) > tol * snorm && snorm > 0.0) {
    if (++it > max_iter)
      throw ConvergenceError("reconstruct_tau: Poisson CG did not converge", static_cast<int>(max_iter), std::sqrt(rr) / snorm);
    apply(p, ap);
    const double pap = dotv(p, ap);
    if (!(pap > 0.0)) break;
    const double alpha = rr / pap;
    for (std::size_t i = 0; i < k; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rr_new = dotv(r, r);
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < k; ++i) p[i] = r[i] + beta * p[i];
  }
  const double shift = x[local[base]];
  for (std::size_t li = 0; li < k; ++li) phi[nodes[li]] = x[li] - shift;
}

}  // namespace

TauResult reconstruct_tau(const MeasurementSet& m, const Field& ctilde, std::vector<std::uint8_t>& mask,
                          const ReconConfig& cfg) {
  m.validate();
  cfg.validate();
  const Grid& g = m.grid;
  if (ctilde.components() != kStiffnessComponents || !(ctilde.grid() == g))
    throw std::invalid_argument("reconstruct_tau: ctilde must be a 21-component field on the measurement grid");
  if (mask.size() != g.nodes()) throw std::invalid_argument("reconstruct_tau: mask size mismatch");
  TauResult res{Field(g, 1), Field(g, 3), 0};
  if (m.strains.size() < 6) {
    for (auto& v : mask) v |= kMaskF1;
    return res;
  }

  // Stresses of the basis under C~ and the weights expanding the identity.
  std::array<Field, 6> sigma;
  for (auto& s : sigma) s = Field(g, 6);
  Field weights(g, 6);
  for (std::size_t n = 0; n < g.nodes(); ++n) {
    if (mask[n]) continue;
    const Stiffness c = Stiffness::from_components(ctilde.at(n));
    std::array<Sym3, 6> st;
    for (std::size_t j = 0; j < 6; ++j) {
      st[j] = apply_hooke(c, strain_tensor(vec6_at(m.strains[j], n)));
      const auto v = stress_to_voigt(st[j]).v;
      std::copy(v.begin(), v.end(), sigma[j].at(n).begin());
    }
    Mat6 d;
    Vec6 tr;
    for (std::size_t i = 0; i < 6; ++i) {
      tr[i] = trace(st[i]);
      for (std::size_t j = 0; j < 6; ++j) d(i, j) = contract(st[i], st[j]);
    }
    const auto w = solve(d, tr);
    if (!w) {
      mask[n] |= kMaskGram;
      continue;
    }
    std::copy(w->begin(), w->end(), weights.at(n).begin());
  }

  // G = -sum_j mu_j div(sigma_j), (div s)_r = sum_i d_i s_ri.
  for (std::size_t j = 0; j < 6; ++j) {
    for (std::size_t i = 0; i < 3; ++i) {
      const Field ds = masked_derivative(sigma[j], i, cfg.fd_order, mask);
      for (std::size_t n = 0; n < g.nodes(); ++n) {
        if (mask[n]) continue;
        for (std::size_t r = 0; r < 3; ++r) {
          const auto slot = static_cast<std::size_t>(voigt_index(static_cast<int>(r) + 1, static_cast<int>(i) + 1) - 1);
          res.grad_log_tau(n, r) -= weights(n, j) * ds(n, slot);
        }
      }
    }
  }

  int count = 0;
  const auto label = label_components(g, mask, count);
  res.components = static_cast<std::size_t>(count);
  const auto bp = cfg.base_point.value_or(default_base(g));
  for (std::size_t a = 0; a < 3; ++a)
    if (bp[a] >= g.dims[a]) throw std::invalid_argument("reconstruct_tau: base point outside the grid");
  const std::size_t base = g.index(bp[0], bp[1], bp[2]);
  const Vec3 center = g.point(g.index(g.dims[0] / 2, g.dims[1] / 2, g.dims[2] / 2));

  std::vector<double> phi(g.nodes(), 0.0);
  for (int comp = 0; comp < count; ++comp) {
    std::size_t cb = base;
    if (label[base] != comp) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t n = 0; n < g.nodes(); ++n) {
        if (label[n] != comp) continue;
        const Vec3 x = g.point(n);
        double d = 0.0;
        for (std::size_t a = 0; a < 3; ++a) d += (x[a] - center[a]) * (x[a] - center[a]);
        if (d < best) {
          best = d;
          cb = n;
        }
      }
    }
    if (cfg.tau_method == TauMethod::Path)
      integrate_path(g, res.grad_log_tau, label, comp, cb, phi);
    else
      integrate_poisson(g, res.grad_log_tau, label, comp, cb, phi, cfg.cg_tol, cfg.cg_max_iter);
  }
  for (std::size_t n = 0; n < g.nodes(); ++n) res.tau(n, 0) = mask[n] ? 0.0 : cfg.tau_ref * std::exp(phi[n]);
  for (std::size_t n = 0; n < g.nodes(); ++n)
    if (mask[n])
      for (std::size_t r = 0; r < 3; ++r) res.grad_log_tau(n, r) = 0.0;
  return res;
}

Field reconstruct_divC(const MeasurementSet& m, const Field& c_full, std::vector<std::uint8_t>& mask,
                       const ReconConfig& cfg) {
  m.validate();
  cfg.validate();
  const Grid& g = m.grid;
  if (c_full.components() != kStiffnessComponents || !(c_full.grid() == g))
    throw std::invalid_argument("reconstruct_divC: stiffness must be a 21-component field on the measurement grid");
  if (mask.size() != g.nodes()) throw std::invalid_argument("reconstruct_divC: mask size mismatch");
  Field out(g, 18);
  if (m.strains.size() < 6) return out;
  MeasurementSet basis_only{m.grid, {m.strains.begin(), m.strains.begin() + 6}, {}};
  if (!m.analytic.empty()) basis_only.analytic.assign(m.analytic.begin(), m.analytic.begin() + 6);
  const auto deriv = strain_derivatives(basis_only, cfg.fd_order);

  parallel_for(g.nodes(), cfg.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t n = begin; n < end; ++n) {
      if (mask[n]) continue;
      std::array<Sym3, 6> eps;
      for (std::size_t q = 0; q < 6; ++q) eps[q] = strain_tensor(vec6_at(m.strains[q], n));
      Mat6 e;
      for (std::size_t p = 0; p < 6; ++p)
        for (std::size_t q = 0; q < 6; ++q) e(p, q) = contract(eps[p], eps[q]);
      const auto einv = inverse(e);
      if (!einv) {
        mask[n] |= kMaskGram;
        continue;
      }
      const Stiffness c = Stiffness::from_components(c_full.at(n));
      // w[p][j] = sum_i [C : d_i eps^(p)]_ij
      std::array<Vec3, 6> w{};
      for (std::size_t p = 0; p < 6; ++p)
        for (std::size_t i = 0; i < 3; ++i) {
          const Sym3 s = apply_hooke(c, strain_tensor(vec6_at(deriv[p][i], n)));
          for (std::size_t j = 0; j < 3; ++j) w[p][j] += s(i, j);
        }
      for (std::size_t j = 0; j < 3; ++j) {
        Sym3 t;
        for (std::size_t p = 0; p < 6; ++p)
          for (std::size_t q = 0; q < 6; ++q) t += (-(*einv)(p, q) * w[p][j]) * eps[q];
        const double vals[6] = {t.xx, t.yy, t.zz, t.yz, t.xz, t.xy};
        for (std::size_t k = 0; k < 6; ++k) out(n, 6 * j + k) = vals[k];
      }
    }
  });
  for (std::size_t n = 0; n < g.nodes(); ++n)
    if (mask[n])
      for (std::size_t k = 0; k < 18; ++k) out(n, k) = 0.0;
  return out;
}

std::array<double, 18> divc_from_derivatives(const std::array<Mat6, 3>& dc) {
  std::array<double, 18> out{};
  std::array<std::pair<std::size_t, std::size_t>, 6> kl{{{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}}};
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t s = 0; s < 6; ++s)
      for (std::size_t i = 0; i < 3; ++i) {
        const auto a = static_cast<std::size_t>(voigt_index(static_cast<int>(i) + 1, static_cast<int>(j) + 1) - 1);
        const auto b = static_cast<std::size_t>(voigt_index(static_cast<int>(kl[s].first) + 1, static_cast<int>(kl[s].second) + 1) - 1);
        out[6 * j + s] += dc[i](a, b);
      }
  return out;
}

double error_norm(const Field& a, const Field& b, int p, const std::vector<std::uint8_t>* mask) {
  if (a.components() != b.components() || !(a.grid() == b.grid()))
    throw std::invalid_argument("error_norm: fields differ in grid or components");
  if (p != 0 && p != 1) throw std::invalid_argument("error_norm: p must be 0 or 1");
  const Grid& g = a.grid();
  const std::size_t nc = a.components();
  auto live = [&](std::size_t n) { return mask == nullptr || (*mask)[n] == 0; };
  auto diff = [&](std::size_t n, std::size_t c) { return a(n, c) - b(n, c); };
  double e0 = 0.0;
  for (std::size_t n = 0; n < g.nodes(); ++n)
    if (live(n))
      for (std::size_t c = 0; c < nc; ++c) e0 = std::max(e0, std::abs(diff(n, c)));
  if (p == 0) return e0;

  double e1 = 0.0;
  for (std::size_t n = 0; n < g.nodes(); ++n) {
    if (!live(n)) continue;
    const auto ijk = g.ijk(n);
    for (std::size_t ax = 0; ax < 3; ++ax) {
      const std::size_t s = g.stride(ax);
      const bool lo = ijk[ax] > 0 && live(n - s);
      const bool hi = ijk[ax] + 1 < g.dims[ax] && live(n + s);
      for (std::size_t c = 0; c < nc; ++c) {
        double d;
        if (lo && hi)
          d = (diff(n + s, c) - diff(n - s, c)) / (2.0 * g.h);
        else if (hi)
          d = (diff(n + s, c) - diff(n, c)) / g.h;
        else if (lo)
          d = (diff(n, c) - diff(n - s, c)) / g.h;
        else
          continue;
        e1 = std::max(e1, std::abs(d));
      }
    }
  }
  return e0 + e1;
}

ReconReport reconstruct(const MeasurementSet& m, const ReconConfig& cfg) {
  auto an = reconstruct_anisotropy(m, cfg);
  ReconReport rep;
  rep.mask = std::move(an.mask);
  auto tau = reconstruct_tau(m, an.ctilde, rep.mask, cfg);
  Field c_full(m.grid, kStiffnessComponents);
  for (std::size_t n = 0; n < m.grid.nodes(); ++n)
    for (std::size_t k = 0; k < kStiffnessComponents; ++k) c_full(n, k) = tau.tau(n, 0) * an.ctilde(n, k);
  rep.divc = reconstruct_divC(m, c_full, rep.mask, cfg);
  // Nodes masked by the later stages drop out of every output.
  for (std::size_t n = 0; n < m.grid.nodes(); ++n)
    if (rep.mask[n]) {
      for (std::size_t k = 0; k < kStiffnessComponents; ++k) an.ctilde(n, k) = 0.0;
      tau.tau(n, 0) = 0.0;
    }
  rep.ctilde = std::move(an.ctilde);
  rep.tau = std::move(tau.tau);
  rep.f1 = std::move(an.f1);
  rep.f2 = std::move(an.f2);
  rep.tau_components = tau.components;
  const auto masked = static_cast<double>(std::count_if(rep.mask.begin(), rep.mask.end(), [](auto v) { return v != 0; }));
  rep.masked_fraction = m.grid.nodes() ? masked / static_cast<double>(m.grid.nodes()) : 1.0;
  return rep;
}

}  // namespace elastrecon
