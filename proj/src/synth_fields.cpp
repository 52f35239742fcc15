#include "elastrecon/synth_fields.hpp"

#include <cmath>
#include <stdexcept>

#include "elastrecon/error.hpp"
#include "elastrecon/hyperplane.hpp"
#include "elastrecon/rng.hpp"

namespace elastrecon {

namespace {

Vec6 column(const Mat6& m, std::size_t j) {
  Vec6 v;
  for (std::size_t i = 0; i < 6; ++i) v[i] = m(i, j);
  return v;
}

Vec6 combine(double a, const Vec6& x, double b, const Vec6& y, double c, const Vec6& z) {
  Vec6 out;
  for (std::size_t i = 0; i < 6; ++i) out[i] = a * x[i] + b * y[i] + c * z[i];
  return out;
}

Vec6 negated(Vec6 v) {
  for (double& x : v) x = -x;
  return v;
}

// Unit vector e_k for 1-based k.
Vec6 unit(std::size_t k) {
  Vec6 e{};
  e[k - 1] = 1.0;
  return e;
}

Mat3 grad_of(const QuadraticDisplacement& f, const Vec3& x) {
  const std::array<const Sym3*, 3> rows{&f.p, &f.q, &f.r};
  Mat3 g = f.linear;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) g(i, j) += (*rows[i])(j, k) * x[k];
  return g;
}

}  // namespace

std::array<QuadraticDisplacement, 6> linear_basis_fields() {
  std::array<QuadraticDisplacement, 6> f{};
  f[0].linear(0, 0) = 1.0;  // (x, 0, 0)
  f[1].linear(1, 1) = 1.0;  // (0, y, 0)
  f[2].linear(2, 2) = 1.0;  // (0, 0, z)
  f[3].linear(1, 2) = f[3].linear(2, 1) = 0.5;  // (0, z, y) / 2
  f[4].linear(0, 2) = f[4].linear(2, 0) = 0.5;  // (z, 0, x) / 2
  f[5].linear(0, 1) = f[5].linear(1, 0) = 0.5;  // (y, x, 0) / 2
  return f;
}

VTriple v_from_pqr(const Sym3& p, const Sym3& q, const Sym3& r) {
  VTriple v;
  v.v1 = {p(0, 0), q(1, 0), r(2, 0), q(2, 0) + r(1, 0), p(0, 2) + r(0, 0), p(0, 1) + q(0, 0)};
  v.v2 = {p(0, 1), q(1, 1), r(2, 1), q(2, 1) + r(1, 1), p(1, 2) + r(1, 0), p(1, 1) + q(1, 0)};
  v.v3 = {p(0, 2), q(1, 2), r(2, 2), q(2, 2) + r(1, 2), p(2, 2) + r(2, 0), p(2, 1) + q(0, 2)};
  return v;
}

PQR pqr_from_v(const VTriple& v) {
  // V(i, j) is the j-th component of V_i, both 1-based.
  auto V = [&v](std::size_t i, std::size_t j) { return v[i - 1][j - 1]; };
  PQR out;
  out.p.xx = V(1, 1);
  out.p.xy = V(2, 1);
  out.p.xz = V(3, 1);
  out.p.yy = V(2, 6) - V(1, 2);
  out.p.yz = 0.5 * (V(2, 5) + V(3, 6) - V(1, 4));
  out.p.zz = V(3, 5) - V(1, 3);

  out.q.xx = V(1, 6) - V(2, 1);
  out.q.xy = V(1, 2);
  out.q.xz = 0.5 * (V(3, 6) + V(1, 4) - V(2, 5));
  out.q.yy = V(2, 2);
  out.q.yz = V(3, 2);
  out.q.zz = V(3, 4) - V(2, 3);

  out.r.xx = V(1, 5) - V(3, 1);
  out.r.xy = 0.5 * (V(1, 4) + V(2, 5) - V(3, 6));
  out.r.xz = V(1, 3);
  out.r.yy = V(2, 4) - V(3, 2);
  out.r.yz = V(2, 3);
  out.r.zz = V(3, 3);
  return out;
}

Vec3 solution_conditions(const Stiffness& c, const VTriple& v) {
  const Mat6& m = c.matrix();
  auto row = [&m](std::size_t k) { return column(m, k - 1); };
  return {dot(row(1), v.v1) + dot(row(6), v.v2) + dot(row(5), v.v3),
          dot(row(6), v.v1) + dot(row(2), v.v2) + dot(row(4), v.v3),
          dot(row(5), v.v1) + dot(row(4), v.v2) + dot(row(3), v.v3)};
}

QuadraticDisplacement from_vtriple(const VTriple& v) {
  const PQR pqr = pqr_from_v(v);
  QuadraticDisplacement f;
  f.p = pqr.p;
  f.q = pqr.q;
  f.r = pqr.r;
  return f;
}

VTriple vtriple_of(const QuadraticDisplacement& f) { return v_from_pqr(f.p, f.q, f.r); }

std::vector<QuadraticDisplacement> general_family(const Stiffness& c) {
  const auto inv = inverse(c.matrix());
  if (!inv) throw SingularMatrixError("general_family: stiffness matrix is singular");
  auto cs = [&inv](std::size_t k) { return column(*inv, k - 1); };
  const Vec6 zero{};

  std::vector<QuadraticDisplacement> out;
  out.reserve(15);
  for (std::size_t k : {1, 2, 6}) out.push_back(from_vtriple({zero, zero, cs(k)}));
  for (std::size_t k : {1, 3, 5}) out.push_back(from_vtriple({zero, cs(k), zero}));
  for (std::size_t k : {2, 3, 4}) out.push_back(from_vtriple({cs(k), zero, zero}));

  for (std::size_t k = 0; k < 3; ++k) {
    const Vec3 abg{k == 0 ? 1.0 : 0.0, k == 1 ? 1.0 : 0.0, k == 2 ? 1.0 : 0.0};
    const Vec6 v3 = negated(combine(abg[0], cs(5), abg[1], cs(4), abg[2], cs(3)));
    // V1 = 0.
    out.push_back(from_vtriple({zero, combine(abg[0], cs(6), abg[1], cs(2), abg[2], cs(4)), v3}));
    // V2 = 0.
    out.push_back(from_vtriple({combine(abg[0], cs(1), abg[1], cs(6), abg[2], cs(5)), zero, v3}));
  }
  return out;
}

std::vector<QuadraticDisplacement> mixed_family(const Stiffness& c, std::size_t count, std::uint64_t seed) {
  const auto family = general_family(c);
  SplitMix64 rng(seed);
  constexpr int kAttempts = 16;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    std::vector<QuadraticDisplacement> mixed;
    std::vector<Mat6> constraints;
    for (std::size_t i = 0; i < count; ++i) {
      VTriple v;
      for (const auto& f : family) {
        const double w = rng.gaussian();
        const VTriple fv = vtriple_of(f);
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t k = 0; k < 6; ++k) v[a][k] += w * fv[a][k];
      }
      mixed.push_back(from_vtriple(v));
      for (const auto& m : constraint_matrices_of(v)) constraints.push_back(m);
    }
    if (constraints.size() >= kHyperplaneDim && nullspace_normal(constraints).rank == int(kHyperplaneDim))
      return mixed;
  }
  throw std::runtime_error("mixed_family: could not reach a rank-20 constraint set with " + std::to_string(count) +
                           " fields");
}

Stiffness ti_tensor(const TIParams& t) {
  Mat6 m;
  const auto v = t.as_vector();
  const auto& basis = ti_basis();
  for (std::size_t k = 0; k < 5; ++k) m += basis[k] * v[k];
  return Stiffness::from_matrix(m);
}

Stiffness random_stable_stiffness(SplitMix64& rng, double lo, double hi) {
  Mat6 q;
  for (std::size_t j = 0; j < 6; ++j) {
    Vec6 v;
    double norm = 0.0;
    do {
      for (auto& x : v) x = rng.gaussian();
      for (std::size_t k = 0; k < j; ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < 6; ++i) d += v[i] * q(i, k);
        for (std::size_t i = 0; i < 6; ++i) v[i] -= d * q(i, k);
      }
      norm = std::sqrt(dot(v, v));
    } while (norm < 1e-3);
    for (std::size_t i = 0; i < 6; ++i) q(i, j) = v[i] / norm;
  }
  Mat6 d;
  for (std::size_t i = 0; i < 6; ++i) d(i, i) = rng.uniform(lo, hi);
  const Mat6 scaled = q * d * q.transposed();
  // Undo the Mehrabadi factors 2^{(chi_i + chi_j)/2}.
  Mat6 c;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i; j < 6; ++j) {
      const double f = (i >= 3 ? std::sqrt(2.0) : 1.0) * (j >= 3 ? std::sqrt(2.0) : 1.0);
      c(i, j) = c(j, i) = 0.5 * (scaled(i, j) + scaled(j, i)) / f;
    }
  return Stiffness::from_matrix(c);
}

TIParams random_ti_params(SplitMix64& rng, double lo, double hi) {
  // Mehrabadi eigenvalues of a TI tensor: a - b (twice, counting the shear
  // entry (a - b)/2 scaled by 2), 2e (twice), and those of
  // [[a + b, sqrt2 c], [sqrt2 c, d]].
  const double ab = rng.uniform(lo, hi);
  const double e2 = rng.uniform(lo, hi);
  const double l1 = rng.uniform(lo, hi);
  const double l2 = rng.uniform(lo, hi);
  const double th = rng.uniform(0.0, 3.141592653589793);
  const double cs = std::cos(th), sn = std::sin(th);
  const double s = l1 * cs * cs + l2 * sn * sn;
  const double d = l1 * sn * sn + l2 * cs * cs;
  const double off = (l1 - l2) * cs * sn;
  TIParams t;
  t.a = 0.5 * (s + ab);
  t.b = 0.5 * (s - ab);
  t.c = off / std::sqrt(2.0);
  t.d = d;
  t.e = 0.5 * e2;
  return t;
}

const std::array<Mat6, 5>& ti_basis() {
  static const std::array<Mat6, 5> basis = [] {
    std::array<Mat6, 5> b{};
    b[0](0, 0) = b[0](1, 1) = 1.0;
    b[0](5, 5) = 0.5;
    b[1](0, 1) = b[1](1, 0) = 1.0;
    b[1](5, 5) = -0.5;
    b[2](0, 2) = b[2](2, 0) = b[2](1, 2) = b[2](2, 1) = 1.0;
    b[3](2, 2) = 1.0;
    b[4](3, 3) = b[4](4, 4) = 1.0;
    return b;
  }();
  return basis;
}

std::pair<QuadraticDisplacement, QuadraticDisplacement> ti_fields(const TIParams& t) {
  VTriple v7;
  v7.v1[1] = t.a;   // V12
  v7.v1[0] = -t.b;  // V11
  v7.v2[2] = t.b;   // V23
  v7.v3[2] = t.c;   // V33
  v7.v2[0] = -t.c;  // V21
  v7.v3[0] = -t.d;  // V31

  VTriple v8;
  v8.v3[2] = -t.e;  // V33
  v8.v1[4] = t.d;   // V15
  return {from_vtriple(v7), from_vtriple(v8)};
}

Mat<3, 5> ti_condition_rows(const VTriple& v) {
  auto V = [&v](std::size_t i, std::size_t j) { return v[i - 1][j - 1]; };
  Mat<3, 5> k;
  k(0, 0) = V(1, 1) + 0.5 * V(2, 6);
  k(0, 1) = V(1, 2) - 0.5 * V(2, 6);
  k(0, 2) = V(1, 3);
  k(0, 4) = V(3, 5);
  k(1, 0) = 0.5 * V(1, 6) + V(2, 2);
  k(1, 1) = -0.5 * V(1, 6) + V(2, 1);
  k(1, 2) = V(2, 3);
  k(1, 4) = V(3, 4);
  k(2, 2) = V(3, 1) + V(3, 2);
  k(2, 3) = V(3, 3);
  k(2, 4) = V(1, 5) + V(2, 4);
  return k;
}

Vec3 eval_field(const QuadraticDisplacement& f, const Vec3& x) {
  const std::array<const Sym3*, 3> rows{&f.p, &f.q, &f.r};
  Vec3 u = f.linear * x;
  for (std::size_t i = 0; i < 3; ++i) {
    double quad = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) quad += x[j] * (*rows[i])(j, k) * x[k];
    u[i] += 0.5 * quad + f.constant[i];
  }
  return u;
}

Sym3 eval_strain(const QuadraticDisplacement& f, const Vec3& x) { return Sym3::from_matrix(grad_of(f, x)); }

VTriple strain_gradient(const QuadraticDisplacement& f) {
  const std::array<const Sym3*, 3> rows{&f.p, &f.q, &f.r};
  VTriple out;
  for (std::size_t a = 0; a < 3; ++a) {
    // d/dx_a of grad_ij = rows[i](j, a).
    Mat3 dg;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) dg(i, j) = (*rows[i])(j, a);
    out[a] = strain_to_voigt(Sym3::from_matrix(dg)).v;
  }
  return out;
}

Vec6 affine_strain(const QuadraticDisplacement& f) { return strain_to_voigt(Sym3::from_matrix(f.linear)).v; }

Vec3 stress_divergence(const Stiffness& c, const QuadraticDisplacement& f) {
  const VTriple g = strain_gradient(f);
  Vec3 div{};
  for (std::size_t i = 0; i < 3; ++i) {
    const Vec6 dsigma = c.matrix() * g[i];  // d sigma_V / d x_i, stress convention
    for (std::size_t j = 0; j < 3; ++j)
      div[j] += dsigma[static_cast<std::size_t>(voigt_index(int(i) + 1, int(j) + 1) - 1)];
  }
  return div;
}

std::array<Mat6, 3> constraint_matrices_of(const VTriple& v) {
  std::array<Mat6, 3> m{
      outer(v.v1, unit(1)) + outer(v.v2, unit(6)) + outer(v.v3, unit(5)),
      outer(v.v1, unit(6)) + outer(v.v2, unit(2)) + outer(v.v3, unit(4)),
      outer(v.v1, unit(5)) + outer(v.v2, unit(4)) + outer(v.v3, unit(3)),
  };
  for (auto& x : m) x = symmetrized(x);
  return m;
}

}  // namespace elastrecon
