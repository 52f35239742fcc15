#include <doctest.h>

#include <cmath>
#include <vector>

#include "elastrecon/forward_fd.hpp"
#include "elastrecon/recon.hpp"
#include "support/oracles.hpp"

using namespace elastrecon;

namespace {

std::vector<QuadraticDisplacement> full_set(const Stiffness& c, bool mixed = false) {
  std::vector<QuadraticDisplacement> f;
  for (const auto& x : linear_basis_fields()) f.push_back(x);
  const auto extra = mixed ? mixed_family(c, 7, 2) : general_family(c);
  f.insert(f.end(), extra.begin(), extra.end());
  return f;
}

// A basis of six affine strains that is not the identity, so that F1 and mu vary in space.
std::vector<QuadraticDisplacement> skewed_set(const Stiffness& c) {
  auto f = full_set(c);
  const auto fam = general_family(c);
  for (std::size_t j = 0; j < 6; ++j) {
    auto& b = f[j];
    const auto& q = fam[j];
    b.p = 0.3 * q.p;
    b.q = 0.3 * q.q;
    b.r = 0.3 * q.r;
    b.linear = b.linear + Mat3{{0.1, 0.0, 0.05, 0.0, 0.1, 0.0, 0.02, 0.0, 0.1}};
  }
  return f;
}

Mat6 normalized(const Mat6& c) { return c * (1.0 / std::pow(determinant(c), 1.0 / 6.0)); }

double max_ctilde_error(const ReconReport& r, const Mat6& ref) {
  double e = 0.0;
  for (std::size_t n = 0; n < r.ctilde.grid().nodes(); ++n)
    e = std::max(e, oracle::max_abs_diff(sym6_from_components(r.ctilde.at(n)), ref));
  return e;
}

MeasurementSet strip_analytic(MeasurementSet m) {
  m.analytic.clear();
  return m;
}

}  // namespace

TEST_CASE("F1 equals one for the linear basis and zero without six strains") {
  const Grid g = Grid::cube(5);
  std::vector<QuadraticDisplacement> f;
  for (const auto& x : linear_basis_fields()) f.push_back(x);
  const auto m = MeasurementSet::sample(g, f);
  const Field f1 = f1_map(m);
  for (double v : f1.data()) CHECK(v == doctest::Approx(1.0));
  f.pop_back();
  const Field f0 = f1_map(MeasurementSet::sample(g, f));
  for (double v : f0.data()) CHECK(v == 0.0);
}

TEST_CASE("mu coefficients by LU and by Cramer's rule agree and reproduce the strain") {
  SplitMix64 rng(60);
  const Stiffness c = random_stable_stiffness(rng);
  const Grid g = Grid::cube(5);
  const auto m = MeasurementSet::sample(g, skewed_set(c));
  for (std::size_t p : {0u, 6u, 14u}) {
    const Field a = mu_coeffs(m, p), b = mu_coeffs_cramer(m, p);
    for (std::size_t n = 0; n < g.nodes(); ++n) {
      Vec6 recon{};
      for (std::size_t j = 0; j < 6; ++j) {
        CHECK(a(n, j) == doctest::Approx(b(n, j)).scale(1.0).epsilon(1e-10));
        for (std::size_t i = 0; i < 6; ++i) recon[i] += a(n, j) * m.strains[j](n, i);
      }
      for (std::size_t i = 0; i < 6; ++i) CHECK(recon[i] == doctest::Approx(m.strains[p](n, i)).scale(1.0).epsilon(1e-10));
    }
  }
  CHECK_THROWS_AS(mu_coeffs(m, 99), std::out_of_range);
}

TEST_CASE("mu gradients from analytic tags and from finite differences agree") {
  SplitMix64 rng(61);
  const Stiffness c = random_stable_stiffness(rng);
  const Grid g = Grid::cube(7);
  const auto m = MeasurementSet::sample(g, skewed_set(c));
  const auto exact = mu_gradients(m, 8, 2);
  const auto fd = mu_gradients(strip_analytic(m), 8, 2);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t i = 0; i < exact[a].data().size(); ++i)
      CHECK(fd[a].data()[i] == doctest::Approx(exact[a].data()[i]).scale(1.0).epsilon(1e-9));
}

TEST_CASE("constraint matrices are orthogonal to the true tensor") {
  SplitMix64 rng(62);
  const Stiffness c = random_stable_stiffness(rng);
  const Grid g = Grid::cube(5);
  const auto m = MeasurementSet::sample(g, skewed_set(c));
  for (std::size_t p = 6; p < m.strains.size(); p += 3) {
    const auto cm = constraint_matrices(m, p, 2);
    for (const auto& f : cm)
      for (std::size_t n = 0; n < g.nodes(); ++n) {
        const Mat6 x = sym6_from_components(f.at(n));
        CHECK(std::abs(frobenius_dot(x, c.matrix())) <= 1e-10 * frobenius_norm(x) * frobenius_norm(c.matrix()));
      }
  }
}

TEST_CASE("constant tensor is recovered exactly by every method") {
  SplitMix64 rng(63);
  const Stiffness c = random_stable_stiffness(rng);
  const Mat6 ref = normalized(c.matrix());
  const Grid g = Grid::cube(5);
  for (bool mixed : {false, true}) {
    const auto m = MeasurementSet::sample(g, full_set(c, mixed));
    for (auto method : {NormalMethod::Nullspace, NormalMethod::CrossprodSum}) {
      for (auto tau : {TauMethod::Path, TauMethod::Poisson}) {
        ReconConfig cfg;
        cfg.method = method;
        cfg.tau_method = tau;
        const auto r = reconstruct(m, cfg);
        CHECK(r.masked_fraction == 0.0);
        CHECK(r.tau_components == 1);
        CHECK(max_ctilde_error(r, ref) <= 1e-8 * oracle::max_abs(ref));
        for (double t : r.tau.data()) CHECK(std::abs(t - 1.0) <= 1e-9);
        for (double d : r.divc.data()) CHECK(std::abs(d) <= 1e-9 * oracle::max_abs(c.matrix()));
        for (std::size_t n = 0; n < g.nodes(); ++n)
          CHECK(determinant(sym6_from_components(r.ctilde.at(n))) == doctest::Approx(1.0).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("non-trivial basis strains still give exact recovery") {
  SplitMix64 rng(64);
  const Stiffness c = random_stable_stiffness(rng);
  const auto m = MeasurementSet::sample(Grid::cube(5), skewed_set(c));
  ReconConfig cfg;
  cfg.tau_ref = 2.5;
  const auto r = reconstruct(m, cfg);
  REQUIRE(r.masked_fraction == 0.0);
  CHECK(max_ctilde_error(r, normalized(c.matrix())) <= 1e-8);
  for (double t : r.tau.data()) CHECK(t == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("transversely isotropic tensor recovered up to scale") {
  SplitMix64 rng(65);
  for (int t = 0; t < 5; ++t) {
    const TIParams p = random_ti_params(rng);
    std::vector<QuadraticDisplacement> f;
    for (const auto& x : linear_basis_fields()) f.push_back(x);
    const auto [u7, u8] = ti_fields(p);
    f.push_back(u7);
    f.push_back(u8);
    const auto m = MeasurementSet::sample(Grid::cube(4), f);
    for (auto method : {NormalMethod::Nullspace, NormalMethod::CrossprodSum}) {
      ReconConfig cfg;
      cfg.symmetry = Symmetry::TransverseIsotropic;
      cfg.method = method;
      const auto r = reconstruct(m, cfg);
      REQUIRE(r.masked_fraction == 0.0);
      const Mat6 got = sym6_from_components(r.ctilde.at(7));
      const Vec<5> est{got(0, 0), got(0, 1), got(0, 2), got(2, 2), got(3, 3)};
      const Vec<5> ref = p.as_vector();
      CHECK(dot(est, ref) / std::sqrt(dot(est, est) * dot(ref, ref)) >= 1.0 - 1e-10);
    }
  }
}

TEST_CASE("five strains: everything masked, zero outputs") {
  SplitMix64 rng(66);
  const Stiffness c = random_stable_stiffness(rng);
  auto f = full_set(c);
  f.resize(5);
  const auto r = reconstruct(MeasurementSet::sample(Grid::cube(4), f), ReconConfig{});
  CHECK(r.masked_fraction == 1.0);
  for (auto v : r.mask) CHECK((v & kMaskF2) != 0);
  for (double v : r.f2.data()) CHECK(v == 0.0);
  for (const Field* out : {&r.ctilde, &r.tau, &r.divc})
    for (double v : out->data()) CHECK(v == 0.0);
}

TEST_CASE("six strains without extras fail hypothesis B") {
  std::vector<QuadraticDisplacement> f;
  for (const auto& x : linear_basis_fields()) f.push_back(x);
  const auto r = reconstruct(MeasurementSet::sample(Grid::cube(4), f), ReconConfig{});
  CHECK(r.masked_fraction == 1.0);
  for (auto v : r.mask) CHECK(v == kMaskF2);
}

TEST_CASE("tau is integrated per connected component") {
  SplitMix64 rng(67);
  const Stiffness c = random_stable_stiffness(rng);
  const Grid g = Grid::cube(7);
  const auto m = MeasurementSet::sample(g, full_set(c));
  ReconConfig cfg;
  auto an = reconstruct_anisotropy(m, cfg);
  auto mask = an.mask;
  for (std::size_t j = 0; j < 7; ++j)
    for (std::size_t k = 0; k < 7; ++k) mask[g.index(3, j, k)] = kMaskF1;
  for (auto method : {TauMethod::Path, TauMethod::Poisson}) {
    cfg.tau_method = method;
    auto mk = mask;
    const auto t = reconstruct_tau(m, an.ctilde, mk, cfg);
    CHECK(t.components == 2);
    for (std::size_t n = 0; n < g.nodes(); ++n) {
      if (mk[n])
        CHECK(t.tau(n, 0) == 0.0);
      else
        CHECK(t.tau(n, 0) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("threads do not change the result") {
  SplitMix64 rng(68);
  const Stiffness c = random_stable_stiffness(rng);
  const auto m = strip_analytic(MeasurementSet::sample(Grid::cube(6), full_set(c, true)));
  ReconConfig a, b;
  b.threads = 4;
  const auto ra = reconstruct(m, a), rb = reconstruct(m, b);
  CHECK(ra.ctilde.data() == rb.ctilde.data());
  CHECK(ra.tau.data() == rb.tau.data());
  CHECK(ra.divc.data() == rb.divc.data());
  CHECK(ra.mask == rb.mask);
}

TEST_CASE("div C from partial derivatives matches the index sum") {
  SplitMix64 rng(69);
  std::array<Mat6, 3> dc;
  for (auto& d : dc) d = oracle::random_symmetric6(rng);
  const auto got = divc_from_derivatives(dc);
  const std::size_t kl[6][2] = {{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}};
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t s = 0; s < 6; ++s) {
      double ref = 0.0;
      for (std::size_t i = 0; i < 3; ++i) ref += oracle::tensor4(dc[i], i, j, kl[s][0], kl[s][1]);
      CHECK(got[6 * j + s] == doctest::Approx(ref).epsilon(1e-14));
    }
}

TEST_CASE("div C vanishes for a constant tensor with affine basis strains") {
  SplitMix64 rng(70);
  const Stiffness c = random_stable_stiffness(rng);
  const Grid g = Grid::cube(4);
  const auto m = MeasurementSet::sample(g, full_set(c));
  const Field cf = stiffness_field(g, [&](const Vec3&) { return c; });
  std::vector<std::uint8_t> mask(g.nodes(), 0);
  const Field d = reconstruct_divC(m, cf, mask, ReconConfig{});
  for (double v : d.data()) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("div C of a scaled tensor converges to grad tau times the base tensor") {
  // Forward solutions for C = (1 + 0.3 x) C0; the true C is supplied, so only
  // the finite-difference strains and their derivatives carry error.
  SplitMix64 rng(71);
  const Stiffness c0 = random_stable_stiffness(rng);
  const auto ref = divc_from_derivatives({c0.matrix() * 0.3, Mat6{}, Mat6{}});
  double scale = 0.0;
  for (double v : ref) scale = std::max(scale, std::abs(v));
  std::vector<double> errors;
  for (std::size_t n : {9u, 17u}) {
    const Grid g = Grid::cube(n);
    ForwardProblem p;
    p.stiffness = stiffness_field(g, [&](const Vec3& x) { return c0.scaled(1.0 + 0.3 * x[0]); });
    MeasurementSet m;
    m.grid = g;
    for (const auto& f : linear_basis_fields()) {
      p.boundary = Field::sample(g, 3, [&](const Vec3& x, std::span<double> o) {
        const Vec3 v = eval_field(f, x);
        std::copy(v.begin(), v.end(), o.begin());
      });
      m.strains.push_back(strain_of(solve_dirichlet(p).u, 2));
    }
    std::vector<std::uint8_t> mask(g.nodes(), 0);
    const Field d = reconstruct_divC(m, p.stiffness, mask, ReconConfig{});
    const std::size_t center = g.index(n / 2, n / 2, n / 2);
    double e = 0.0;
    for (std::size_t k = 0; k < 18; ++k) e = std::max(e, std::abs(d(center, k) - ref[k]));
    errors.push_back(e / scale);
  }
  CHECK(errors[0] < 0.1);
  CHECK(errors[1] < errors[0] / 2.5);
}

TEST_CASE("error norms") {
  const Grid g = Grid::cube(5, 1.0);
  const Field a = Field::sample(g, 1, [](const Vec3& x, std::span<double> o) { o[0] = 2.0 * x[0]; });
  const Field b(g, 1);
  CHECK(error_norm(a, b, 0) == doctest::Approx(2.0));
  CHECK(error_norm(a, b, 1) == doctest::Approx(4.0));
  std::vector<std::uint8_t> mask(g.nodes(), 0);
  for (std::size_t n = 0; n < g.nodes(); ++n)
    if (g.ijk(n)[0] > 2) mask[n] = 1;
  CHECK(error_norm(a, b, 0, &mask) == doctest::Approx(1.0));
  CHECK(error_norm(a, b, 1, &mask) == doctest::Approx(3.0));
  CHECK_THROWS_AS(error_norm(a, Field(g, 2), 0), std::invalid_argument);
}

TEST_CASE("configuration validation") {
  ReconConfig cfg;
  cfg.fd_order = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ReconConfig{};
  cfg.c0 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ReconConfig{};
  CHECK(cfg.resolved_method(7) == NormalMethod::CrossprodSum);
  CHECK(cfg.resolved_method(15) == NormalMethod::Nullspace);
}
