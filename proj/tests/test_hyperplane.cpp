#include <doctest.h>

#include <cmath>
#include <vector>

#include "elastrecon/hyperplane.hpp"
#include "elastrecon/synth_fields.hpp"
#include "support/oracles.hpp"

using namespace elastrecon;

namespace {

std::vector<Mat6> random_tuple(SplitMix64& rng, std::size_t k) {
  std::vector<Mat6> m(k);
  for (auto& x : m) x = oracle::random_symmetric6(rng);
  return m;
}

double norm_product(const std::vector<Mat6>& m, const Mat6& n) {
  double mx = 0.0;
  for (const auto& x : m) mx = std::max(mx, frobenius_norm(x));
  return mx * frobenius_norm(n);
}

}  // namespace

TEST_CASE("canonical basis is orthonormal and coordinates round trip") {
  const auto& b = canonical_basis();
  for (std::size_t i = 0; i < kSymDim; ++i)
    for (std::size_t j = 0; j < kSymDim; ++j)
      CHECK(frobenius_dot(b[i], b[j]) == doctest::Approx(i == j ? 1.0 : 0.0));
  SplitMix64 rng(20);
  const Mat6 m = oracle::random_symmetric6(rng);
  CHECK(oracle::max_abs_diff(from_sym_coordinates(sym_coordinates(m)), m) < 1e-14);
  const auto x = sym_coordinates(m);
  CHECK(dot(x, x) == doctest::Approx(frobenius_dot(m, m)));
}

TEST_CASE("cross21 is orthogonal to its inputs") {
  SplitMix64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const auto m = random_tuple(rng, 20);
    const Mat6 n = cross21(m);
    CHECK(frobenius_norm(n) > 0.0);
    for (const auto& x : m) CHECK(std::abs(frobenius_dot(x, n)) <= 1e-10 * norm_product(m, n));
    CHECK(oracle::max_abs_diff(n, n.transposed()) == 0.0);
  }
}

TEST_CASE("cross21 alternates under transposition of two arguments") {
  SplitMix64 rng(22);
  auto m = random_tuple(rng, 20);
  const Mat6 n = cross21(m);
  std::swap(m[3], m[17]);
  const Mat6 swapped = cross21(m);
  CHECK(oracle::max_abs_diff(swapped, n * -1.0) <= 1e-10 * oracle::max_abs(n));
}

TEST_CASE("cross21 vanishes on dependent tuples") {
  SplitMix64 rng(23);
  auto m = random_tuple(rng, 20);
  m[19] = m[0] * 2.0 - m[5] * 0.5;
  CHECK(oracle::max_abs(cross21(m)) == 0.0);
  m[19] = m[4];
  CHECK(oracle::max_abs(cross21(m)) == 0.0);
}

TEST_CASE("cross21 is independent of the basis") {
  SplitMix64 rng(24);
  const auto m = random_tuple(rng, 20);
  const Mat6 ref = cross21(m);
  for (int t = 0; t < 5; ++t) {
    S6Basis basis;
    for (auto& b : basis) b = oracle::random_symmetric6(rng);
    const Mat6 n = cross21(m, basis);
    CHECK(oracle::max_abs_diff(n, ref) <= 1e-9 * oracle::max_abs(ref));
  }
}

TEST_CASE("cross21 equals the determinant expansion in the canonical basis") {
  SplitMix64 rng(25);
  const auto m = random_tuple(rng, 20);
  oracle::Matrix rows;
  for (const auto& x : m) {
    const auto c = sym_coordinates(x);
    rows.emplace_back(c.begin(), c.end());
  }
  const auto cof = oracle::minor_cofactors(rows);
  const Mat6 ref = from_sym_coordinates(cof);
  CHECK(oracle::max_abs_diff(cross21(m), ref) <= 1e-10 * oracle::max_abs(ref));
}

TEST_CASE("cross21 rejects a wrong number of matrices") {
  SplitMix64 rng(26);
  CHECK_THROWS_AS(cross21(random_tuple(rng, 19)), std::invalid_argument);
}

TEST_CASE("nullspace_normal agrees in direction with cross21 on rank-20 tuples") {
  SplitMix64 rng(27);
  for (int t = 0; t < 50; ++t) {
    const auto m = random_tuple(rng, 20);
    const auto ns = nullspace_normal(m);
    REQUIRE(ns.rank == 20);
    CHECK(frobenius_norm(ns.normal) == doctest::Approx(1.0));
    CHECK(std::abs(oracle::cosine(ns.normal, cross21(m))) >= 1.0 - 1e-12);
  }
}

TEST_CASE("nullspace_normal on overcomplete consistent data") {
  SplitMix64 rng(28);
  const Stiffness c = random_stable_stiffness(rng);
  std::vector<Mat6> m;
  for (const auto& f : general_family(c)) {
    const auto cm = constraint_matrices_of(vtriple_of(f));
    m.insert(m.end(), cm.begin(), cm.end());
  }
  REQUIRE(m.size() == 45);
  const auto ns = nullspace_normal(m);
  CHECK(ns.rank == 20);
  CHECK(std::abs(oracle::cosine(ns.normal, c.matrix())) >= 1.0 - 1e-12);

  CHECK(independent_subset(m).size() == 20);
}

TEST_CASE("least_squares_normal equals the nullspace normal on exact data") {
  SplitMix64 rng(30);
  for (int t = 0; t < 10; ++t) {
    const auto m = random_tuple(rng, 20);
    const auto ns = nullspace_normal(m);
    const Mat6 ls = least_squares_normal(m);
    CHECK(frobenius_norm(ls) == doctest::Approx(1.0));
    CHECK(std::abs(oracle::cosine(ls, ns.normal)) >= 1.0 - 1e-12);
  }
}

TEST_CASE("least_squares_normal is stable under small inconsistent perturbations") {
  SplitMix64 rng(31);
  const Stiffness c = random_stable_stiffness(rng);
  std::vector<Mat6> exact;
  for (const auto& f : general_family(c)) {
    const auto cm = constraint_matrices_of(vtriple_of(f));
    exact.insert(exact.end(), cm.begin(), cm.end());
  }
  const auto residual = [](const std::vector<Mat6>& m, const Mat6& n) {
    const auto x = sym_coordinates(n);
    double s = 0.0;
    for (const auto& mi : m) {
      const auto y = sym_coordinates(mi);
      double d = 0.0;
      for (std::size_t i = 0; i < kSymDim; ++i) d += x[i] * y[i];
      s += d * d;
    }
    return s / std::pow(frobenius_norm(n), 2);
  };
  for (double delta : {1e-8, 1e-6, 1e-4}) {
    auto m = exact;
    for (auto& mi : m) mi = mi + oracle::random_symmetric6(rng) * (delta * frobenius_norm(mi));
    REQUIRE(nullspace_normal(m).rank == 21);
    const Mat6 ls = least_squares_normal(m);
    const double angle = std::sqrt(std::max(0.0, 1.0 - std::pow(oracle::cosine(ls, c.matrix()), 2)));
    CHECK(angle <= 1e4 * delta);
    CHECK(residual(m, ls) <= residual(m, c.matrix()) * (1.0 + 1e-9));
    for (int k = 0; k < 5; ++k) CHECK(residual(m, ls) <= residual(m, oracle::random_symmetric6(rng)));
  }
}

TEST_CASE("rank deficiency yields a zero normal") {
  SplitMix64 rng(29);
  auto m = random_tuple(rng, 22);
  for (std::size_t i = 19; i < 22; ++i) m[i] = m[i - 19] + m[i - 18];
  const auto ns = nullspace_normal(m);
  CHECK(ns.rank == 19);
  CHECK(oracle::max_abs(ns.normal) == 0.0);
}

TEST_CASE("binomial and subset enumeration") {
  CHECK(binomial(21, 20) == 21);
  CHECK(binomial(45, 20) == 3169870830126ULL);
  CHECK(binomial(5, 7) == 0);
  CHECK(binomial(200, 100) == UINT64_MAX);
  std::size_t count = 0;
  bool sampled = for_each_subset(6, 3, 100, [&](std::span<const std::size_t> idx) {
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    ++count;
  });
  CHECK_FALSE(sampled);
  CHECK(count == 20);
  count = 0;
  sampled = for_each_subset(30, 20, 7, [&](std::span<const std::size_t>) { ++count; });
  CHECK(sampled);
  CHECK(count == 7);
}

TEST_CASE("f2 subset sum equals the Cauchy-Binet value and flags dependence") {
  SplitMix64 rng(30);
  const auto m = random_tuple(rng, 21);
  const auto v = f2(m, 64);
  CHECK_FALSE(v.sampled);
  CHECK(v.subsets == 21);
  CHECK(v.value == doctest::Approx(f2_exact(m)).epsilon(1e-9));
  CHECK(v.value > 0.0);

  auto dep = random_tuple(rng, 20);
  dep[0] = dep[1];
  CHECK(f2(dep, 64).value == 0.0);
  CHECK(f2_exact(dep) == doctest::Approx(0.0).scale(1e-20));
}

TEST_CASE("crossprod_sum_normal recovers the normalized direction") {
  SplitMix64 rng(31);
  const Stiffness c = random_stable_stiffness(rng);
  const Mat6 ref = c.matrix() * (1.0 / std::pow(determinant(c.matrix()), 1.0 / 6.0));
  const auto stack = [](const std::vector<QuadraticDisplacement>& fields) {
    std::vector<Mat6> m;
    for (const auto& f : fields) {
      const auto cm = constraint_matrices_of(vtriple_of(f));
      m.insert(m.end(), cm.begin(), cm.end());
    }
    return m;
  };

  SUBCASE("all 21 subsets") {
    const auto r = crossprod_sum_normal(stack(mixed_family(c, 7, 3)), 64);
    CHECK_FALSE(r.sampled);
    CHECK(r.contributing == 21);
    CHECK(determinant(r.normal) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(oracle::max_abs_diff(r.normal, ref) <= 1e-9 * oracle::max_abs(ref));
  }
  SUBCASE("sampled independent subsets") {
    const auto r = crossprod_sum_normal(stack(general_family(c)), 64);
    CHECK(r.sampled);
    CHECK(r.contributing == 64);
    CHECK(determinant(r.normal) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(oracle::max_abs_diff(r.normal, ref) <= 1e-9 * oracle::max_abs(ref));
  }
  SUBCASE("too few matrices") {
    SplitMix64 r2(32);
    CHECK(crossprod_sum_normal(random_tuple(r2, 19), 64).contributing == 0);
  }
}
