// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "elastrecon/field_io.hpp"
#include "elastrecon/harness.hpp"
#include "elastrecon/hyperplane.hpp"
#include "elastrecon/rng.hpp"
#include "elastrecon/tensor_core.hpp"

using namespace elastrecon;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double max_abs(const Mat6& m) { return max_abs(std::span<const double>(m.a)); }

double max_abs_diff(const Field& a, const Field& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.data().size(); ++k) m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

Mat6 unit(const Mat6& m) { return m * (1.0 / frobenius_norm(m)); }

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// Scenarios of criteria 1, 2 and 9.
Scenario constant_case(std::uint64_t seed) {
  return parse_scenario({{"stiffness", {{"random_seed", seed}}}, {"grid", {{"n", 9}}}, {"fields", {{"extra", "full"}}}});
}

Scenario ti_case(std::uint64_t seed) {
  return parse_scenario({{"kind", "ti"}, {"stiffness", {{"random_seed", seed}}}, {"grid", {{"n", 9}}}});
}

constexpr std::uint64_t kCases = 100;

Outcome criterion1() {
  Outcome o;
  double dir = 0.0, det = 0.0, tau = 0.0, divc = 0.0;
  for (std::uint64_t k = 1; k <= kCases; ++k) {
    const Scenario s = constant_case(k);
    const Stiffness c = base_stiffness(s);
    const double lmin = stability_check(c).lambda_min;
    o.require(lmin >= 0.5 - 1e-9 && lmin <= 5.0 + 1e-9, "lambda_min(c') outside [0.5, 5]");
    const Dataset d = generate_dataset(s);
    const ReconReport r = run_reconstruction(d, s);
    o.require(r.masked_fraction == 0.0, "masked nodes");
    const Mat6 ref = unit(c.matrix());
    double tmin = std::numeric_limits<double>::infinity(), tmax = 0.0;
    for (std::size_t n = 0; n < d.grid.nodes(); ++n) {
      const Mat6 ct = sym6_from_components(r.ctilde.at(n));
      dir = std::max(dir, frobenius_norm(unit(ct) - ref));
      det = std::max(det, std::abs(determinant(ct) - 1.0));
      tmin = std::min(tmin, r.tau(n, 0));
      tmax = std::max(tmax, r.tau(n, 0));
    }
    tau = std::max(tau, (tmax - tmin) / tmax);
    divc = std::max(divc, max_abs(r.divc.data()) / max_abs(c.matrix()));
  }
  o.require(dir <= 1e-8, "direction error");
  o.require(det <= 1e-8, "det(ctilde) != 1");
  o.require(tau <= 1e-9, "tau not constant");
  o.require(divc <= 1e-9, "div C not zero");
  o.detail << "100 tensors on 9^3: direction err " << fmt(dir) << ", |det-1| " << fmt(det) << ", tau spread "
           << fmt(tau) << ", div C/|C| " << fmt(divc);
  return o;
}

Outcome criterion2() {
  Outcome o;
  double worst = 1.0;
  for (std::uint64_t k = 1; k <= kCases; ++k) {
    const Scenario s = ti_case(k);
    const Mat6 c = base_stiffness(s).matrix();
    const Vec<5> ref{c(0, 0), c(0, 1), c(0, 2), c(2, 2), c(3, 3)};
    const Dataset d = generate_dataset(s);
    o.require(d.measurements.strains.size() == 8, "expected 6+2 fields");
    const ReconReport r = run_reconstruction(d, s);
    o.require(r.masked_fraction == 0.0, "masked nodes");
    for (std::size_t n = 0; n < d.grid.nodes(); ++n) {
      const Mat6 ct = sym6_from_components(r.ctilde.at(n));
      const Vec<5> got{ct(0, 0), ct(0, 1), ct(0, 2), ct(2, 2), ct(3, 3)};
      double ab = 0.0, aa = 0.0, bb = 0.0;
      for (std::size_t i = 0; i < 5; ++i) {
        ab += got[i] * ref[i];
        aa += got[i] * got[i];
        bb += ref[i] * ref[i];
      }
      worst = std::min(worst, ab / std::sqrt(aa * bb));
    }
  }
  o.require(worst >= 1.0 - 1e-10, "cosine below 1 - 1e-10");
  o.detail << "100 TI tensors on 9^3: min cosine 1 - " << fmt(1.0 - worst);
  return o;
}

Outcome criterion3() {
  Outcome o;
  SplitMix64 rng(0xC3);
  double ratio = 0.0, slack = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 1000; ++t) {
    const Stiffness c = random_stable_stiffness(rng);
    const auto rep = stability_check(c);
    const double det = determinant(c.matrix());
    const double bound = std::pow(rep.lambda_min, 6) / 8.0;
    slack = std::min(slack, det / bound);
    ratio = std::max(ratio, std::abs(determinant(mehrabadi(c)) / (8.0 * det) - 1.0));
    o.require(rep.is_stable, "random tensor not stable");
  }
  o.require(slack >= 1.0, "det(c) below lambda_min^6/8");
  o.require(ratio <= 1e-10, "det(c') != 8 det(c)");
  o.detail << "1000 tensors: min det(c)/(lambda_min^6/8) " << fmt(slack) << ", max |det(c')/(8 det c) - 1| "
           << fmt(ratio);
  return o;
}

std::vector<Mat6> random_tuple(SplitMix64& rng, std::size_t k) {
  std::vector<Mat6> m(k);
  for (auto& x : m) {
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = i; j < 6; ++j) x(i, j) = x(j, i) = rng.gaussian();
  }
  return m;
}

Outcome criterion4() {
  Outcome o;
  SplitMix64 rng(0xC4);
  double orth = 0.0, alt = 0.0, basis = 0.0, dep = 0.0, agree = 1.0;
  for (int t = 0; t < 50; ++t) {
    auto m = random_tuple(rng, kHyperplaneDim);
    const Mat6 n = cross21(m);
    double mx = 0.0;
    for (const auto& x : m) mx = std::max(mx, frobenius_norm(x));
    for (const auto& x : m) orth = std::max(orth, std::abs(frobenius_dot(x, n)) / (mx * frobenius_norm(n)));

    const auto ns = nullspace_normal(m);
    o.require(ns.rank == static_cast<int>(kHyperplaneDim), "random tuple not rank 20");
    agree = std::min(agree, std::abs(frobenius_dot(ns.normal, n)) / (frobenius_norm(ns.normal) * frobenius_norm(n)));

    S6Basis b;
    for (auto& x : b) x = random_tuple(rng, 1).front();
    basis = std::max(basis, max_abs(cross21(m, b) - n) / max_abs(n));

    auto swapped = m;
    std::swap(swapped[t % 20], swapped[(t + 7) % 20]);
    alt = std::max(alt, max_abs(cross21(swapped) + n) / max_abs(n));

    m[19] = m[0] * 2.0 - m[t % 19] * 0.5;
    dep = std::max(dep, max_abs(cross21(m)));
  }
  o.require(orth <= 1e-10, "orthogonality");
  o.require(alt <= 1e-10, "alternation");
  o.require(dep <= 1e-10, "dependent tuple");
  o.require(basis <= 1e-9, "basis independence");
  o.require(agree >= 1.0 - 1e-10, "nullspace agreement");
  o.detail << "50 tuples: orthogonality " << fmt(orth) << ", alternation " << fmt(alt) << ", dependent "
           << fmt(dep) << ", basis change " << fmt(basis) << ", nullspace cos 1 - " << fmt(1.0 - agree);
  return o;
}

Outcome criterion5() {
  Outcome o;
  SplitMix64 rng(0xC5);
  const Stiffness c = random_stable_stiffness(rng);
  const double tol = 1e-10;
  double worst = 0.0;
  std::size_t solves = 0;
  for (std::size_t n : {9u, 17u}) {
    const Grid g = Grid::cube(n, 1.0);
    ForwardProblem p;
    p.stiffness = stiffness_field(g, [&](const Vec3&) { return c; });
    for (const auto& f : general_family(c)) {
      p.boundary = Field::sample(g, 3, [&](const Vec3& x, std::span<double> out) {
        const Vec3 v = eval_field(f, x);
        std::copy(v.begin(), v.end(), out.begin());
      });
      SolveOptions opt;
      opt.tol = tol;
      const SolveResult res = solve_dirichlet(p, opt);
      worst = std::max(worst, max_abs_diff(res.u, p.boundary) / max_abs(p.boundary.data()));
      ++solves;
    }
  }
  o.require(worst <= 10.0 * tol, "relative error above 10 cg_tol");
  o.detail << solves << " solves on 9^3 and 17^3, cg_tol 1e-10: max relative error " << fmt(worst);
  return o;
}

Outcome criterion6() {
  Outcome o;
  const std::vector<std::size_t> ns{9, 17, 33};
  std::vector<double> hs, tau, divc, tau_full, divc_full;
  for (std::size_t n : ns) {
    Scenario s = parse_scenario({{"kind", "scaled-anisotropy"},
                                 {"stiffness", {{"random_seed", 1}}},
                                 {"tau", {{"amplitude", 0.2}}},
                                 {"grid", {{"n", n}}},
                                 {"fields", {{"extra", "full"}}},
                                 {"error_margin", 0.25}});
    const Dataset d = generate_dataset(s);
    const ReconReport r = run_reconstruction(d, s);
    const Metrics m = evaluate(d, r, s);
    o.require(m.err_tau_p0 && m.err_divc_p0, "no live nodes in the interior");
    if (!m.err_tau_p0 || !m.err_divc_p0) return o;
    hs.push_back(d.grid.h);
    tau.push_back(*m.err_tau_p0);
    divc.push_back(*m.err_divc_p0);
    s.error_margin = 0.0;
    const Metrics full = evaluate(d, r, s);
    tau_full.push_back(full.err_tau_p0.value_or(std::nan("")));
    divc_full.push_back(full.err_divc_p0.value_or(std::nan("")));
  }
  const double k = slope(hs, tau);
  o.require(tau[1] < tau[0] && tau[2] < tau[1], "tau error not decreasing");
  o.require(divc[1] < divc[0] && divc[2] < divc[1], "div C error not decreasing");
  o.require(k >= 1.5, "tau slope below 1.5");
  o.detail << "h = 1/8, 1/16, 1/32, interior [0.25, 0.75]^3: tau err " << fmt(tau[0]) << ", " << fmt(tau[1]) << ", "
           << fmt(tau[2]) << " (slope " << fmt(k) << "); div C err " << fmt(divc[0]) << ", " << fmt(divc[1]) << ", "
           << fmt(divc[2]) << "; whole cube: tau " << fmt(tau_full[0]) << ", " << fmt(tau_full[1]) << ", "
           << fmt(tau_full[2]) << ", div C " << fmt(divc_full[0]) << ", " << fmt(divc_full[1]) << ", "
           << fmt(divc_full[2]);
  return o;
}

Outcome criterion7() {
  Outcome o;
  const std::vector<double> etas{1e-4, 3e-4, 1e-3, 3e-3};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::vector<double> err;
    for (double eta : etas) {
      const Scenario s = parse_scenario({{"stiffness", {{"random_seed", seed}}},
                                         {"grid", {{"n", 9}}},
                                         {"fields", {{"extra", "full"}}},
                                         {"noise", {{"eta", eta}}},
                                         {"recon", {{"method", "nullspace"}}},
                                         {"error_margin", 0.25}});
      const Dataset d = generate_dataset(s);
      const ReconReport r = run_reconstruction(d, s);
      const Metrics m = evaluate(d, r, s);
      err.push_back(m.err_ctilde_p0.value_or(std::nan("")));
    }
    bool monotone = true;
    for (std::size_t i = 1; i < err.size(); ++i) monotone = monotone && err[i] >= err[i - 1];
    const double k = slope(etas, err);
    o.require(monotone, "error not monotone in eta");
    o.require(std::abs(k - 1.0) <= 0.3, "slope outside 1.0 +- 0.3");
    o.detail << "tensor " << seed << ": " << fmt(err[0]) << ", " << fmt(err[1]) << ", " << fmt(err[2]) << ", "
             << fmt(err[3]) << " (slope " << fmt(k) << "); ";
  }
  o.detail << "9^3, 15 extra fields, interior [0.25, 0.75]^3";
  return o;
}

Outcome criterion8() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "elastrecon_acceptance_c8";
  fs::remove_all(root);
  const Scenario s = parse_scenario({{"stiffness", {{"random_seed", 1}}}, {"grid", {{"n", 9}}}});
  Dataset d = generate_dataset(s);
  d.displacements.resize(5);
  d.measurements.strains.resize(5);
  d.measurements.analytic.resize(5);
  write_dataset(d, s, root / "in");
  std::ostringstream log;
  const int code = cmd_recon(root / "in", s, root / "out", log);
  o.require(code == kExitHypothesesFailed, "exit code not 4");
  const double f2 = max_abs(read_field(root / "out" / "f2.efld").data());
  const Field mask = read_field(root / "out" / "mask.efld");
  std::size_t live = 0;
  for (double v : mask.data()) live += v == 0.0;
  double spurious = 0.0;
  for (const char* f : {"ctilde.efld", "tau.efld", "divc.efld"})
    spurious = std::max(spurious, max_abs(read_field(root / "out" / f).data()));
  o.require(f2 == 0.0, "F2 not identically zero");
  o.require(live == 0, "unmasked nodes");
  o.require(spurious == 0.0, "nonzero output values");
  o.detail << "5 fields: exit " << code << ", max F2 " << fmt(f2) << ", unmasked " << live
           << ", max output " << fmt(spurious);
  fs::remove_all(root);
  return o;
}

Outcome criterion9() {
  Outcome o;
  double methods = 0.0, taus = 0.0;
  const auto compare = [&](const Scenario& base) {
    const Dataset d = generate_dataset(base);
    const ReconReport ref = run_reconstruction(d, base);
    Scenario s = base;
    s.recon.method = NormalMethod::CrossprodSum;
    methods = std::max(methods, max_abs_diff(run_reconstruction(d, s).ctilde, ref.ctilde));
    s = base;
    s.recon.tau_method = TauMethod::Poisson;
    taus = std::max(taus, max_abs_diff(run_reconstruction(d, s).tau, ref.tau));
  };
  for (std::uint64_t k = 1; k <= kCases; ++k) {
    compare(constant_case(k));
    compare(ti_case(k));
  }
  o.require(methods <= 1e-8, "nullspace and crossprod disagree");
  o.require(taus <= 1e-6, "path and Poisson tau disagree");
  o.detail << "200 scenarios: max |ctilde_nullspace - ctilde_crossprod| " << fmt(methods)
           << ", max |tau_path - tau_poisson| " << fmt(taus);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<double, std::function<Outcome()>>> criteria{
      {60.0, criterion1}, {10.0, criterion2}, {0.0, criterion3}, {0.0, criterion4}, {0.0, criterion5},
      {300.0, criterion6}, {0.0, criterion7}, {0.0, criterion8}, {0.0, criterion9}};
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto [budget, run] = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget > 0.0 && secs > budget) {
      o.pass = false;
      o.detail << "; runtime above " << budget << " s";
    }
    all = all && o.pass;
    std::printf("criterion %zu: %s  %s [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL", o.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
