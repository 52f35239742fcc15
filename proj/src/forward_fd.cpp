#include "elastrecon/forward_fd.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "elastrecon/error.hpp"

namespace elastrecon {

Field stiffness_field(const Grid& grid, const std::function<Stiffness(const Vec3&)>& fn) {
  return Field::sample(grid, kStiffnessComponents, [&](const Vec3& x, std::span<double> out) {
    const auto c = fn(x).components();
    std::copy(c.begin(), c.end(), out.begin());
  });
}

Stiffness stiffness_at(const Field& c21, std::size_t node) { return Stiffness::from_components(c21.at(node)); }

void ForwardProblem::validate() const {
  if (stiffness.components() != kStiffnessComponents) throw std::invalid_argument("forward problem: stiffness needs 21 components");
  if (boundary.components() != 3) throw std::invalid_argument("forward problem: boundary data needs 3 components");
  if (!(stiffness.grid() == boundary.grid())) throw std::invalid_argument("forward problem: grid mismatch");
  stiffness.grid().validate();
  for (std::size_t n = 0; n < stiffness.grid().nodes(); ++n) {
    const auto rep = stability_check(stiffness_at(stiffness, n));
    if (!rep.is_stable) {
      std::ostringstream os;
      os << "forward problem: stiffness unstable at node " << n << " (lambda_min(c') = " << rep.lambda_min << ")";
      throw std::invalid_argument(os.str());
    }
  }
}

namespace {

// Per node, the nine 3x3 blocks K^{il}_{jk} = C_ijkl, block (i,l) at 9*(3i+l).
class ElasticOperator {
 public:
  explicit ElasticOperator(const Field& c21) : g_(c21.grid()), k_(c21.grid().nodes() * 81) {
    std::array<std::array<std::size_t, 3>, 3> slot{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) slot[i][j] = static_cast<std::size_t>(voigt_index(i + 1, j + 1) - 1);
    for (std::size_t n = 0; n < g_.nodes(); ++n) {
      const Stiffness c = stiffness_at(c21, n);
      double* kn = k_.data() + 81 * n;
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t l = 0; l < 3; ++l)
          for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 3; ++k) kn[9 * (3 * i + l) + 3 * j + k] = c(slot[i][j], slot[k][l]);
    }
  }

  // out = A u at interior nodes in [begin, end); boundary entries set to 0.
  void apply(const double* u, double* out, std::size_t begin, std::size_t end) const {
    const double ih2 = 1.0 / (g_.h * g_.h);
    const double iq = 0.25 * ih2;
    for (std::size_t n = begin; n < end; ++n) {
      double* o = out + 3 * n;
      if (g_.on_boundary(n)) {
        o[0] = o[1] = o[2] = 0.0;
        continue;
      }
      double acc[3] = {0.0, 0.0, 0.0};
      const double* u0 = u + 3 * n;
      for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t si = g_.stride(i);
        const double* kp = k_.data() + 81 * (n + si) + 9 * (4 * i);
        const double* k0 = k_.data() + 81 * n + 9 * (4 * i);
        const double* km = k_.data() + 81 * (n - si) + 9 * (4 * i);
        const double* up = u + 3 * (n + si);
        const double* um = u + 3 * (n - si);
        for (std::size_t j = 0; j < 3; ++j)
          for (std::size_t k = 0; k < 3; ++k) {
            const double cp = 0.5 * (kp[3 * j + k] + k0[3 * j + k]);
            const double cm = 0.5 * (km[3 * j + k] + k0[3 * j + k]);
            acc[j] += ih2 * (cp * (up[k] - u0[k]) - cm * (u0[k] - um[k]));
          }
        for (std::size_t l = 0; l < 3; ++l) {
          if (l == i) continue;
          const std::size_t sl = g_.stride(l);
          const double* kpi = k_.data() + 81 * (n + si) + 9 * (3 * i + l);
          const double* kmi = k_.data() + 81 * (n - si) + 9 * (3 * i + l);
          const double* upp = u + 3 * (n + si + sl);
          const double* upm = u + 3 * (n + si - sl);
          const double* ump = u + 3 * (n - si + sl);
          const double* umm = u + 3 * (n - si - sl);
          for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 3; ++k)
              acc[j] += iq * (kpi[3 * j + k] * (upp[k] - upm[k]) - kmi[3 * j + k] * (ump[k] - umm[k]));
        }
      }
      o[0] = acc[0];
      o[1] = acc[1];
      o[2] = acc[2];
    }
  }

  void apply(const std::vector<double>& u, std::vector<double>& out, std::size_t threads) const {
    parallel_for(g_.nodes(), threads, [&](std::size_t b, std::size_t e) { apply(u.data(), out.data(), b, e); });
  }

 private:
  Grid g_;
  std::vector<double> k_;
};

void check_same_grid(const ForwardProblem& p, const Field& u) {
  if (u.components() != 3) throw std::invalid_argument("displacement field needs 3 components");
  if (!(u.grid() == p.stiffness.grid())) throw std::invalid_argument("displacement grid does not match the stiffness grid");
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Field assemble_apply(const ForwardProblem& p, const Field& u) {
  check_same_grid(p, u);
  if (p.stiffness.components() != kStiffnessComponents) throw std::invalid_argument("stiffness needs 21 components");
  const ElasticOperator op(p.stiffness);
  Field out(u.grid(), 3);
  op.apply(u.data(), out.data(), 1);
  return out;
}

SolveResult solve_dirichlet(const ForwardProblem& p, const SolveOptions& opt) {
  p.validate();
  const Grid& g = p.stiffness.grid();
  const ElasticOperator op(p.stiffness);
  const std::size_t len = 3 * g.nodes();
  std::vector<bool> interior(g.nodes());
  std::size_t unknowns = 0;
  for (std::size_t n = 0; n < g.nodes(); ++n) {
    interior[n] = !g.on_boundary(n);
    if (interior[n]) unknowns += 3;
  }
  const std::size_t max_iter =
      opt.max_iter ? opt.max_iter : static_cast<std::size_t>(20.0 * std::sqrt(static_cast<double>(unknowns)));

  // K = -A on interior unknowns; b = A applied to the boundary data alone.
  std::vector<double> gb(len, 0.0), b(len), x(len, 0.0), r(len), pdir(len), kp(len);
  for (std::size_t n = 0; n < g.nodes(); ++n)
    if (!interior[n])
      for (int c = 0; c < 3; ++c) gb[3 * n + c] = p.boundary(n, c);
  op.apply(gb, b, opt.threads);
  if (opt.initial_guess) {
    check_same_grid(p, *opt.initial_guess);
    for (std::size_t n = 0; n < g.nodes(); ++n)
      if (interior[n])
        for (int c = 0; c < 3; ++c) x[3 * n + c] = (*opt.initial_guess)(n, c);
  }
  op.apply(x, r, opt.threads);
  for (std::size_t i = 0; i < len; ++i) r[i] += b[i];  // r = b - Kx = b + Ax

  SolveResult res;
  const double bnorm = std::sqrt(dot(b, b));
  double rr = dot(r, r);
  auto finish = [&] {
    res.u = Field(g, 3);
    for (std::size_t n = 0; n < g.nodes(); ++n)
      for (int c = 0; c < 3; ++c) res.u(n, c) = interior[n] ? x[3 * n + c] : p.boundary(n, c);
    return res;
  };
  auto report = [&](std::size_t it) {
    res.iterations = it;
    res.relative_residual = bnorm > 0.0 ? std::sqrt(rr) / bnorm : std::sqrt(rr);
    if (opt.on_iteration) {
      double e = 0.0;  // Kx = b - r
      for (std::size_t i = 0; i < len; ++i) e -= 0.5 * x[i] * (b[i] + r[i]);
      opt.on_iteration({it, res.relative_residual, e});
    }
  };
  const double target = opt.tol * bnorm;
  report(0);
  if (bnorm == 0.0 && rr == 0.0) return finish();
  if (std::sqrt(rr) <= target) return finish();

  pdir = r;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    op.apply(pdir, kp, opt.threads);
    for (auto& v : kp) v = -v;
    const double pkp = dot(pdir, kp);
    if (!(pkp > 0.0)) throw ConvergenceError("solve_dirichlet: operator lost positive definiteness", static_cast<int>(it), res.relative_residual);
    const double alpha = rr / pkp;
    for (std::size_t i = 0; i < len; ++i) {
      x[i] += alpha * pdir[i];
      r[i] -= alpha * kp[i];
    }
    const double rr_new = dot(r, r);
    const double beta = rr_new / rr;
    rr = rr_new;
    report(it);
    if (std::sqrt(rr) <= target) return finish();
    for (std::size_t i = 0; i < len; ++i) pdir[i] = r[i] + beta * pdir[i];
  }
  std::ostringstream os;
  os << "solve_dirichlet: no convergence in " << max_iter << " iterations (relative residual " << res.relative_residual << ")";
  throw ConvergenceError(os.str(), static_cast<int>(max_iter), res.relative_residual);
}

Field strain_of(const Field& u, int order) {
  if (u.components() != 3) throw std::invalid_argument("strain_of: displacement needs 3 components");
  const Field d[3] = {derivative(u, 0, order), derivative(u, 1, order), derivative(u, 2, order)};
  Field eps(u.grid(), 6);
  for (std::size_t n = 0; n < u.grid().nodes(); ++n) {
    // g(a, c) = d u_c / d x_a
    auto g = [&](std::size_t a, std::size_t c) { return d[a](n, c); };
    eps(n, 0) = g(0, 0);
    eps(n, 1) = g(1, 1);
    eps(n, 2) = g(2, 2);
    eps(n, 3) = g(2, 1) + g(1, 2);
    eps(n, 4) = g(2, 0) + g(0, 2);
    eps(n, 5) = g(1, 0) + g(0, 1);
  }
  return eps;
}

}  // namespace elastrecon
