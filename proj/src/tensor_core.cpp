#include "elastrecon/tensor_core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "elastrecon/error.hpp"

namespace elastrecon {

double Sym3::operator()(std::size_t i, std::size_t j) const {
  if (i > j) std::swap(i, j);
  if (i == j) return i == 0 ? xx : (i == 1 ? yy : zz);
  if (i == 0) return j == 1 ? xy : xz;
  return yz;
}

Sym3 Sym3::from_matrix(const Mat3& m) {
  return {m(0, 0), m(1, 1), m(2, 2), 0.5 * (m(1, 2) + m(2, 1)), 0.5 * (m(0, 2) + m(2, 0)),
          0.5 * (m(0, 1) + m(1, 0))};
}

Mat3 Sym3::to_matrix() const {
  Mat3 m;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) m(i, j) = (*this)(i, j);
  return m;
}

Sym3& Sym3::operator+=(const Sym3& o) {
  xx += o.xx;
  yy += o.yy;
  zz += o.zz;
  yz += o.yz;
  xz += o.xz;
  xy += o.xy;
  return *this;
}

Sym3& Sym3::operator*=(double s) {
  xx *= s;
  yy *= s;
  zz *= s;
  yz *= s;
  xz *= s;
  xy *= s;
  return *this;
}

double contract(const Sym3& a, const Sym3& b) {
  return a.xx * b.xx + a.yy * b.yy + a.zz * b.zz + 2.0 * (a.yz * b.yz + a.xz * b.xz + a.xy * b.xy);
}

double trace(const Sym3& a) { return a.xx + a.yy + a.zz; }

int voigt_index(int i, int j) {
  if (i < 1 || i > 3 || j < 1 || j > 3)
    throw std::out_of_range("voigt_index: indices must lie in 1..3, got (" + std::to_string(i) + "," +
                            std::to_string(j) + ")");
  if (i == j) return i;
  return 9 - i - j;  // 23 -> 4, 13 -> 5, 12 -> 6
}

std::pair<std::size_t, std::size_t> voigt_pair(std::size_t slot) {
  static constexpr std::array<std::pair<std::size_t, std::size_t>, 6> kPairs{
      {{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}}};
  if (slot >= 6) throw std::out_of_range("voigt_pair: slot must lie in 0..5");
  return kPairs[slot];
}

Voigt6 strain_to_voigt(const Sym3& e) {
  return {{e.xx, e.yy, e.zz, 2.0 * e.yz, 2.0 * e.xz, 2.0 * e.xy}, VoigtConvention::Strain};
}

Sym3 voigt_to_strain(const Voigt6& v) {
  if (v.convention != VoigtConvention::Strain)
    throw std::invalid_argument("voigt_to_strain: vector is in stress convention");
  return {v[0], v[1], v[2], 0.5 * v[3], 0.5 * v[4], 0.5 * v[5]};
}

Voigt6 stress_to_voigt(const Sym3& s) {
  return {{s.xx, s.yy, s.zz, s.yz, s.xz, s.xy}, VoigtConvention::Stress};
}

Sym3 voigt_to_stress(const Voigt6& v) {
  if (v.convention != VoigtConvention::Stress)
    throw std::invalid_argument("voigt_to_stress: vector is in strain convention");
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

const std::array<std::pair<std::size_t, std::size_t>, kStiffnessComponents>& stiffness_component_pairs() {
  static const auto pairs = [] {
    std::array<std::pair<std::size_t, std::size_t>, kStiffnessComponents> p{};
    std::size_t k = 0;
    for (std::size_t a = 0; a < 6; ++a) p[k++] = {a, a};
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = a + 1; b < 6; ++b) p[k++] = {a, b};
    return p;
  }();
  return pairs;
}

Stiffness Stiffness::from_matrix(const Mat6& m) {
  double scale = 0.0;
  for (double x : m.a) scale = std::max(scale, std::abs(x));
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b)
      if (std::abs(m(a, b) - m(b, a)) > 1e-12 * scale)
        throw std::invalid_argument("Stiffness: Voigt matrix is not symmetric");
  Mat6 s = m;
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b) s(a, b) = s(b, a) = 0.5 * (m(a, b) + m(b, a));
  return Stiffness(s);
}

Stiffness Stiffness::from_components(std::span<const double> c21) {
  if (c21.size() != kStiffnessComponents)
    throw std::invalid_argument("Stiffness: expected 21 components, got " + std::to_string(c21.size()));
  Mat6 m;
  const auto& pairs = stiffness_component_pairs();
  for (std::size_t k = 0; k < kStiffnessComponents; ++k) {
    const auto [a, b] = pairs[k];
    m(a, b) = m(b, a) = c21[k];
  }
  return Stiffness(m);
}

Stiffness Stiffness::isotropic(double lambda, double mu) {
  Mat6 m;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) m(a, b) = lambda;
    m(a, a) = lambda + 2.0 * mu;
    m(a + 3, a + 3) = mu;
  }
  return Stiffness(m);
}

std::array<double, kStiffnessComponents> Stiffness::components() const {
  std::array<double, kStiffnessComponents> out{};
  const auto& pairs = stiffness_component_pairs();
  for (std::size_t k = 0; k < kStiffnessComponents; ++k) out[k] = c_(pairs[k].first, pairs[k].second);
  return out;
}

double Stiffness::tensor(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
  return c_(static_cast<std::size_t>(voigt_index(int(i) + 1, int(j) + 1) - 1),
            static_cast<std::size_t>(voigt_index(int(k) + 1, int(l) + 1) - 1));
}

Voigt6 apply_hooke(const Stiffness& c, const Voigt6& strain) {
  if (strain.convention != VoigtConvention::Strain)
    throw std::invalid_argument("apply_hooke: input must be in strain convention");
  return {c.matrix() * strain.v, VoigtConvention::Stress};
}

Sym3 apply_hooke(const Stiffness& c, const Sym3& strain) {
  return voigt_to_stress(apply_hooke(c, strain_to_voigt(strain)));
}

double det_v(std::span<const Vec6, 6> columns) {
  Mat6 m;
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t i = 0; i < 6; ++i) m(i, j) = columns[j][i];
  return determinant(m);
}

double det_v(std::span<const Sym3, 6> strains) {
  std::array<Vec6, 6> cols;
  for (std::size_t j = 0; j < 6; ++j) cols[j] = strain_to_voigt(strains[j]).v;
  return det_v(std::span<const Vec6, 6>(cols));
}

Mat6 mehrabadi(const Stiffness& c) {
  static constexpr double kSqrt2 = 1.41421356237309504880;
  Mat6 out;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      const int chi = (i >= 3 ? 1 : 0) + (j >= 3 ? 1 : 0);
      const double f = chi == 0 ? 1.0 : (chi == 1 ? kSqrt2 : 2.0);
      out(i, j) = f * c(i, j);
    }
  return out;
}

Vec6 eigenvalues_sym6(const Mat6& input) {
  constexpr int kMaxSweeps = 50;
  Mat6 a = input;
  const double norm = frobenius_norm(a);
  auto off_norm = [&a] {
    double s = 0.0;
    for (std::size_t p = 0; p < 6; ++p)
      for (std::size_t q = 0; q < 6; ++q)
        if (p != q) s += a(p, q) * a(p, q);
    return std::sqrt(s);
  };

  int sweep = 0;
  double off = off_norm();
  while (off > 1e-12 * norm) {
    if (sweep == kMaxSweeps)
      throw ConvergenceError("eigenvalues_sym6: Jacobi iteration did not converge", sweep, off);
    ++sweep;
    for (std::size_t p = 0; p < 5; ++p) {
      for (std::size_t q = p + 1; q < 6; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < 6; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < 6; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
      }
    }
    off = off_norm();
  }

  Vec6 eig;
  for (std::size_t i = 0; i < 6; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

double min_eig_sym6(const Mat6& a) { return eigenvalues_sym6(a)[0]; }

StabilityReport stability_check(const Stiffness& c) {
  StabilityReport r;
  r.lambda_min = min_eig_sym6(mehrabadi(c));
  r.kappa_eff = 0.5 * r.lambda_min;
  r.is_stable = r.kappa_eff > 0.0;
  r.det_lower_bound = std::pow(r.lambda_min, 6) / 8.0;
  return r;
}

}  // namespace elastrecon
