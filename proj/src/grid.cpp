#include "elastrecon/grid.hpp"

#include <algorithm>
#include <stdexcept>
#include <thread>

namespace elastrecon {

Grid Grid::cube(std::size_t n, double length) {
  Grid g;
  g.dims = {n, n, n};
  g.h = n > 1 ? length / static_cast<double>(n - 1) : length;
  return g;
}

std::array<std::size_t, 3> Grid::ijk(std::size_t node) const {
  return {node % dims[0], (node / dims[0]) % dims[1], node / (dims[0] * dims[1])};
}

Vec3 Grid::point(std::size_t i, std::size_t j, std::size_t k) const {
  return {origin[0] + h * static_cast<double>(i), origin[1] + h * static_cast<double>(j),
          origin[2] + h * static_cast<double>(k)};
}

Vec3 Grid::point(std::size_t node) const {
  const auto p = ijk(node);
  return point(p[0], p[1], p[2]);
}

bool Grid::on_boundary(std::size_t node) const {
  const auto p = ijk(node);
  for (std::size_t a = 0; a < 3; ++a)
    if (p[a] == 0 || p[a] + 1 == dims[a]) return true;
  return false;
}

void Grid::validate() const {
  for (auto n : dims)
    if (n < 3) throw std::invalid_argument("grid: every axis needs at least 3 nodes");
  if (!(h > 0.0)) throw std::invalid_argument("grid: spacing must be positive");
}

Field::Field(const Grid& grid, std::size_t components)
    : grid_(grid), components_(components), data_(grid.nodes() * components, 0.0) {}

Field Field::sample(const Grid& grid, std::size_t components,
                    const std::function<void(const Vec3&, std::span<double>)>& fn) {
  Field f(grid, components);
  for (std::size_t n = 0; n < grid.nodes(); ++n) fn(grid.point(n), f.at(n));
  return f;
}

namespace {

// Weights over nodes 0..4 for the derivative at node 0 and node 1, in units of 1/h.
constexpr std::array<double, 3> kEdge2 = {-1.5, 2.0, -0.5};
constexpr std::array<double, 5> kEdge4At0 = {-25.0 / 12, 48.0 / 12, -36.0 / 12, 16.0 / 12, -3.0 / 12};
constexpr std::array<double, 5> kEdge4At1 = {-3.0 / 12, -10.0 / 12, 18.0 / 12, -6.0 / 12, 1.0 / 12};

}  // namespace

Field derivative(const Field& f, std::size_t axis, int order) {
  if (axis > 2) throw std::out_of_range("derivative: axis must be 0, 1 or 2");
  if (order != 2 && order != 4) throw std::invalid_argument("derivative: order must be 2 or 4");
  const Grid& g = f.grid();
  const std::size_t n = g.dims[axis];
  if (n < 3) throw std::invalid_argument("derivative: need at least 3 nodes along the axis");
  if (n < 5) order = 2;
  const std::size_t nc = f.components();
  const std::size_t s = g.stride(axis) * nc;
  const double inv_h = 1.0 / g.h;
  Field out(g, nc);
  const double* src = f.data().data();
  double* dst = out.data().data();

  for (std::size_t node = 0; node < g.nodes(); ++node) {
    const std::size_t pos = g.ijk(node)[axis];
    const double* p = src + node * nc;
    double* q = dst + node * nc;
    // sgn = -1 mirrors a forward stencil into a backward one.
    auto apply = [&](std::span<const double> w, std::ptrdiff_t start, double sgn) {
      const std::ptrdiff_t dir = sgn > 0.0 ? 1 : -1;
      const auto stride = static_cast<std::ptrdiff_t>(s);
      for (std::size_t c = 0; c < nc; ++c) {
        double acc = 0.0;
        for (std::size_t m = 0; m < w.size(); ++m)
          acc += w[m] * p[static_cast<std::ptrdiff_t>(c) + dir * (start + static_cast<std::ptrdiff_t>(m)) * stride];
        q[c] = sgn * acc * inv_h;
      }
    };
    if (order == 2) {
      if (pos == 0) {
        apply(kEdge2, 0, 1.0);
      } else if (pos + 1 == n) {
        apply(kEdge2, 0, -1.0);
      } else {
        for (std::size_t c = 0; c < nc; ++c) q[c] = 0.5 * (p[c + s] - p[c - s]) * inv_h;
      }
    } else {
      if (pos == 0) {
        apply(kEdge4At0, 0, 1.0);
      } else if (pos == 1) {
        apply(kEdge4At1, -1, 1.0);
      } else if (pos + 1 == n) {
        apply(kEdge4At0, 0, -1.0);
      } else if (pos + 2 == n) {
        apply(kEdge4At1, -1, -1.0);
      } else {
        for (std::size_t c = 0; c < nc; ++c)
          q[c] = (p[c - 2 * s] - 8.0 * p[c - s] + 8.0 * p[c + s] - p[c + 2 * s]) * (inv_h / 12.0);
      }
    }
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back(body, b, e);
  }
  for (auto& th : pool) th.join();
}

}  // namespace elastrecon
