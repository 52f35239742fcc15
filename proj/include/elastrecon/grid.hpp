#pragma once

// Uniform node grids on a box and node-sampled fields.

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "elastrecon/dense.hpp"

namespace elastrecon {

struct Grid {
  std::array<std::size_t, 3> dims{3, 3, 3};
  double h = 0.5;
  Vec3 origin{};

  /// n nodes per axis spanning [0, length]^3.
  static Grid cube(std::size_t n, double length = 1.0);

  std::size_t nodes() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return i + dims[0] * (j + dims[1] * k); }
  std::array<std::size_t, 3> ijk(std::size_t node) const;
  Vec3 point(std::size_t i, std::size_t j, std::size_t k) const;
  Vec3 point(std::size_t node) const;
  bool on_boundary(std::size_t node) const;
  /// Node stride along an axis.
  std::size_t stride(std::size_t axis) const { return axis == 0 ? 1 : (axis == 1 ? dims[0] : dims[0] * dims[1]); }

  /// Throws std::invalid_argument unless every axis has >= 3 nodes and h > 0.
  void validate() const;

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Node-major samples with `components` reals per node, x index fastest.
class Field {
 public:
  Field() = default;
  Field(const Grid& grid, std::size_t components);

  const Grid& grid() const { return grid_; }
  std::size_t components() const { return components_; }
  std::span<double> at(std::size_t node) { return {data_.data() + node * components_, components_}; }
  std::span<const double> at(std::size_t node) const { return {data_.data() + node * components_, components_}; }
  double& operator()(std::size_t node, std::size_t c) { return data_[node * components_ + c]; }
  double operator()(std::size_t node, std::size_t c) const { return data_[node * components_ + c]; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  /// Evaluates fn(x, out) at every node.
  static Field sample(const Grid& grid, std::size_t components,
                      const std::function<void(const Vec3&, std::span<double>)>& fn);

 private:
  Grid grid_;
  std::size_t components_ = 0;
  std::vector<double> data_;
};

/// Derivative along `axis` of every component. Order 2: central differences
/// inside, three-point one-sided at the ends. Order 4: five-point central
/// inside, five-point one-sided on the two outermost layers (falls back to
/// order 2 on axes with fewer than 5 nodes).
Field derivative(const Field& f, std::size_t axis, int order = 2);

/// Runs body(begin, end) over [0, n) split into contiguous chunks.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace elastrecon
