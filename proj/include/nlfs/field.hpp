#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "nlfs/grid.hpp"

namespace nlfs {

/// Support tag carried by a Field. `interior` promises the values vanish on
/// the exterior mask, `exterior` the reverse; `any` promises nothing. Tags
/// are bookkeeping for callers; enforce_support() makes them literal.
enum class Support { any, interior, exterior };

/// Real scalar function sampled on the nodes of a shared GridSpec.
class Field {
 public:
  Field() = default;

  static Field zeros(std::shared_ptr<const GridSpec> grid);
  static Field constant(std::shared_ptr<const GridSpec> grid, double value);
  static Field from_function(std::shared_ptr<const GridSpec> grid,
                             const std::function<double(std::span<const double>)>& fn);

  const std::shared_ptr<const GridSpec>& grid() const { return grid_; }
  int size() const { return static_cast<int>(v_.size()); }
  bool empty() const { return v_.empty(); }

  double operator[](int node) const { return v_[static_cast<std::size_t>(node)]; }
  double& operator[](int node) { return v_[static_cast<std::size_t>(node)]; }
  std::span<const double> values() const { return v_; }
  std::span<double> values() { return v_; }

  Support support() const { return support_; }
  Field& set_support(Support s) {
    support_ = s;
    return *this;
  }
  /// Zeroes every node outside the tagged support; no-op for `any`.
  void enforce_support();
  /// True if the field vanishes identically on nodes where mask == 0.
  bool supported_on(const std::vector<std::uint8_t>& mask) const;

  double max_norm() const;
  /// Throws InternalError naming `where` if any value is NaN or infinite.
  void check_finite(const char* where) const;

  bool same_grid(const Field& other) const { return grid_.get() == other.grid_.get(); }

  Field& operator+=(const Field& other);
  Field& operator-=(const Field& other);
  Field& operator*=(double scale);
  /// this += scale * other.
  Field& axpy(double scale, const Field& other);

  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }
  friend Field operator*(double s, Field a) { return a *= s; }
  friend Field operator*(Field a, double s) { return a *= s; }
  friend Field operator-(Field a) { return a *= -1.0; }

 private:
  std::shared_ptr<const GridSpec> grid_;
  std::vector<double> v_;
  Support support_ = Support::any;
};

/// Pointwise product; support tags combine (interior wins over any).
Field hadamard(const Field& a, const Field& b);
/// Copy of `a` zeroed outside `mask`.
Field masked(const Field& a, const std::vector<std::uint8_t>& mask);

/// Trapezoid quadrature of u * v over nodes selected by mask:
/// (L/N)^dim * sum_{mask} u_i v_i.
double inner_product(const Field& u, const Field& v, const std::vector<std::uint8_t>& mask);
/// sqrt(inner_product(u, u, mask)).
double l2_norm(const Field& u, const std::vector<std::uint8_t>& mask);

}  // namespace nlfs
