#include "nlfs/grid.hpp"

#include <cmath>

#include "nlfs/errors.hpp"

namespace nlfs {

RegionSpec RegionSpec::box1d(double a, double b) {
  RegionSpec r;
  r.kind = Kind::box;
  r.lo = {a, 0.0};
  r.hi = {b, 0.0};
  return r;
}

RegionSpec RegionSpec::box2d(double ax, double bx, double ay, double by) {
  RegionSpec r;
  r.kind = Kind::box;
  r.lo = {ax, ay};
  r.hi = {bx, by};
  return r;
}

RegionSpec RegionSpec::ball(std::array<double, 2> center, double radius) {
  RegionSpec r;
  r.kind = Kind::ball;
  r.center = center;
  r.radius = radius;
  return r;
}

bool RegionSpec::contains(std::span<const double> x, int dim) const {
  if (kind == Kind::box) {
    for (int d = 0; d < dim; ++d)
      if (!(x[static_cast<std::size_t>(d)] > lo[static_cast<std::size_t>(d)] &&
            x[static_cast<std::size_t>(d)] < hi[static_cast<std::size_t>(d)]))
        return false;
    return true;
  }
  double r2 = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double t = x[static_cast<std::size_t>(d)] - center[static_cast<std::size_t>(d)];
    r2 += t * t;
  }
  return r2 < radius * radius;
}

int GridSpec::index(int i, int j) const {
  if (dim_ == 1) return i;
  return i * n_ + j;
}

std::array<double, 2> GridSpec::coords(int node) const {
  const double h = spacing();
  if (dim_ == 1) return {node * h, 0.0};
  return {(node / n_) * h, (node % n_) * h};
}

std::array<int, 2> GridSpec::lattice(int node) const {
  if (dim_ == 1) return {node, 0};
  return {node / n_, node % n_};
}

namespace {

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// Distance from region to the faces of [0, L]^dim must exceed the buffer.
void check_buffer(const RegionSpec& omega, int dim, double length, double margin) {
  double lo_gap = 1e300, hi_gap = 1e300;
  for (int d = 0; d < dim; ++d) {
    const auto sd = static_cast<std::size_t>(d);
    if (omega.kind == RegionSpec::Kind::box) {
      lo_gap = std::min(lo_gap, omega.lo[sd]);
      hi_gap = std::min(hi_gap, length - omega.hi[sd]);
    } else {
      lo_gap = std::min(lo_gap, omega.center[sd] - omega.radius);
      hi_gap = std::min(hi_gap, length - (omega.center[sd] + omega.radius));
    }
  }
  if (lo_gap < margin || hi_gap < margin)
    throw ConfigError("build_grid: omega reaches into the periodic wrap buffer");
}

}  // namespace

std::shared_ptr<const GridSpec> build_grid(int dim, int points_per_dim, double box_length,
                                           const GridRegions& regions, int buffer_nodes) {
  if (dim != 1 && dim != 2) throw ConfigError("build_grid: dim must be 1 or 2");
  if (!power_of_two(points_per_dim) || points_per_dim < 8)
    throw ConfigError("build_grid: points_per_dim must be a power of two >= 8");
  if (!(box_length > 0.0)) throw ConfigError("build_grid: box_length must be positive");
  if (buffer_nodes < 1) throw ConfigError("build_grid: buffer_nodes must be >= 1");

  auto grid = std::shared_ptr<GridSpec>(new GridSpec());
  grid->dim_ = dim;
  grid->n_ = points_per_dim;
  grid->length_ = box_length;
  grid->total_ = dim == 1 ? points_per_dim : points_per_dim * points_per_dim;
  const double h = box_length / points_per_dim;
  grid->quad_weight_ = dim == 1 ? h : h * h;
  grid->buffer_nodes_ = buffer_nodes;
  grid->regions_ = regions;

  check_buffer(regions.omega, dim, box_length, buffer_nodes * h);

  const int total = grid->total_;
  grid->omega_.assign(static_cast<std::size_t>(total), 0);
  grid->exterior_.assign(static_cast<std::size_t>(total), 0);
  grid->w1_.assign(static_cast<std::size_t>(total), 0);
  grid->w2_.assign(static_cast<std::size_t>(total), 0);
  grid->full_.assign(static_cast<std::size_t>(total), 1);

  for (int node = 0; node < total; ++node) {
    const auto x = grid->coords(node);
    const std::span<const double> xs(x.data(), static_cast<std::size_t>(dim));
    const bool in_omega = regions.omega.contains(xs, dim);
    grid->omega_[static_cast<std::size_t>(node)] = in_omega ? 1 : 0;
    grid->exterior_[static_cast<std::size_t>(node)] = in_omega ? 0 : 1;
    if (in_omega) grid->omega_nodes_.push_back(node);
    if (regions.w1 && regions.w1->contains(xs, dim)) {
      if (in_omega) throw ConfigError("build_grid: w1 overlaps omega");
      grid->w1_[static_cast<std::size_t>(node)] = 1;
    }
    if (regions.w2 && regions.w2->contains(xs, dim)) {
      if (in_omega) throw ConfigError("build_grid: w2 overlaps omega");
      grid->w2_[static_cast<std::size_t>(node)] = 1;
    }
  }

  if (grid->omega_nodes_.empty()) throw ConfigError("build_grid: omega contains no nodes");
  if (static_cast<int>(grid->omega_nodes_.size()) == total)
    throw ConfigError("build_grid: exterior contains no nodes");
  if (regions.w1) {
    bool any = false;
    for (auto v : grid->w1_) any = any || v;
    if (!any) throw ConfigError("build_grid: w1 contains no nodes");
  }
  if (regions.w2) {
    bool any = false;
    for (auto v : grid->w2_) any = any || v;
    if (!any) throw ConfigError("build_grid: w2 contains no nodes");
  }
  return grid;
}

}  // namespace nlfs
