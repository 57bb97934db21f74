#include "nlfs/field.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nlfs/errors.hpp"

namespace nlfs {

namespace {

void require_same_grid(const Field& a, const Field& b, const char* op) {
  if (!a.same_grid(b))
    throw ConfigError(std::string(op) + ": fields live on different grids");
}

Support combine(Support a, Support b) { return a == b ? a : Support::any; }

}  // namespace

Field Field::zeros(std::shared_ptr<const GridSpec> grid) {
  if (!grid) throw ConfigError("Field: null grid");
  Field f;
  f.grid_ = std::move(grid);
  f.v_.assign(static_cast<std::size_t>(f.grid_->node_count()), 0.0);
  return f;
}

Field Field::constant(std::shared_ptr<const GridSpec> grid, double value) {
  Field f = zeros(std::move(grid));
  for (auto& v : f.v_) v = value;
  return f;
}

Field Field::from_function(std::shared_ptr<const GridSpec> grid,
                           const std::function<double(std::span<const double>)>& fn) {
  Field f = zeros(std::move(grid));
  const auto& g = *f.grid_;
  for (int node = 0; node < g.node_count(); ++node) {
    const auto x = g.coords(node);
    f.v_[static_cast<std::size_t>(node)] =
        fn(std::span<const double>(x.data(), static_cast<std::size_t>(g.dim())));
  }
  return f;
}

void Field::enforce_support() {
  if (support_ == Support::any) return;
  const auto& mask =
      support_ == Support::interior ? grid_->omega_mask() : grid_->exterior_mask();
  for (int i = 0; i < size(); ++i)
    if (!mask[static_cast<std::size_t>(i)]) v_[static_cast<std::size_t>(i)] = 0.0;
}

bool Field::supported_on(const std::vector<std::uint8_t>& mask) const {
  for (int i = 0; i < size(); ++i)
    if (!mask[static_cast<std::size_t>(i)] && v_[static_cast<std::size_t>(i)] != 0.0)
      return false;
  return true;
}

double Field::max_norm() const {
  double m = 0.0;
  for (double v : v_) m = std::max(m, std::fabs(v));
  return m;
}

void Field::check_finite(const char* where) const {
  for (double v : v_)
    if (!std::isfinite(v))
      throw InternalError(std::string(where) + ": non-finite field value");
}

Field& Field::operator+=(const Field& other) {
  require_same_grid(*this, other, "Field::operator+=");
  for (int i = 0; i < size(); ++i)
    v_[static_cast<std::size_t>(i)] += other.v_[static_cast<std::size_t>(i)];
  support_ = combine(support_, other.support_);
  return *this;
}

Field& Field::operator-=(const Field& other) {
  require_same_grid(*this, other, "Field::operator-=");
  for (int i = 0; i < size(); ++i)
    v_[static_cast<std::size_t>(i)] -= other.v_[static_cast<std::size_t>(i)];
  support_ = combine(support_, other.support_);
  return *this;
}

Field& Field::operator*=(double scale) {
  for (auto& v : v_) v *= scale;
  return *this;
}

Field& Field::axpy(double scale, const Field& other) {
  require_same_grid(*this, other, "Field::axpy");
  for (int i = 0; i < size(); ++i)
    v_[static_cast<std::size_t>(i)] += scale * other.v_[static_cast<std::size_t>(i)];
  support_ = combine(support_, other.support_);
  return *this;
}

Field hadamard(const Field& a, const Field& b) {
  require_same_grid(a, b, "hadamard");
  Field out = a;
  for (int i = 0; i < out.size(); ++i) out[i] *= b[i];
  if (a.support() == Support::interior || b.support() == Support::interior)
    out.set_support(Support::interior);
  else if (a.support() == Support::exterior || b.support() == Support::exterior)
    out.set_support(Support::exterior);
  return out;
}

Field masked(const Field& a, const std::vector<std::uint8_t>& mask) {
  if (static_cast<int>(mask.size()) != a.size())
    throw ConfigError("masked: mask size mismatch");
  Field out = a;
  for (int i = 0; i < out.size(); ++i)
    if (!mask[static_cast<std::size_t>(i)]) out[i] = 0.0;
  out.set_support(Support::any);
  return out;
}

double inner_product(const Field& u, const Field& v, const std::vector<std::uint8_t>& mask) {
  require_same_grid(u, v, "inner_product");
  if (static_cast<int>(mask.size()) != u.size())
    throw ConfigError("inner_product: mask size mismatch");
  double s = 0.0;
  for (int i = 0; i < u.size(); ++i)
    if (mask[static_cast<std::size_t>(i)]) s += u[i] * v[i];
  return s * u.grid()->quad_weight();
}

double l2_norm(const Field& u, const std::vector<std::uint8_t>& mask) {
  return std::sqrt(inner_product(u, u, mask));
}

}  // namespace nlfs
