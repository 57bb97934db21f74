#include "nlfs/shapes.hpp"

#include <cmath>

#include "nlfs/errors.hpp"

namespace nlfs {

namespace {

double cos_power(double t, int power) {
  // t in [-1, 1] mapped through cos^power(pi t / 2); clamped outside.
  if (t <= -1.0 || t >= 1.0) return 0.0;
  return std::pow(std::cos(0.5 * M_PI * t), power);
}

}  // namespace

Field sample_bump(std::shared_ptr<const GridSpec> grid, const BumpSpec& spec) {
  if (!(spec.radius > 0.0)) throw ConfigError("sample_bump: radius must be positive");
  if (spec.power < 2) throw ConfigError("sample_bump: power must be >= 2");
  Field f = Field::zeros(std::move(grid));
  const auto& g = *f.grid();
  for (int node = 0; node < g.node_count(); ++node) {
    const auto x = g.coords(node);
    double val = spec.amplitude;
    for (int d = 0; d < g.dim(); ++d) {
      const auto sd = static_cast<std::size_t>(d);
      val *= cos_power((x[sd] - spec.center[sd]) / spec.radius, spec.power);
    }
    f[node] = val;
  }
  return f;
}

std::vector<BumpSpec> window_bump_lattice(const GridSpec& grid,
                                          const std::array<double, 2>& lo,
                                          const std::array<double, 2>& hi, int per_axis,
                                          double radius, int power, double amplitude) {
  if (per_axis < 1) throw ConfigError("window_bump_lattice: per_axis must be >= 1");
  if (!(radius > 0.0)) throw ConfigError("window_bump_lattice: radius must be positive");
  for (int d = 0; d < grid.dim(); ++d) {
    const auto sd = static_cast<std::size_t>(d);
    if (hi[sd] - lo[sd] <= 2.0 * radius)
      throw ConfigError("window_bump_lattice: window too narrow for bump radius");
  }
  std::vector<std::array<double, 2>> centers;
  auto axis_centers = [&](int d) {
    const auto sd = static_cast<std::size_t>(d);
    std::vector<double> cs;
    const double a = lo[sd] + radius, b = hi[sd] - radius;
    for (int i = 0; i < per_axis; ++i)
      cs.push_back(per_axis == 1 ? 0.5 * (a + b)
                                 : a + (b - a) * i / (per_axis - 1.0));
    return cs;
  };
  const auto cx = axis_centers(0);
  if (grid.dim() == 1) {
    for (double c : cx) centers.push_back({c, 0.0});
  } else {
    const auto cy = axis_centers(1);
    for (double x : cx)
      for (double y : cy) centers.push_back({x, y});
  }
  std::vector<BumpSpec> specs;
  for (const auto& c : centers) {
    BumpSpec s;
    s.center = c;
    s.radius = radius;
    s.amplitude = amplitude;
    s.power = power;
    specs.push_back(s);
  }
  return specs;
}

Field plateau_field(std::shared_ptr<const GridSpec> grid, const std::array<double, 2>& lo,
                    const std::array<double, 2>& hi, double transition, int power) {
  if (!(transition > 0.0)) throw ConfigError("plateau_field: transition must be positive");
  if (power < 2) throw ConfigError("plateau_field: power must be >= 2");
  Field f = Field::zeros(std::move(grid));
  const auto& g = *f.grid();
  for (int node = 0; node < g.node_count(); ++node) {
    const auto x = g.coords(node);
    double val = 1.0;
    for (int d = 0; d < g.dim(); ++d) {
      const auto sd = static_cast<std::size_t>(d);
      const double xi = x[sd];
      double axis;
      if (xi >= lo[sd] && xi <= hi[sd]) {
        axis = 1.0;
      } else if (xi < lo[sd]) {
        axis = cos_power((lo[sd] - xi) / transition, power);
      } else {
        axis = cos_power((xi - hi[sd]) / transition, power);
      }
      val *= axis;
    }
    f[node] = val;
  }
  return f;
}

Field monomial_field(std::shared_ptr<const GridSpec> grid, const MultiIndex& tau,
                     const std::array<double, 2>& center) {
  Field f = Field::zeros(std::move(grid));
  const auto& g = *f.grid();
  if (tau.size() != g.dim())
    throw ConfigError("monomial_field: tau length must equal grid dim");
  for (int node = 0; node < g.node_count(); ++node) {
    const auto x = g.coords(node);
    double val = 1.0;
    for (int d = 0; d < g.dim(); ++d) {
      const auto sd = static_cast<std::size_t>(d);
      for (int r = 0; r < tau[d]; ++r) val *= x[sd] - center[sd];
    }
    f[node] = val;
  }
  return f;
}

Field monomial_derivative_field(std::shared_ptr<const GridSpec> grid,
                                const MultiIndex& tau, const MultiIndex& sigma,
                                const std::array<double, 2>& center) {
  if (tau.size() != sigma.size())
    throw ConfigError("monomial_derivative_field: index length mismatch");
  for (int d = 0; d < tau.size(); ++d)
    if (sigma[d] > tau[d]) return Field::zeros(std::move(grid));
  std::vector<int> rem(static_cast<std::size_t>(tau.size()));
  double factor = 1.0;
  for (int d = 0; d < tau.size(); ++d) {
    rem[static_cast<std::size_t>(d)] = tau[d] - sigma[d];
    for (int r = tau[d]; r > tau[d] - sigma[d]; --r) factor *= r;
  }
  Field f = monomial_field(std::move(grid), MultiIndex(std::move(rem)), center);
  return factor * f;
}

}  // namespace nlfs
