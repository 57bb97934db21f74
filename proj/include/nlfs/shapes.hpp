#pragma once

#include <array>
#include <vector>

#include "nlfs/field.hpp"
#include "nlfs/multiindex.hpp"

namespace nlfs {

/// Separable cosine-power bump: amplitude * prod_d cos^power(pi t_d / 2)
/// with t_d = (x_d - center_d) / radius, zero for |t_d| >= 1. power >= 2
/// gives a C^{power-1} function, which keeps high-frequency content low
/// enough for the nonlocal operator not to amplify sampling jumps.
struct BumpSpec {
  std::array<double, 2> center{};
  double radius = 0.5;
  double amplitude = 1.0;
  int power = 2;
};

Field sample_bump(std::shared_ptr<const GridSpec> grid, const BumpSpec& spec);

/// Evenly spaced bump lattice inside an axis-aligned box, insetted so every
/// bump support stays strictly inside. Returns per_axis^dim specs.
std::vector<BumpSpec> window_bump_lattice(const GridSpec& grid,
                                          const std::array<double, 2>& lo,
                                          const std::array<double, 2>& hi, int per_axis,
                                          double radius, int power = 4,
                                          double amplitude = 1.0);

/// Plateau cutoff: 1 on the core box [lo, hi], cosine-power taper to 0 over
/// `transition` on every side, 0 beyond. The taper keeps the support inside
/// [lo - transition, hi + transition].
Field plateau_field(std::shared_ptr<const GridSpec> grid, const std::array<double, 2>& lo,
                    const std::array<double, 2>& hi, double transition, int power = 4);

/// Centered monomial prod_d (x_d - center_d)^{tau_d}.
Field monomial_field(std::shared_ptr<const GridSpec> grid, const MultiIndex& tau,
                     const std::array<double, 2>& center);

/// Analytic D^sigma of the centered monomial; exactly zero when any
/// sigma_d > tau_d.
Field monomial_derivative_field(std::shared_ptr<const GridSpec> grid,
                                const MultiIndex& tau, const MultiIndex& sigma,
                                const std::array<double, 2>& center);

}  // namespace nlfs
