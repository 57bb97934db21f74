#pragma once

// Shared fixtures and independent oracles for the unit suites. Oracles here
// deliberately avoid the library's own code paths: integrals are naive
// summations, transforms are O(N^2) DFTs, so agreement is evidence rather
// than tautology.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "nlfs/field.hpp"
#include "nlfs/grid.hpp"
#include "nlfs/rng.hpp"

namespace nlfs_test {

// Reference 1d geometry used across suites: box [0, 2 pi), Omega = (2, 4),
// windows on either side with a clear gap to Omega and the wrap buffer.
inline std::shared_ptr<const nlfs::GridSpec> grid1d(int n = 128) {
  nlfs::GridRegions regions;
  regions.omega = nlfs::RegionSpec::box1d(2.0, 4.0);
  regions.w1 = nlfs::RegionSpec::box1d(0.7, 1.7);
  regions.w2 = nlfs::RegionSpec::box1d(4.3, 5.3);
  return nlfs::build_grid(1, n, 2.0 * M_PI, regions, 4);
}

// 2d analogue: same per-axis intervals for Omega, windows in opposite
// exterior corners.
inline std::shared_ptr<const nlfs::GridSpec> grid2d(int n = 32) {
  nlfs::GridRegions regions;
  regions.omega = nlfs::RegionSpec::box2d(2.0, 4.0, 2.0, 4.0);
  regions.w1 = nlfs::RegionSpec::box2d(0.7, 1.7, 0.7, 1.7);
  regions.w2 = nlfs::RegionSpec::box2d(4.3, 5.3, 4.3, 5.3);
  return nlfs::build_grid(2, n, 2.0 * M_PI, regions, 2);
}

inline nlfs::Field random_field(std::shared_ptr<const nlfs::GridSpec> grid,
                                nlfs::RngStream& rng, double amplitude = 1.0) {
  auto f = nlfs::Field::zeros(std::move(grid));
  for (int i = 0; i < f.size(); ++i) f[i] = amplitude * rng.uniform(-1.0, 1.0);
  return f;
}

// Smooth random field: a real trigonometric polynomial with modes up to
// kmax per axis. Lies below Nyquist, so spectral derivatives of it are
// exact in the discrete model.
inline nlfs::Field random_trig_field(std::shared_ptr<const nlfs::GridSpec> grid,
                                     nlfs::RngStream& rng, int kmax,
                                     double amplitude = 1.0) {
  auto f = nlfs::Field::zeros(grid);
  const double base = 2.0 * M_PI / grid->box_length();
  if (grid->dim() == 1) {
    for (int k = 0; k <= kmax; ++k) {
      const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
      for (int i = 0; i < f.size(); ++i) {
        const double x = grid->coords(i)[0];
        f[i] += a * std::cos(base * k * x) + (k ? b * std::sin(base * k * x) : 0.0);
      }
    }
  } else {
    for (int kx = 0; kx <= kmax; ++kx)
      for (int ky = 0; ky <= kmax; ++ky) {
        const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
        for (int i = 0; i < f.size(); ++i) {
          const auto x = grid->coords(i);
          const double phase = base * (kx * x[0] + ky * x[1]);
          f[i] += a * std::cos(phase) + ((kx || ky) ? b * std::sin(phase) : 0.0);
        }
      }
  }
  f *= amplitude / std::max(1.0, f.max_norm());
  return f;
}

// Naive O(N^2) DFT coefficients: hat_u[k] = sum_j u_j exp(-2 pi i k j / N).
// 1d only; independent of FFTW.
inline std::vector<std::complex<double>> naive_dft_1d(const nlfs::Field& u) {
  const int n = u.size();
  std::vector<std::complex<double>> hat(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (int j = 0; j < n; ++j) {
      const double ang = -2.0 * M_PI * k * j / n;
      acc += u[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    hat[static_cast<std::size_t>(k)] = acc;
  }
  return hat;
}

inline std::vector<std::complex<double>> naive_idft_1d(
    const std::vector<std::complex<double>>& hat) {
  const int n = static_cast<int>(hat.size());
  std::vector<std::complex<double>> u(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    std::complex<double> acc(0.0, 0.0);
    for (int k = 0; k < n; ++k) {
      const double ang = 2.0 * M_PI * k * j / n;
      acc += hat[static_cast<std::size_t>(k)] *
             std::complex<double>(std::cos(ang), std::sin(ang));
    }
    u[static_cast<std::size_t>(j)] = acc / static_cast<double>(n);
  }
  return u;
}

// Long-double accumulation oracle for the masked quadrature.
inline double naive_inner_product(const nlfs::Field& u, const nlfs::Field& v,
                                  const std::vector<std::uint8_t>& mask) {
  long double acc = 0.0L;
  for (int i = 0; i < u.size(); ++i)
    if (mask[static_cast<std::size_t>(i)])
      acc += static_cast<long double>(u[i]) * static_cast<long double>(v[i]);
  return static_cast<double>(acc * static_cast<long double>(u.grid()->quad_weight()));
}

}  // namespace nlfs_test
