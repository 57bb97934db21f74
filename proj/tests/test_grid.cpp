#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nlfs/errors.hpp"
#include "nlfs/grid.hpp"
#include "test_helpers.hpp"

using namespace nlfs;

TEST_CASE("1d reference geometry: node counts against a direct scan") {
  const auto grid = nlfs_test::grid1d(128);
  CHECK(grid->dim() == 1);
  CHECK(grid->node_count() == 128);
  CHECK(grid->spacing() == doctest::Approx(2.0 * M_PI / 128).epsilon(1e-15));
  CHECK(grid->quad_weight() == doctest::Approx(grid->spacing()).epsilon(1e-15));

  // Oracle: count nodes strictly inside each interval by scanning x = i h.
  const double h = 2.0 * M_PI / 128;
  int omega = 0, w1 = 0, w2 = 0;
  for (int i = 0; i < 128; ++i) {
    const double x = i * h;
    if (x > 2.0 && x < 4.0) ++omega;
    if (x > 0.7 && x < 1.7) ++w1;
    if (x > 4.3 && x < 5.3) ++w2;
  }
  CHECK(static_cast<int>(grid->omega_nodes().size()) == omega);
  int m1 = 0, m2 = 0, mo = 0;
  for (int i = 0; i < grid->node_count(); ++i) {
    mo += grid->omega_mask()[static_cast<std::size_t>(i)];
    m1 += grid->w1_mask()[static_cast<std::size_t>(i)];
    m2 += grid->w2_mask()[static_cast<std::size_t>(i)];
  }
  CHECK(mo == omega);
  CHECK(m1 == w1);
  CHECK(m2 == w2);
}

TEST_CASE("masks partition the grid and windows sit in the exterior") {
  for (const auto& grid : {nlfs_test::grid1d(64), nlfs_test::grid2d(32)}) {
    for (int i = 0; i < grid->node_count(); ++i) {
      const auto si = static_cast<std::size_t>(i);
      CHECK(grid->omega_mask()[si] + grid->exterior_mask()[si] == 1);
      if (grid->w1_mask()[si]) CHECK(grid->exterior_mask()[si] == 1);
      if (grid->w2_mask()[si]) CHECK(grid->exterior_mask()[si] == 1);
      CHECK(grid->full_mask()[si] == 1);
    }
    // omega_nodes ascending and consistent with the mask.
    int prev = -1, count = 0;
    for (int node : grid->omega_nodes()) {
      CHECK(node > prev);
      prev = node;
      CHECK(grid->omega_mask()[static_cast<std::size_t>(node)] == 1);
      ++count;
    }
    CHECK(count == static_cast<int>(grid->omega_nodes().size()));
  }
}

TEST_CASE("2d ball region: membership against a brute-force scan") {
  GridRegions regions;
  regions.omega = RegionSpec::ball({M_PI, M_PI}, 1.0);
  const auto grid = build_grid(2, 32, 2.0 * M_PI, regions, 2);

  const double h = 2.0 * M_PI / 32;
  int count = 0;
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) {
      const double dx = i * h - M_PI, dy = j * h - M_PI;
      if (dx * dx + dy * dy < 1.0) ++count;
    }
  CHECK(static_cast<int>(grid->omega_nodes().size()) == count);

  // Row-major flattening and coordinate round-trip.
  for (int node : grid->omega_nodes()) {
    const auto ij = grid->lattice(node);
    CHECK(grid->index(ij[0], ij[1]) == node);
    const auto x = grid->coords(node);
    CHECK(x[0] == doctest::Approx(ij[0] * h).epsilon(1e-15));
    CHECK(x[1] == doctest::Approx(ij[1] * h).epsilon(1e-15));
  }
}

TEST_CASE("geometry violations are rejected") {
  GridRegions touching;
  touching.omega = RegionSpec::box1d(0.05, 1.0);
  CHECK_THROWS_AS(build_grid(1, 64, 2.0 * M_PI, touching, 4), ConfigError);

  GridRegions overlap;
  overlap.omega = RegionSpec::box1d(2.0, 4.0);
  overlap.w1 = RegionSpec::box1d(3.5, 4.5);  // pokes into omega
  CHECK_THROWS_AS(build_grid(1, 64, 2.0 * M_PI, overlap, 4), ConfigError);

  GridRegions ok;
  ok.omega = RegionSpec::box1d(2.0, 4.0);
  CHECK_THROWS_AS(build_grid(3, 64, 2.0 * M_PI, ok, 4), ConfigError);
  CHECK_THROWS_AS(build_grid(1, 48, 2.0 * M_PI, ok, 4), ConfigError);   // not 2^k
  CHECK_THROWS_AS(build_grid(1, 4, 2.0 * M_PI, ok, 4), ConfigError);    // too small
  CHECK_THROWS_AS(build_grid(1, 64, -1.0, ok, 4), ConfigError);

  GridRegions empty;
  empty.omega = RegionSpec::box1d(2.0, 2.001);  // narrower than one spacing
  CHECK_THROWS_AS(build_grid(1, 64, 2.0 * M_PI, empty, 4), ConfigError);

  // Coincident windows are allowed (needed by symmetric pairing checks).
  GridRegions same;
  same.omega = RegionSpec::box1d(2.0, 4.0);
  same.w1 = RegionSpec::box1d(0.7, 1.7);
  same.w2 = RegionSpec::box1d(0.7, 1.7);
  const auto grid = build_grid(1, 64, 2.0 * M_PI, same, 4);
  CHECK(grid->w1_mask() == grid->w2_mask());
}
