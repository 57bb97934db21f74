#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "nlfs/errors.hpp"
#include "nlfs/runge.hpp"
#include "nlfs/shapes.hpp"
#include "nlfs/spectral.hpp"
#include "test_helpers.hpp"

using namespace nlfs;

namespace {

std::shared_ptr<const GridSpec> control_grid() {
  return build_grid(1, 64, 2.0 * M_PI,
                    GridRegions{RegionSpec::box1d(2.0, 4.0),
                                RegionSpec::box1d(0.7, 1.7),
                                RegionSpec::box1d(4.3, 5.3)},
                    4);
}

Field bump_field(std::shared_ptr<const GridSpec> grid, double center, double radius,
                 double amplitude, Support support, int power = 6) {
  BumpSpec spec;
  spec.center = {center};
  spec.radius = radius;
  spec.amplitude = amplitude;
  spec.power = power;
  Field f = sample_bump(grid, spec);
  f.set_support(support);
  f.enforce_support();
  return f;
}

/// Potential-only system; the control problem is linear by definition.
NlfseSystem make_system(std::shared_ptr<const GridSpec> grid) {
  NlfseSystem sys;
  sys.grid = grid;
  sys.q = bump_field(grid, 3.0, 0.8, 1.0, Support::interior);
  FracParams params;
  params.s = 2.3;
  params.m = 0;
  params.K = 2;
  sys.P = Nonlinearity(params);
  sys.linear.tol = 1e-11;
  sys.contraction.eps0 = 10.0;
  return sys;
}

/// Interior trace of the linear solution driven by exterior data f.
Field interior_trace(const NlfseSystem& sys, const Field& f) {
  LinearProblem p;
  p.grid = sys.grid;
  p.s = sys.P.params().s;
  p.q = sys.q;
  p.F = Field::zeros(sys.grid);
  p.f = f;
  Field phi = masked(solve_dirichlet(p, sys.linear).solution, sys.grid->omega_mask());
  phi.set_support(Support::interior);
  return phi;
}

/// cg_tol used throughout: the normal-operator applications carry the inner
/// solves' evaluation noise (about 1e-6 relative at s = 2.3), so the spec
/// default 1e-10 is below the verification floor here.
RungeOptions options(double lambda, RungePenalty penalty = RungePenalty::l2) {
  RungeOptions o;
  o.lambda = lambda;
  o.cg_tol = 1e-8;
  o.penalty = penalty;
  return o;
}

}  // namespace

TEST_CASE("zero target yields the zero control") {
  auto grid = control_grid();
  NlfseSystem sys = make_system(grid);
  Field zero = Field::zeros(grid);
  zero.set_support(Support::interior);

  const RungeResult r = runge_control(sys, zero, grid->w1_mask(), options(1e-8));
  CHECK(r.control.max_norm() == 0.0);
  CHECK(r.fit_error == 0.0);
  CHECK(r.target_norm == 0.0);
  CHECK(r.achieved_err() == 0.0);
  CHECK(r.iterations == 0);
}

TEST_CASE("attainable targets: error decays along the lambda ladder") {
  auto grid = control_grid();
  NlfseSystem sys = make_system(grid);

  const Field fstar = bump_field(grid, 1.2, 0.4, 1.0, Support::exterior);
  const Field phi = interior_trace(sys, fstar);
  const double fstar_l2 = l2_norm(fstar, grid->full_mask());
  REQUIRE(l2_norm(phi, grid->omega_mask()) > 1e-4);

  const std::array<double, 5> ladder = {1e-2, 1e-4, 1e-6, 1e-8, 1e-10};
  const auto points = lambda_sweep(sys, phi, grid->w1_mask(), ladder, options(1e-8));
  REQUIRE(points.size() == ladder.size());
  for (std::size_t i = 1; i < points.size(); ++i) {
    CHECK(points[i].fit_error <= points[i - 1].fit_error + 1e-10);
    CHECK(points[i].control_norm + 1e-10 >= points[i - 1].control_norm);
  }
  // Measured relative errors 1.7e-1 down to 3.8e-4 across this ladder.
  const double target_norm = l2_norm(phi, grid->omega_mask());
  CHECK(points.front().fit_error / target_norm < 0.5);
  CHECK(points.back().fit_error / target_norm <= 1e-3);

  // Tikhonov bias bound for attainable targets: the fit error at lambda is
  // at most sqrt(lambda)/2 * ||f*|| (measured 1.0e-5 against 4.2e-5 here).
  const RungeResult r8 = runge_control(sys, phi, grid->w1_mask(), options(1e-8));
  CHECK(r8.fit_error <= std::sqrt(1e-8) * fstar_l2);
  CHECK(r8.iterations > 0);
  CHECK(std::isfinite(r8.residual));
}

TEST_CASE("lambda_sweep rows match single solves and validate their grid") {
  auto grid = control_grid();
  NlfseSystem sys = make_system(grid);
  const Field blob = bump_field(grid, 3.0, 0.5, 1.0, Support::interior, 4);

  const std::array<double, 1> single = {1e-6};
  const auto row = lambda_sweep(sys, blob, grid->w1_mask(), single, options(1e-8));
  const RungeResult direct = runge_control(sys, blob, grid->w1_mask(), options(1e-6));
  REQUIRE(row.size() == 1);
  CHECK(row[0].lambda == 1e-6);
  CHECK(row[0].fit_error == direct.fit_error);
  CHECK(row[0].control_norm == direct.control_norm);
  CHECK(row[0].iterations == direct.iterations);

  const std::array<double, 2> ascending = {1e-8, 1e-6};
  CHECK_THROWS_AS(lambda_sweep(sys, blob, grid->w1_mask(), ascending, options(1e-8)),
                  ConfigError);
  const std::array<double, 2> with_zero = {1e-6, 0.0};
  CHECK_THROWS_AS(lambda_sweep(sys, blob, grid->w1_mask(), with_zero, options(1e-8)),
                  ConfigError);
  CHECK_THROWS_AS(lambda_sweep(sys, blob, grid->w1_mask(), {}, options(1e-8)),
                  ConfigError);
}

TEST_CASE("basis-constrained controls recover in-span targets") {
  auto grid = control_grid();
  NlfseSystem sys = make_system(grid);
  const std::vector<Field> family = {bump_field(grid, 1.0, 0.3, 1.0, Support::exterior),
                                     bump_field(grid, 1.2, 0.3, 1.0, Support::exterior),
                                     bump_field(grid, 1.4, 0.3, 1.0, Support::exterior)};

  Field combo = Field::zeros(grid);
  combo.axpy(2.0, family[0]);
  combo.axpy(-1.0, family[1]);
  combo.set_support(Support::exterior);
  const Field phi = interior_trace(sys, combo);

  // Measured at lambda = 1e-10: coefficients (1.99994, -0.99993, -8e-6),
  // relative fit 3.1e-6, normal-equation residual 4e-19.
  const RungeResult r = runge_control_basis(sys, phi, family, options(1e-10));
  REQUIRE(r.coeffs.size() == 3);
  CHECK(std::fabs(r.coeffs[0] - 2.0) <= 1e-3);
  CHECK(std::fabs(r.coeffs[1] + 1.0) <= 1e-3);
  CHECK(std::fabs(r.coeffs[2]) <= 1e-3);
  CHECK(r.achieved_err() <= 1e-4);
  CHECK(r.residual <= 1e-12);
  CHECK(r.iterations == 0);

  // The Tikhonov bias shrinks linearly with lambda on in-span targets.
  const RungeResult r8 = runge_control_basis(sys, phi, family, options(1e-8));
  CHECK(r.achieved_err() < r8.achieved_err());

  // Restricting the control space cannot beat the free nodal optimum.
  const Field blob = bump_field(grid, 3.0, 0.5, 1.0, Support::interior, 4);
  const RungeResult basis_blob = runge_control_basis(sys, blob, family, options(1e-8));
  const RungeResult nodal_blob = runge_control(sys, blob, grid->w1_mask(), options(1e-8));
  CHECK(basis_blob.fit_error + 1e-10 >= nodal_blob.fit_error);

  CHECK_THROWS_AS(runge_control_basis(sys, phi, {}, options(1e-8)), ConfigError);
  std::vector<Field> bad = family;
  bad.push_back(bump_field(grid, 3.0, 0.4, 1.0, Support::interior));
  CHECK_THROWS_AS(runge_control_basis(sys, phi, bad, options(1e-8)), ConfigError);
}

TEST_CASE("controls stay on their window and solves are deterministic") {
  auto grid = control_grid();
  NlfseSystem sys = make_system(grid);
  const Field blob = bump_field(grid, 3.0, 0.5, 1.0, Support::interior, 4);

  const RungeResult a = runge_control(sys, blob, grid->w1_mask(), options(1e-6));
  for (int node = 0; node < grid->node_count(); ++node)
    if (!grid->w1_mask()[static_cast<std::size_t>(node)])
      CHECK(a.control[node] == 0.0);
  CHECK(a.achieved.supported_on(grid->omega_mask()));

  const RungeResult b = runge_control(sys, blob, grid->w1_mask(), options(1e-6));
  for (int node = 0; node < grid->node_count(); ++node)
    CHECK(a.control[node] == b.control[node]);
  CHECK(a.fit_error == b.fit_error);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("sobolev penalty trades fit for a tamer control") {
  auto grid = control_grid();
  NlfseSystem sys = make_system(grid);
  const Field fstar = bump_field(grid, 1.2, 0.4, 1.0, Support::exterior);
  const Field phi = interior_trace(sys, fstar);

  const RungeResult plain = runge_control(sys, phi, grid->w1_mask(), options(1e-8));
  const RungeResult smooth =
      runge_control(sys, phi, grid->w1_mask(), options(1e-8, RungePenalty::sobolev));
  // Measured: relative fit 1.6e-3 (l2) vs 3.1e-2 (sobolev), control norm
  // 2.8e-1 vs 1.6e-1; the Bessel weight <xi>^{2s} >= 1 damps harder.
  CHECK(smooth.achieved_err() <= 1e-1);
  CHECK(smooth.achieved_err() >= plain.achieved_err());
  CHECK(smooth.control_norm < plain.control_norm);
}

TEST_CASE("control-problem validation") {
  auto grid = control_grid();
  NlfseSystem sys = make_system(grid);
  const Field blob = bump_field(grid, 3.0, 0.5, 1.0, Support::interior, 4);

  CHECK_THROWS_AS(runge_control(sys, blob, grid->w1_mask(), options(0.0)), ConfigError);
  CHECK_THROWS_AS(runge_control(sys, blob, grid->w1_mask(), options(-1.0)), ConfigError);
  RungeOptions bad_tol = options(1e-8);
  bad_tol.cg_tol = 0.0;
  CHECK_THROWS_AS(runge_control(sys, blob, grid->w1_mask(), bad_tol), ConfigError);
  RungeOptions bad_max = options(1e-8);
  bad_max.cg_max = 0;
  CHECK_THROWS_AS(runge_control(sys, blob, grid->w1_mask(), bad_max), ConfigError);

  std::vector<std::uint8_t> short_mask(16, 1);
  CHECK_THROWS_AS(runge_control(sys, blob, short_mask, options(1e-8)), ConfigError);
  std::vector<std::uint8_t> empty_mask(
      static_cast<std::size_t>(grid->node_count()), 0);
  CHECK_THROWS_AS(runge_control(sys, blob, empty_mask, options(1e-8)), ConfigError);
  std::vector<std::uint8_t> overlapping = grid->w1_mask();
  overlapping[static_cast<std::size_t>(grid->omega_nodes()[0])] = 1;
  CHECK_THROWS_AS(runge_control(sys, blob, overlapping, options(1e-8)), ConfigError);

  auto other = build_grid(1, 32, 2.0 * M_PI,
                          GridRegions{RegionSpec::box1d(2.0, 4.0),
                                      RegionSpec::box1d(0.7, 1.7),
                                      RegionSpec::box1d(4.3, 5.3)},
                          2);
  const Field foreign = Field::zeros(other);
  CHECK_THROWS_AS(runge_control(sys, foreign, grid->w1_mask(), options(1e-8)),
                  ConfigError);
}
