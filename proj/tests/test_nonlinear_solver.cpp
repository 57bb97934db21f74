#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "nlfs/errors.hpp"
#include "nlfs/nonlinear_solver.hpp"
#include "nlfs/shapes.hpp"
#include "nlfs/spectral.hpp"
#include "test_helpers.hpp"

using namespace nlfs;

namespace {

Field interior_coeff(std::shared_ptr<const GridSpec> grid, double amplitude) {
  BumpSpec spec;
  spec.center = {3.0, 3.0};
  spec.radius = 0.8;
  spec.amplitude = amplitude;
  spec.power = 4;
  Field a = sample_bump(grid, spec);
  a.set_support(Support::interior);
  a.enforce_support();
  return a;
}

Field window_bump(std::shared_ptr<const GridSpec> grid, double amplitude) {
  BumpSpec spec;
  spec.center = {1.2, 1.2};
  spec.radius = 0.45;
  spec.amplitude = amplitude;
  spec.power = 4;
  Field f = sample_bump(grid, spec);
  f.set_support(Support::exterior);
  f.enforce_support();
  return f;
}

NlfseSystem make_system(std::shared_ptr<const GridSpec> grid, double coeff_amp,
                        int K = 3) {
  FracParams params;
  params.s = 2.3;
  params.m = 1;
  params.K = K;
  NlfseSystem sys;
  sys.grid = grid;
  sys.q = interior_coeff(grid, 1.0);
  Nonlinearity P(params);
  if (coeff_amp != 0.0) {
    P.set_coeff(1, MultiIndex{0}, interior_coeff(grid, coeff_amp));
    if (K >= 3) P.set_coeff(2, MultiIndex{1}, interior_coeff(grid, 0.5 * coeff_amp));
  }
  sys.P = P;
  sys.linear.tol = 1e-12;
  return sys;
}

}  // namespace

TEST_CASE("P == 0 degenerates to the linear solver bit-for-bit") {
  const auto grid = nlfs_test::grid1d(64);
  NlfseSystem sys = make_system(grid, 0.0);
  const Field f = window_bump(grid, 0.009);

  const SolveReport nl = solve_nlfse(sys, f);

  LinearProblem p;
  p.grid = grid;
  p.s = sys.P.params().s;
  p.q = sys.q;
  p.F = Field::zeros(grid);
  p.f = f;
  const SolveReport lin = solve_dirichlet(p, sys.linear);

  double worst = 0.0;
  for (int i = 0; i < nl.solution.size(); ++i)
    worst = std::max(worst, std::fabs(nl.solution[i] - lin.solution[i]));
  CHECK(worst <= 1e-12);
  CHECK(nl.iterations == 1);
}

TEST_CASE("zero exterior data gives the zero solution after one sweep") {
  const auto grid = nlfs_test::grid1d(64);
  NlfseSystem sys = make_system(grid, 1.0);
  const SolveReport rep = solve_nlfse(sys, Field::zeros(grid));
  CHECK(rep.solution.max_norm() == 0.0);
  CHECK(rep.iterations <= 2);
}

TEST_CASE("contraction converges with a small scaled residual") {
  const auto grid = nlfs_test::grid1d(64);
  NlfseSystem sys = make_system(grid, 1.0);
  const Field f = window_bump(grid, 0.009);

  const SolveReport rep = solve_nlfse(sys, f);
  CHECK(rep.iterations < 40);

  // Scale: the residual is evaluated through the operator, whose own
  // application noise is eps * ||(-Delta)^s u||.
  const Field lap = frac_laplacian(rep.solution, sys.P.params().s);
  const double scale = std::max(1.0, lap.max_norm());
  CHECK(rep.residual_norm <= 1e-11 * scale);
}

TEST_CASE("fixed point is independent of the initial correction") {
  const auto grid = nlfs_test::grid1d(64);
  NlfseSystem sys = make_system(grid, 1.0);
  const Field f = window_bump(grid, 0.009);

  const SolveReport a = solve_nlfse(sys, f);

  RngStream rng(99);
  Field v0 = masked(nlfs_test::random_field(grid, rng, 0.02), grid->omega_mask());
  v0.set_support(Support::interior);
  const SolveReport b = solve_nlfse(sys, f, &v0);

  double worst = 0.0;
  for (int i = 0; i < a.solution.size(); ++i)
    worst = std::max(worst, std::fabs(a.solution[i] - b.solution[i]));
  CHECK(worst <= 1e-9);
}

TEST_CASE("large data warns; huge data with strong coupling violates the ball") {
  const auto grid = nlfs_test::grid1d(64);
  NlfseSystem sys = make_system(grid, 1.0);

  // ||f|| just above eps0: still solvable, but the regime warning fires.
  std::ostringstream captured;
  auto* old = std::cerr.rdbuf(captured.rdbuf());
  const SolveReport rep = solve_nlfse(sys, window_bump(grid, 0.02));
  std::cerr.rdbuf(old);
  CHECK(rep.iterations >= 1);
  CHECK(captured.str().find("outside contraction regime") != std::string::npos);

  // Strong coupling, large data, and a tight trust region push the first
  // iterate out of the delta-ball.
  NlfseSystem strong = make_system(grid, 1e4);
  strong.contraction.delta = 1e-4;
  std::ostringstream sink;
  old = std::cerr.rdbuf(sink.rdbuf());
  CHECK_THROWS_AS(solve_nlfse(strong, window_bump(grid, 0.35)), SolverError);
  std::cerr.rdbuf(old);
}

TEST_CASE("smallness certificate: trivial and nontrivial cases") {
  const auto grid = nlfs_test::grid1d(64);

  RngStream rng(7);
  NlfseSystem trivial = make_system(grid, 0.0);
  const SmallnessReport t = check_smallness(trivial, rng);
  CHECK(t.coeff_sum == 0.0);
  CHECK(t.contraction_holds);
  CHECK(t.delta_star == 0.0);

  NlfseSystem sys = make_system(grid, 1.0);
  RngStream rng2(7);
  const SmallnessReport r = check_smallness(sys, rng2);
  // The discrete sup of an off-lattice bump is slightly below its amplitude;
  // rebuild the expected sum from identically sampled coefficients.
  const double expected_sum =
      interior_coeff(grid, 1.0).max_norm() + interior_coeff(grid, 0.5).max_norm();
  CHECK(r.coeff_sum == doctest::Approx(expected_sum).epsilon(1e-12));
  CHECK(r.op_bound > 0.0);
  CHECK(r.contraction_holds);
  CHECK(r.lhs_at_delta < 0.1);

  // Oracle: rebuild g from the published constants and bisect independently.
  const double eps0 = sys.contraction.eps0;
  const int K = sys.P.params().K;
  auto g = [&](double d) {
    double sum = 0.0;
    for (int j = 1; j <= K - 1; ++j) sum += std::pow(d + eps0, j + 1);
    return r.op_bound * r.coeff_sum * sum - d;
  };
  double lo = 1e-9, hi = 1.0;
  REQUIRE(g(lo) > 0.0);
  REQUIRE(g(hi) < 0.0);  // root below 1 for these constants
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) >= 0.0 ? lo : hi) = mid;
  }
  CHECK(r.delta_star == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-3));
  CHECK(std::fabs(g(r.delta_star)) <= 1e-10);

  // delta_star is the smallest self-consistent correction bound: the low
  // root of g sits near C*C'*sum((eps0)^(j+1)), so it grows with coupling.
  NlfseSystem big = make_system(grid, 10.0);
  RngStream rng3(7);
  const SmallnessReport rb = check_smallness(big, rng3);
  CHECK(rb.delta_star > r.delta_star);
  CHECK(rb.delta_star < sys.contraction.delta);
}
