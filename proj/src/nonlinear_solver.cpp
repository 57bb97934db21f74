#include "nlfs/nonlinear_solver.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>

#include "nlfs/errors.hpp"
#include "nlfs/spectral.hpp"

namespace nlfs {

namespace {

double nonlinear_residual(const NlfseSystem& sys, const Field& u) {
  const Field lap = frac_laplacian(u, sys.P.params().s);
  const Field pu = eval_nonlinearity(u, sys.P);
  double r = 0.0;
  for (int node : sys.grid->omega_nodes())
    r = std::max(r, std::fabs(lap[node] + sys.q[node] * u[node] + pu[node]));
  return r;
}

}  // namespace

SolveReport solve_nlfse(const NlfseSystem& sys, const Field& f, const Field* initial) {
  if (!sys.grid) throw ConfigError("solve_nlfse: null grid");
  const ContractionConfig& cc = sys.contraction;
  if (!(cc.delta > 0.0) || !(cc.tol > 0.0) || cc.max_iter < 1)
    throw ConfigError("solve_nlfse: invalid contraction config");

  if (f.max_norm() > cc.eps0)
    std::cerr << "warning: solve_nlfse: exterior data outside contraction regime"
                 " (||f||_inf > eps0)\n";

  LinearProblem base;
  base.grid = sys.grid;
  base.s = sys.P.params().s;
  base.q = sys.q;
  base.F = Field::zeros(sys.grid);
  base.f = f;
  const SolveReport lin = solve_dirichlet(base, sys.linear);
  const Field& u0 = lin.solution;

  if (sys.P.empty()) {
    SolveReport rep = lin;
    rep.iterations = 1;
    rep.residual_norm = nonlinear_residual(sys, rep.solution);
    return rep;
  }

  Field v = initial ? *initial : Field::zeros(sys.grid);
  if (initial) {
    if (!v.supported_on(sys.grid->omega_mask()))
      throw ConfigError("solve_nlfse: initial correction must vanish outside omega");
    if (v.max_norm() > cc.delta)
      throw ConfigError("solve_nlfse: initial correction outside the delta-ball");
  }

  LinearProblem step;
  step.grid = sys.grid;
  step.s = base.s;
  step.q = sys.q;
  step.f = Field::zeros(sys.grid);

  for (int it = 1; it <= cc.max_iter; ++it) {
    step.F = -eval_nonlinearity(v + u0, sys.P);
    const SolveReport inner = solve_dirichlet(step, sys.linear);
    Field v_next = inner.solution;
    v_next.set_support(Support::interior);
    v_next.enforce_support();

    if (v_next.max_norm() > cc.delta) {
      char msg[128];
      std::snprintf(msg, sizeof msg,
                    "solve_nlfse: iterate left the delta-ball (%.3e > %.3e)",
                    v_next.max_norm(), cc.delta);
      throw SolverError(msg, v_next.max_norm(), it);
    }

    Field diff = v_next - v;
    const double step_size = diff.max_norm();
    v = std::move(v_next);
    if (step_size < cc.tol) {
      SolveReport rep;
      rep.solution = u0 + v;
      rep.iterations = it;
      rep.residual_norm = nonlinear_residual(sys, rep.solution);
      rep.method = SolveMethod::iterative;
      rep.solution.check_finite("solve_nlfse solution");
      return rep;
    }
  }
  throw SolverError("solve_nlfse: contraction iteration did not settle", v.max_norm(),
                    cc.max_iter);
}

SmallnessReport check_smallness(const NlfseSystem& sys, RngStream& rng) {
  if (!sys.grid) throw ConfigError("check_smallness: null grid");
  SmallnessReport rep;
  rep.coeff_sum = sys.P.coeff_abs_sum();

  // C: worst sup-norm amplification of the zero-data interior solve over
  // unit-sup random sources. A surrogate for the abstract well-posedness
  // constant; 16 probes keep it cheap and deterministic.
  LinearProblem probe;
  probe.grid = sys.grid;
  probe.s = sys.P.params().s;
  probe.q = sys.q;
  probe.f = Field::zeros(sys.grid);
  double worst = 0.0;
  for (int trial = 0; trial < 16; ++trial) {
    Field F = Field::zeros(sys.grid);
    double fmax = 0.0;
    for (int node : sys.grid->omega_nodes()) {
      F[node] = rng.uniform(-1.0, 1.0);
      fmax = std::max(fmax, std::fabs(F[node]));
    }
    if (fmax == 0.0) continue;
    F *= 1.0 / fmax;
    probe.F = F;
    worst = std::max(worst, solve_dirichlet(probe, sys.linear).solution.max_norm());
  }
  rep.op_bound = worst;

  const int K = sys.P.params().K;
  const double eps0 = sys.contraction.eps0;
  auto lhs = [&](double delta) {
    double sum = 0.0;
    for (int j = 1; j <= K - 1; ++j) sum += std::pow(delta + eps0, j + 1);
    return rep.op_bound * rep.coeff_sum * sum;
  };
  rep.lhs_at_delta = lhs(sys.contraction.delta);
  rep.contraction_holds = rep.lhs_at_delta < sys.contraction.delta;

  if (rep.coeff_sum == 0.0) {
    rep.delta_star = 0.0;
    rep.contraction_holds = true;
    return rep;
  }

  // Smallest positive root of g(delta) = lhs(delta) - delta. g(0) > 0;
  // scan for the first sign change and bisect.
  auto g = [&](double d) { return lhs(d) - d; };
  double lo = 0.0, hi = std::numeric_limits<double>::quiet_NaN();
  for (double d = 1e-6; d <= 10.0; d *= 1.25) {
    if (g(d) < 0.0) {
      hi = d;
      break;
    }
    lo = d;
  }
  if (std::isnan(hi)) {
    rep.delta_star = std::numeric_limits<double>::quiet_NaN();
    return rep;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) >= 0.0 ? lo : hi) = mid;
  }
  rep.delta_star = 0.5 * (lo + hi);
  return rep;
}

}  // namespace nlfs
