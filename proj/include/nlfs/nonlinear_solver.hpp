#pragma once

#include "nlfs/linear_solver.hpp"
#include "nlfs/operators.hpp"
#include "nlfs/rng.hpp"

namespace nlfs {

/// Contraction-iteration controls for the nonlinear exterior-value problem.
/// delta bounds the correction iterates, eps0 the admissible exterior data;
/// both echo the smallness regime in which the forward map is well-posed.
struct ContractionConfig {
  double delta = 0.1;
  double eps0 = 0.01;
  double tol = 1e-12;
  int max_iter = 200;
};

/// Bundles everything the nonlinear forward map depends on. Passed around
/// as the "system" by the linearization, DN, and recovery layers.
struct NlfseSystem {
  std::shared_ptr<const GridSpec> grid;
  Field q;
  Nonlinearity P;
  ContractionConfig contraction;
  SolverOptions linear;
};

/// Solves (-Delta)^s u + q u + P(x, D, u) = 0 on Omega, u = f outside, by
/// splitting u = u0 + v with u0 the linear solution and iterating
/// v <- L^{-1}(-P(v + u0)) with zero exterior data. Stops when consecutive
/// iterates differ by less than contraction.tol in sup norm. Throws
/// SolverError if an iterate leaves the delta-ball or the iteration fails
/// to settle. Warns on stderr when ||f||_inf > eps0. `initial` optionally
/// seeds the correction iterate (defaults to zero; any start inside the
/// ball converges to the same fixed point).
/// The report's residual_norm is max over Omega of
/// |(-Delta)^s u + q u + P(u)|; iterations counts outer sweeps.
SolveReport solve_nlfse(const NlfseSystem& sys, const Field& f,
                        const Field* initial = nullptr);

/// Certificate data for the contraction regime: with C the estimated
/// sup-norm amplification of the interior solve and C' the coefficient
/// budget, the map contracts on the delta-ball when
///   C * C' * sum_{j=1}^{K-1} (delta + eps0)^{j+1} < delta.
struct SmallnessReport {
  double coeff_sum = 0.0;       // C'
  double op_bound = 0.0;        // C, max amplification over random sources
  double lhs_at_delta = 0.0;    // left side at the configured delta
  bool contraction_holds = false;
  /// Smallest positive delta satisfying the inequality with equality; 0
  /// when P == 0, NaN when no admissible delta exists below 10.
  double delta_star = 0.0;
};

SmallnessReport check_smallness(const NlfseSystem& sys, RngStream& rng);

}  // namespace nlfs
