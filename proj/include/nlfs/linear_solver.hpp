#pragma once

#include <memory>

#include "nlfs/field.hpp"
#include "nlfs/rng.hpp"

namespace nlfs {

/// Exterior-value problem for the linear operator (-Delta)^s + q:
/// find v with v = f outside Omega and (-Delta)^s v + q v = F on Omega.
struct LinearProblem {
  std::shared_ptr<const GridSpec> grid;
  double s = 1.5;
  Field q;  // interior-supported, >= -1e-12 on Omega
  Field F;  // source, read on Omega only
  Field f;  // exterior data, must vanish on Omega
};

enum class SolveMethod { iterative, dense };

/// Preconditioner for the interior CG. `spectral` inverts the periodic
/// surrogate (-Delta)^s + c via FFT; `diagonal` uses the exact diagonal of
/// the interior matrix; `none` is plain CG (usable only on small grids or
/// small s, the interior condition number grows like |xi_max|^{2s}).
enum class Preconditioner { none, diagonal, spectral };

struct SolverOptions {
  double tol = 1e-10;
  int max_iter = 5000;
  Preconditioner precond = Preconditioner::spectral;
};

struct SolveReport {
  Field solution;
  int iterations = 0;
  /// max over Omega of |(-Delta)^s v + q v - F|, recomputed by applying the
  /// operator to the returned solution. Diagnostic only: this evaluation
  /// carries an eps * |xi_max|^{2s} roundoff floor of its own at large s,
  /// independent of the solve quality.
  double residual_norm = 0.0;
  SolveMethod method = SolveMethod::iterative;
};

/// Schur-reduced interior solve: eliminates the prescribed exterior values
/// and runs preconditioned CG on the interior block, which is symmetric
/// positive definite for q >= 0. Converges when the interior Schur residual
/// satisfies ||b - A x||_inf <= tol * (1 + ||F||_inf + ||f||_inf), verified
/// by recomputation rather than trusted from the CG recurrence; otherwise
/// throws SolverError carrying the last residual.
SolveReport solve_dirichlet(const LinearProblem& p, const SolverOptions& opts);
SolveReport solve_dirichlet(const LinearProblem& p, double tol = 1e-10,
                            int max_iter = 5000);

/// Reference path sharing no linear algebra with the CG route: assembles the
/// interior matrix column by column from operator applications to node
/// indicators, verifies symmetry, and factors it with a dense Cholesky.
/// Refuses more than 4096 interior nodes.
SolveReport dense_oracle_solve(const LinearProblem& p);

/// Minimum Rayleigh quotient x^T A x / x^T x of the interior operator over
/// `count` random directions; positivity is the discrete coercivity check.
double coercivity_probe(const LinearProblem& p, RngStream& rng, int count = 32);

}  // namespace nlfs
