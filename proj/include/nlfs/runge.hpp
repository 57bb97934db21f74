#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nlfs/nonlinear_solver.hpp"

namespace nlfs {

/// Tikhonov penalty weighting. `l2` charges the plain norm of the control;
/// `sobolev` charges the <xi>^{2s} Bessel weight instead, which biases the
/// optimizer toward smooth controls (a conditioning experiment knob).
enum class RungePenalty { l2, sobolev };

/// Controls for the exterior-control least-squares problem. lambda must be
/// strictly positive: the interior trace operator is severely smoothing, so
/// its normal equations are hopeless without Tikhonov damping.
struct RungeOptions {
  double lambda = 1e-8;
  /// Normal-equation CG stops when the recomputed residual ||b - N x||_2
  /// drops below cg_tol * (||b||_2 + ||N x||_2). The floor of reachable
  /// targets is set by the inner solves: each normal-operator application
  /// carries their evaluation noise, so tolerances much below 1e-8 stall at
  /// strong smoothing exponents.
  double cg_tol = 1e-10;
  int cg_max = 10000;
  RungePenalty penalty = RungePenalty::l2;
};

/// Outcome of a control solve. Norms are quadrature-weighted L2 norms: the
/// fit pair over Omega, the control over its own support.
struct RungeResult {
  Field control;   // exterior data, supported on the window / family span
  Field achieved;  // interior trace of the linear solution driven by control
  double fit_error = 0.0;     // ||achieved - target||_{L2(Omega)}
  double target_norm = 0.0;   // ||target||_{L2(Omega)}
  double control_norm = 0.0;  // ||control||_{L2}
  int iterations = 0;         // CG iterations; 0 for the dense basis route
  double residual = 0.0;      // final normal-equation true residual
  std::vector<double> coeffs;  // basis route: weights over the family

  /// Relative fit over Omega; defined as 0 for an identically zero target.
  double achieved_err() const {
    return target_norm > 0.0 ? fit_error / target_norm : 0.0;
  }
};

/// Nodal exterior control: minimizes ||S f - target||^2 + lambda ||f||^2
/// over fields f supported on the window nodes, where S f is the interior
/// trace of the solution of the linear problem with exterior data f. The
/// target is read on Omega only. Matrix-free CG on the normal equations;
/// every operator application costs one interior solve and its adjoint one
/// more (the interior matrix is symmetric, so the adjoint is a plain solve
/// followed by reading the operator back at the window nodes). Throws
/// SolverError when cg_max iterations cannot meet cg_tol.
RungeResult runge_control(const NlfseSystem& sys, const Field& target,
                          const std::vector<std::uint8_t>& window,
                          const RungeOptions& opts = {});

/// Same objective minimized over the span of a fixed exterior family:
/// f = sum_j c_j g_j. The r x r normal equations (M + lambda G) c = rhs,
/// with M the Gram matrix of the interior traces S g_j and G the Gram
/// matrix of the g_j themselves, are assembled with one interior solve per
/// family member and factored densely. The achieved trace is recomputed
/// from the assembled control with a fresh solve. This is the route replay
/// recovery uses: archived derivative tensors extend over exactly this span.
RungeResult runge_control_basis(const NlfseSystem& sys, const Field& target,
                                const std::vector<Field>& family,
                                const RungeOptions& opts = {});

/// One point of a Tikhonov trade-off curve.
struct SweepPoint {
  double lambda = 0.0;
  double fit_error = 0.0;
  double control_norm = 0.0;
  int iterations = 0;
};

/// Runs runge_control once per lambda; the grid must be strictly descending
/// and positive. As lambda decreases the fit error is nonincreasing and the
/// control norm nondecreasing (the classical regularization trade-off);
/// callers use the curve to pick a budget.
std::vector<SweepPoint> lambda_sweep(const NlfseSystem& sys, const Field& target,
                                     const std::vector<std::uint8_t>& window,
                                     std::span<const double> lambdas,
                                     const RungeOptions& opts = {});

}  // namespace nlfs
