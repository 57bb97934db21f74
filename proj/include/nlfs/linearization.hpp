#pragma once

#include <map>
#include <span>
#include <vector>

#include "nlfs/field.hpp"
#include "nlfs/multiindex.hpp"
#include "nlfs/nonlinear_solver.hpp"
#include "nlfs/operators.hpp"

namespace nlfs {

/// Prescribed derivative tables, one per expansion term: tables[gamma] holds
/// D^sigma w_gamma for every derivative order sigma the nonlinearity uses.
/// Supplied by oracle-mode experiments where derivatives are part of the
/// design; when absent, derivatives fall back to the nonlinearity's scheme.
using DerivTableMap = std::map<MultiIndex, DerivTable>;

/// Solution family of the polarization cascade near zero data. With r
/// exterior profiles f_1..f_r and u(eps) the solution for data
/// sum_l eps_l f_l, the terms are the mixed derivatives
///   w_alpha = d^alpha_eps u(eps) |_{eps = 0},
/// so that u(eps) = sum_alpha eps^alpha w_alpha / alpha! + remainder.
/// Entries exist for 1 <= |alpha| <= max_order; index length is r.
struct Cascade {
  int max_order = 0;
  std::vector<Field> data;           ///< the r exterior profiles
  std::map<MultiIndex, Field> term;  ///< w_alpha
  /// T_alpha, interior source of the order-alpha equation (zero at order 1).
  std::map<MultiIndex, Field> source;
};

/// eps^alpha = prod_l eps_l^{alpha_l}. Requires matching lengths.
double index_power(std::span<const double> eps, const MultiIndex& alpha);

/// Source T_alpha of the cascade equation
///   (-Delta)^s w_alpha + q w_alpha = T_alpha in Omega, w_alpha = 0 outside
/// (for |alpha| >= 2), assembled from strictly lower-order terms. For every
/// coefficient a_{sigma,k}, every nonzero beta < alpha, and every ordered
/// split of beta into k nonzero parts p_1..p_k,
///   T_alpha -= binom(alpha,beta) multinom(beta;parts)
///              a_{sigma,k} w_{p_1} ... w_{p_k} D^sigma w_{alpha-beta}.
/// Orders 0 and 1 have no such splits and return the zero field. Throws
/// ConfigError when a required lower-order term is missing from `terms`.
Field expansion_source(const NlfseSystem& sys, const MultiIndex& alpha,
                       const std::map<MultiIndex, Field>& terms,
                       const DerivTableMap* tables = nullptr);

/// Solves the cascade up to |alpha| <= max_order. First order solves the
/// linear problem with exterior data f_l; every higher order solves the
/// zero-data problem sourced by expansion_source on the terms already
/// computed. Data must be exterior-supported fields on the system grid.
Cascade compute_cascade(const NlfseSystem& sys, std::vector<Field> data,
                        int max_order, const DerivTableMap* tables = nullptr);

/// Truncated expansion sum_{1 <= |alpha| <= up_to_order} eps^alpha
/// w_alpha / alpha!. up_to_order defaults to the cascade's depth.
Field expansion_sum(const Cascade& cascade, std::span<const double> eps,
                    int up_to_order = -1);

struct FdOptions {
  double eps_step = 1e-2;
  bool richardson = false;  ///< pair steps h and h/2 for a 2nd-order estimate
  int jobs = 1;
};

/// Finite-difference estimate of w_alpha for binary alpha: forward
/// differences of the full nonlinear solve over the 2^{|alpha|} subset sums
/// of the scaled data,
///   h^{-|alpha|} sum_{S subset supp(alpha)} (-1)^{|alpha|-|S|} u(h 1_S),
/// first-order accurate in h = eps_step. The 2^{|alpha|} solves run across
/// `jobs` threads; assembly order is fixed, so results are byte-stable in
/// the thread count.
Field fd_derivative(const NlfseSystem& sys, const std::vector<Field>& data,
                    const MultiIndex& alpha, const FdOptions& opts = {});

/// Remainder decay study: for each scale t, the sup-norm gap between the
/// nonlinear solution for data sum_l (t dir_l) f_l and the cascade expansion
/// truncated at the cascade's depth N. The log-log slope of gap vs t should
/// approach N + 1.
struct RemainderStudy {
  int truncation_order = 0;
  std::vector<double> scales;
  std::vector<double> errors;
  double slope = 0.0;
};

RemainderStudy remainder_study(const NlfseSystem& sys, const Cascade& cascade,
                               std::span<const double> direction,
                               std::span<const double> scales);

/// V_k = sum_{|alpha| = k} eps^alpha w_alpha / alpha!: the order-k part of
/// the expansion at polarization eps. Requires 1 <= k <= max_order.
Field order_part(const Cascade& cascade, int k, std::span<const double> eps);

/// T_k = sum_{|alpha| = k} eps^alpha T_alpha / alpha!: the order-k source,
/// aggregated from the cascade (zero at k = 1).
Field order_source(const Cascade& cascade, int k, std::span<const double> eps);

/// The same T_k assembled from the order parts instead: with parts[j-1] =
/// V_j for j = 1..k-1,
///   T_k = -sum_{k',sigma} a_{sigma,k'} sum_{j_1+..+j_{k'+1} = k, j_i >= 1}
///         V_{j_1} ... V_{j_{k'}} D^sigma V_{j_{k'+1}}.
/// Agreement with order_source is a bookkeeping invariant of the cascade.
Field order_source_from_parts(const NlfseSystem& sys,
                              const std::vector<Field>& parts, int k);

/// U_k = u - sum_{j=1}^{k-1} V_j: the order-k tail of the expansion around
/// the nonlinear solution u for the eps-weighted data. Vanishes on the
/// exterior for k >= 2 and decays like |eps|^k.
Field tail(const Field& u, const Cascade& cascade, int k,
           std::span<const double> eps);

/// Interior source of the tail equation
///   (-Delta)^s U_k + q U_k = -P(u) - sum_{j=2}^{k-1} T_j in Omega.
Field tail_source(const NlfseSystem& sys, const Field& u,
                  const Cascade& cascade, int k, std::span<const double> eps);

}  // namespace nlfs
