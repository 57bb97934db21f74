#pragma once

#include <map>
#include <utility>

#include "nlfs/field.hpp"
#include "nlfs/multiindex.hpp"
#include "nlfs/spectral.hpp"

namespace nlfs {

/// Order parameters of the model: fractional exponent s of (-Delta)^s,
/// highest derivative order m inside the nonlinearity, and expansion depth K
/// (coefficient levels run k = 1 .. K-1).
struct FracParams {
  double s = 1.5;
  int m = 0;
  int K = 2;

  /// Throws ConfigError: s must be positive and non-integer (within 1e-12),
  /// m >= 0, K >= 2.
  void validate() const;
  /// Standing assumption floor(s) >= max(m, dim/2). Violations degrade the
  /// continuum backing theory but not the discrete algebra, so callers warn
  /// instead of failing.
  bool standing_assumption_holds(int dim) const;
};

/// Per-derivative lookup D^sigma h for a prescribed test function. Used by
/// oracle-mode recovery where derivative values are part of the experiment
/// design rather than computed spectrally.
using DerivTable = std::map<MultiIndex, Field>;

/// Coefficient family a_{sigma,k} of the nonlinearity
///   P(x, D, u) = sum_{k=1}^{K-1} sum_{|sigma| <= m} a_{sigma,k} u^k D^sigma u.
/// Coefficients are interior-supported fields; absent entries are zero.
class Nonlinearity {
 public:
  /// Empty nonlinearity with default order parameters (P == 0).
  Nonlinearity() : Nonlinearity(FracParams{}) {}
  explicit Nonlinearity(FracParams params);

  const FracParams& params() const { return params_; }

  /// Validates k in [1, K-1], |sigma| <= m, sigma length == grid dim, and
  /// that `a` vanishes outside Omega and is finite.
  void set_coeff(int k, const MultiIndex& sigma, Field a);
  /// Null when the coefficient is absent (== 0).
  const Field* coeff(int k, const MultiIndex& sigma) const;
  bool empty() const { return c_.empty(); }
  /// sum over stored coefficients of ||a_{sigma,k}||_inf; the C' constant of
  /// the contraction inequality.
  double coeff_abs_sum() const;

  const std::map<std::pair<int, MultiIndex>, Field>& coeffs() const { return c_; }
  DerivScheme deriv_scheme() const { return scheme_; }
  void set_deriv_scheme(DerivScheme s) { scheme_ = s; }

 private:
  FracParams params_;
  std::map<std::pair<int, MultiIndex>, Field> c_;
  DerivScheme scheme_ = DerivScheme::spectral;
};

/// u^k pointwise.
Field pow_field(const Field& u, int k);

/// Linear operator of level k applied to w:
///   sum_{|sigma| <= m} a_{sigma,k} D^sigma w.
/// When `table` is given, D^sigma w is looked up there (missing nonzero
/// sigma throws InternalError); otherwise derivatives are computed with the
/// nonlinearity's scheme.
Field linear_level_op(const Field& w, int k, const Nonlinearity& P,
                      const DerivTable* table = nullptr);

/// Level-k nonlinear term a_{sigma,k} u^k D^sigma u summed over sigma.
Field apply_Pk(const Field& u, int k, const Nonlinearity& P);

/// Full nonlinearity P(x, D, u) = sum_k apply_Pk(u, k, P).
Field eval_nonlinearity(const Field& u, const Nonlinearity& P);

/// Energy pairing behind the DN map:
///   B(u, v) = integral (-Delta)^{s/2}u (-Delta)^{s/2}v
///           + integral_Omega q u v + integral_Omega P(x, D, u) v.
/// Warns on stderr if q dips below -1e-12 on Omega.
double bilinear_form(const Field& u, const Field& v, const Field& q,
                     const Nonlinearity& P);

}  // namespace nlfs
