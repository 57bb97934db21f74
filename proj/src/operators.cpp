#include "nlfs/operators.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "nlfs/errors.hpp"

namespace nlfs {

void FracParams::validate() const {
  if (!(s > 0.0)) throw ConfigError("FracParams: s must be positive");
  if (std::fabs(s - std::round(s)) <= 1e-12)
    throw ConfigError("FracParams: s must not be an integer");
  if (m < 0) throw ConfigError("FracParams: m must be >= 0");
  if (K < 2) throw ConfigError("FracParams: K must be >= 2");
}

bool FracParams::standing_assumption_holds(int dim) const {
  return std::floor(s) >= std::max(static_cast<double>(m), dim / 2.0);
}

Nonlinearity::Nonlinearity(FracParams params) : params_(params) { params_.validate(); }

void Nonlinearity::set_coeff(int k, const MultiIndex& sigma, Field a) {
  if (k < 1 || k > params_.K - 1)
    throw ConfigError("Nonlinearity::set_coeff: k outside [1, K-1]");
  if (sigma.order() > params_.m)
    throw ConfigError("Nonlinearity::set_coeff: |sigma| exceeds m");
  if (!a.grid()) throw ConfigError("Nonlinearity::set_coeff: empty coefficient field");
  if (sigma.size() != a.grid()->dim())
    throw ConfigError("Nonlinearity::set_coeff: sigma length must equal grid dim");
  a.check_finite("Nonlinearity::set_coeff");
  if (!a.supported_on(a.grid()->omega_mask()))
    throw ConfigError("Nonlinearity::set_coeff: coefficient must vanish outside omega");
  a.set_support(Support::interior);
  c_.insert_or_assign(std::make_pair(k, sigma), std::move(a));
}

const Field* Nonlinearity::coeff(int k, const MultiIndex& sigma) const {
  auto it = c_.find(std::make_pair(k, sigma));
  return it == c_.end() ? nullptr : &it->second;
}

double Nonlinearity::coeff_abs_sum() const {
  double s = 0.0;
  for (const auto& [key, a] : c_) s += a.max_norm();
  return s;
}

Field pow_field(const Field& u, int k) {
  if (k < 0) throw ConfigError("pow_field: negative exponent");
  Field out = Field::constant(u.grid(), 1.0);
  for (int i = 0; i < out.size(); ++i) {
    double p = 1.0;
    const double v = u[i];
    for (int r = 0; r < k; ++r) p *= v;
    out[i] = p;
  }
  return out;
}

Field linear_level_op(const Field& w, int k, const Nonlinearity& P,
                      const DerivTable* table) {
  Field out = Field::zeros(w.grid());
  for (const auto& [key, a] : P.coeffs()) {
    if (key.first != k) continue;
    const MultiIndex& sigma = key.second;
    Field dw;
    if (table && !sigma.is_zero()) {
      auto it = table->find(sigma);
      if (it == table->end())
        throw InternalError("linear_level_op: derivative table misses sigma " +
                            sigma.to_string());
      dw = it->second;
    } else {
      dw = partial_derivative(w, sigma, P.deriv_scheme());
    }
    for (int i = 0; i < out.size(); ++i) out[i] += a[i] * dw[i];
  }
  // Every coefficient is interior-supported, so the sum is too.
  out.set_support(Support::interior);
  return out;
}

Field apply_Pk(const Field& u, int k, const Nonlinearity& P) {
  if (k < 1 || k > P.params().K - 1)
    throw ConfigError("apply_Pk: k outside [1, K-1]");
  Field lin = linear_level_op(u, k, P);
  const Field uk = pow_field(u, k);
  for (int i = 0; i < lin.size(); ++i) lin[i] *= uk[i];
  lin.set_support(Support::interior);
  return lin;
}

Field eval_nonlinearity(const Field& u, const Nonlinearity& P) {
  Field out = Field::zeros(u.grid());
  for (int k = 1; k <= P.params().K - 1; ++k) {
    bool has_level = false;
    for (const auto& [key, a] : P.coeffs())
      if (key.first == k) {
        has_level = true;
        break;
      }
    if (has_level) out += apply_Pk(u, k, P);
  }
  out.set_support(Support::interior);
  return out;
}

double bilinear_form(const Field& u, const Field& v, const Field& q,
                     const Nonlinearity& P) {
  if (!u.same_grid(v) || !u.same_grid(q))
    throw ConfigError("bilinear_form: fields live on different grids");
  const auto& grid = *u.grid();
  for (int node : grid.omega_nodes())
    if (q[node] < -1e-12) {
      std::cerr << "warning: bilinear_form: q < 0 on omega, pairing may lose"
                   " coercivity\n";
      break;
    }
  const double s = P.params().s;
  const Field hu = frac_laplacian(u, 0.5 * s);
  const Field hv = frac_laplacian(v, 0.5 * s);
  double acc = inner_product(hu, hv, grid.full_mask());
  acc += inner_product(hadamard(q, u), v, grid.omega_mask());
  if (!P.empty())
    acc += inner_product(eval_nonlinearity(u, P), v, grid.omega_mask());
  return acc;
}

}  // namespace nlfs
