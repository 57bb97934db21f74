#include "nlfs/linearization.hpp"

#include <bit>
#include <cmath>
#include <functional>
#include <utility>

#include "nlfs/errors.hpp"
#include "nlfs/linear_solver.hpp"
#include "nlfs/spectral.hpp"
#include "nlfs/util.hpp"

namespace nlfs {

namespace {

/// Ordered splits of beta into exactly `count` nonzero parts; calls `emit`
/// once per split with the parts in order.
void split_rec(const MultiIndex& beta, int count, std::vector<MultiIndex>& parts,
               const std::function<void(std::span<const MultiIndex>)>& emit) {
  if (count == 1) {
    if (beta.is_zero()) return;
    parts.push_back(beta);
    emit(parts);
    parts.pop_back();
    return;
  }
  for (const MultiIndex& head : strict_lower_indices(beta)) {
    const MultiIndex rest = beta.minus(head);
    if (rest.order() < count - 1) continue;
    parts.push_back(head);
    split_rec(rest, count - 1, parts, emit);
    parts.pop_back();
  }
}

/// Ordered compositions of n into exactly `count` positive integers.
void int_split_rec(int n, int count, std::vector<int>& parts,
                   const std::function<void(std::span<const int>)>& emit) {
  if (count == 1) {
    if (n < 1) return;
    parts.push_back(n);
    emit(parts);
    parts.pop_back();
    return;
  }
  for (int head = 1; head <= n - (count - 1); ++head) {
    parts.push_back(head);
    int_split_rec(n - head, count - 1, parts, emit);
    parts.pop_back();
  }
}

std::shared_ptr<const GridSpec> cascade_grid(const Cascade& cascade) {
  if (cascade.data.empty() || !cascade.data.front().grid())
    throw ConfigError("cascade is empty");
  return cascade.data.front().grid();
}

int cascade_slots(const Cascade& cascade) {
  return static_cast<int>(cascade.data.size());
}

void check_eps(std::span<const double> eps, const Cascade& cascade,
               const char* who) {
  if (static_cast<int>(eps.size()) != cascade_slots(cascade))
    throw ConfigError(std::string(who) + ": polarization length != data count");
}

}  // namespace

double index_power(std::span<const double> eps, const MultiIndex& alpha) {
  if (static_cast<int>(eps.size()) != alpha.size())
    throw ConfigError("index_power: length mismatch");
  double p = 1.0;
  for (int i = 0; i < alpha.size(); ++i)
    for (int rep = 0; rep < alpha[i]; ++rep) p *= eps[static_cast<std::size_t>(i)];
  return p;
}

Field expansion_source(const NlfseSystem& sys, const MultiIndex& alpha,
                       const std::map<MultiIndex, Field>& terms,
                       const DerivTableMap* tables) {
  if (!sys.grid) throw ConfigError("expansion_source: null grid");
  Field out = Field::zeros(sys.grid);
  out.set_support(Support::interior);
  if (alpha.order() < 2) return out;  // no split into >= 2 nonzero parts

  auto term_at = [&](const MultiIndex& gamma) -> const Field& {
    const auto it = terms.find(gamma);
    if (it == terms.end())
      throw ConfigError("expansion_source: missing expansion term w_" +
                        gamma.to_string());
    return it->second;
  };

  // D^sigma w_gamma, cached across coefficient levels. Prescribed tables win
  // over scheme differentiation when they cover gamma.
  std::map<std::pair<MultiIndex, MultiIndex>, Field> dcache;
  auto deriv_at = [&](const MultiIndex& sigma,
                      const MultiIndex& gamma) -> const Field& {
    if (sigma.order() == 0) return term_at(gamma);
    const auto key = std::make_pair(sigma, gamma);
    if (const auto it = dcache.find(key); it != dcache.end()) return it->second;
    Field d;
    const DerivTable* table = nullptr;
    if (tables) {
      if (const auto tit = tables->find(gamma); tit != tables->end())
        table = &tit->second;
    }
    if (table) {
      const auto sit = table->find(sigma);
      if (sit == table->end())
        throw InternalError("expansion_source: prescribed table for w_" +
                            gamma.to_string() + " lacks D^" + sigma.to_string());
      d = sit->second;
    } else {
      d = partial_derivative(term_at(gamma), sigma, sys.P.deriv_scheme());
    }
    return dcache.emplace(key, std::move(d)).first->second;
  };

  std::vector<MultiIndex> parts;
  for (const auto& [key, a] : sys.P.coeffs()) {
    const int k = key.first;
    const MultiIndex& sigma = key.second;
    for (const MultiIndex& beta : strict_lower_indices(alpha)) {
      if (beta.order() < k) continue;  // k nonzero parts need order >= k
      const Field& dgamma = deriv_at(sigma, alpha.minus(beta));
      split_rec(beta, k, parts, [&](std::span<const MultiIndex> ps) {
        const auto weight =
            static_cast<double>(multinomial_weight(alpha, beta, ps));
        Field prod = hadamard(a, dgamma);
        for (const MultiIndex& p : ps) prod = hadamard(prod, term_at(p));
        out.axpy(-weight, prod);
      });
    }
  }
  return out;
}

Cascade compute_cascade(const NlfseSystem& sys, std::vector<Field> data,
                        int max_order, const DerivTableMap* tables) {
  if (!sys.grid) throw ConfigError("compute_cascade: null grid");
  if (data.empty()) throw ConfigError("compute_cascade: no exterior data");
  if (max_order < 1) throw ConfigError("compute_cascade: max_order must be >= 1");
  for (const Field& f : data) {
    if (f.grid().get() != sys.grid.get())
      throw ConfigError("compute_cascade: data grid mismatch");
    if (!f.supported_on(sys.grid->exterior_mask()))
      throw ConfigError("compute_cascade: data must vanish off the exterior");
    f.check_finite("compute_cascade data");
  }

  Cascade cascade;
  cascade.max_order = max_order;
  cascade.data = std::move(data);
  const int r = cascade_slots(cascade);

  LinearProblem p;
  p.grid = sys.grid;
  p.s = sys.P.params().s;
  p.q = sys.q;
  for (int l = 0; l < r; ++l) {
    p.F = Field::zeros(sys.grid);
    p.f = cascade.data[static_cast<std::size_t>(l)];
    const MultiIndex e = MultiIndex::unit(r, l);
    cascade.term[e] = solve_dirichlet(p, sys.linear).solution;
    Field zero = Field::zeros(sys.grid);
    zero.set_support(Support::interior);
    cascade.source[e] = std::move(zero);
  }

  p.f = Field::zeros(sys.grid);
  p.f.set_support(Support::exterior);
  for (int order = 2; order <= max_order; ++order) {
    for (const MultiIndex& alpha : indices_with_order(r, order)) {
      Field source = expansion_source(sys, alpha, cascade.term, tables);
      p.F = source;
      Field w = solve_dirichlet(p, sys.linear).solution;
      w.set_support(Support::interior);
      w.enforce_support();
      cascade.term[alpha] = std::move(w);
      cascade.source[alpha] = std::move(source);
    }
  }
  return cascade;
}

Field expansion_sum(const Cascade& cascade, std::span<const double> eps,
                    int up_to_order) {
  if (up_to_order < 0) up_to_order = cascade.max_order;
  if (up_to_order < 1 || up_to_order > cascade.max_order)
    throw ConfigError("expansion_sum: order outside the cascade depth");
  check_eps(eps, cascade, "expansion_sum");
  Field out = Field::zeros(cascade_grid(cascade));
  for (const auto& [alpha, w] : cascade.term) {
    if (alpha.order() > up_to_order) continue;
    const double coeff =
        index_power(eps, alpha) / static_cast<double>(multi_factorial(alpha));
    out.axpy(coeff, w);
  }
  return out;
}

Field fd_derivative(const NlfseSystem& sys, const std::vector<Field>& data,
                    const MultiIndex& alpha, const FdOptions& opts) {
  if (!sys.grid) throw ConfigError("fd_derivative: null grid");
  if (alpha.size() != static_cast<int>(data.size()))
    throw ConfigError("fd_derivative: index length != data count");
  if (!alpha.is_binary() || alpha.is_zero())
    throw ConfigError("fd_derivative: alpha must be binary and nonzero");
  if (!(opts.eps_step > 0.0))
    throw ConfigError("fd_derivative: eps_step must be positive");
  if (opts.jobs < 1) throw ConfigError("fd_derivative: jobs must be >= 1");

  const std::vector<int> slots = alpha.support();
  const int n = static_cast<int>(slots.size());
  const int count = 1 << n;

  const auto estimate = [&](double h) {
    std::vector<Field> solutions(static_cast<std::size_t>(count));
    parallel_for(count, opts.jobs, [&](int mask) {
      Field f = Field::zeros(sys.grid);
      f.set_support(Support::exterior);
      for (int i = 0; i < n; ++i)
        if (mask & (1 << i))
          f.axpy(h, data[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])]);
      solutions[static_cast<std::size_t>(mask)] = solve_nlfse(sys, f).solution;
    });
    Field out = Field::zeros(sys.grid);
    const double scale = std::pow(h, n);
    for (int mask = 0; mask < count; ++mask) {
      const int sign =
          ((n - std::popcount(static_cast<unsigned>(mask))) % 2 == 0) ? 1 : -1;
      out.axpy(static_cast<double>(sign) / scale,
               solutions[static_cast<std::size_t>(mask)]);
    }
    return out;
  };

  Field d = estimate(opts.eps_step);
  if (opts.richardson) {
    Field fine = estimate(0.5 * opts.eps_step);
    fine *= 2.0;
    fine -= d;
    d = std::move(fine);
  }
  return d;
}

RemainderStudy remainder_study(const NlfseSystem& sys, const Cascade& cascade,
                               std::span<const double> direction,
                               std::span<const double> scales) {
  check_eps(direction, cascade, "remainder_study");
  if (scales.size() < 2)
    throw ConfigError("remainder_study: need at least two scales");

  RemainderStudy study;
  study.truncation_order = cascade.max_order;
  std::vector<double> eps(direction.size());
  for (const double t : scales) {
    if (!(t > 0.0)) throw ConfigError("remainder_study: scales must be positive");
    Field f = Field::zeros(sys.grid);
    f.set_support(Support::exterior);
    for (std::size_t l = 0; l < eps.size(); ++l) {
      eps[l] = t * direction[l];
      f.axpy(eps[l], cascade.data[l]);
    }
    const Field u = solve_nlfse(sys, f).solution;
    const Field approx = expansion_sum(cascade, eps);
    study.scales.push_back(t);
    study.errors.push_back((u - approx).max_norm());
  }
  study.slope = fit_loglog_slope(study.scales, study.errors);
  return study;
}

Field order_part(const Cascade& cascade, int k, std::span<const double> eps) {
  if (k < 1 || k > cascade.max_order)
    throw ConfigError("order_part: order outside the cascade depth");
  check_eps(eps, cascade, "order_part");
  Field out = Field::zeros(cascade_grid(cascade));
  for (const auto& [alpha, w] : cascade.term) {
    if (alpha.order() != k) continue;
    out.axpy(index_power(eps, alpha) / static_cast<double>(multi_factorial(alpha)),
             w);
  }
  return out;
}

Field order_source(const Cascade& cascade, int k, std::span<const double> eps) {
  if (k < 1 || k > cascade.max_order)
    throw ConfigError("order_source: order outside the cascade depth");
  check_eps(eps, cascade, "order_source");
  Field out = Field::zeros(cascade_grid(cascade));
  out.set_support(Support::interior);
  for (const auto& [alpha, src] : cascade.source) {
    if (alpha.order() != k) continue;
    out.axpy(index_power(eps, alpha) / static_cast<double>(multi_factorial(alpha)),
             src);
  }
  return out;
}

Field order_source_from_parts(const NlfseSystem& sys,
                              const std::vector<Field>& parts, int k) {
  if (!sys.grid) throw ConfigError("order_source_from_parts: null grid");
  if (k < 1) throw ConfigError("order_source_from_parts: k must be >= 1");
  if (static_cast<int>(parts.size()) < k - 1)
    throw ConfigError("order_source_from_parts: need the parts V_1..V_{k-1}");

  Field out = Field::zeros(sys.grid);
  out.set_support(Support::interior);

  std::map<std::pair<MultiIndex, int>, Field> dcache;
  const auto deriv_at = [&](const MultiIndex& sigma, int j) -> const Field& {
    const Field& part = parts[static_cast<std::size_t>(j - 1)];
    if (sigma.order() == 0) return part;
    const auto key = std::make_pair(sigma, j);
    if (const auto it = dcache.find(key); it != dcache.end()) return it->second;
    return dcache
        .emplace(key, partial_derivative(part, sigma, sys.P.deriv_scheme()))
        .first->second;
  };

  std::vector<int> orders;
  for (const auto& [key, a] : sys.P.coeffs()) {
    const int kp = key.first;
    const MultiIndex& sigma = key.second;
    int_split_rec(k, kp + 1, orders, [&](std::span<const int> js) {
      Field prod = hadamard(a, deriv_at(sigma, js.back()));
      for (std::size_t i = 0; i + 1 < js.size(); ++i)
        prod = hadamard(prod, parts[static_cast<std::size_t>(js[i] - 1)]);
      out -= prod;
    });
  }
  return out;
}

Field tail(const Field& u, const Cascade& cascade, int k,
           std::span<const double> eps) {
  if (k < 1 || k > cascade.max_order + 1)
    throw ConfigError("tail: order outside the cascade depth");
  check_eps(eps, cascade, "tail");
  Field out = u;
  for (int j = 1; j < k; ++j) out -= order_part(cascade, j, eps);
  return out;
}

Field tail_source(const NlfseSystem& sys, const Field& u,
                  const Cascade& cascade, int k, std::span<const double> eps) {
  if (k < 2 || k > cascade.max_order + 1)
    throw ConfigError("tail_source: order outside the cascade depth");
  check_eps(eps, cascade, "tail_source");
  Field out = -eval_nonlinearity(u, sys.P);
  for (int j = 2; j < k; ++j) out -= order_source(cascade, j, eps);
  out.set_support(Support::interior);
  return out;
}

}  // namespace nlfs
