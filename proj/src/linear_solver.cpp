#include "nlfs/linear_solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "nlfs/errors.hpp"
#include "nlfs/spectral.hpp"

namespace nlfs {

namespace {

void validate_problem(const LinearProblem& p) {
  if (!p.grid) throw ConfigError("solve_dirichlet: null grid");
  if (!p.q.grid() || !p.F.grid() || !p.f.grid())
    throw ConfigError("solve_dirichlet: uninitialized field");
  if (p.q.grid().get() != p.grid.get() || p.F.grid().get() != p.grid.get() ||
      p.f.grid().get() != p.grid.get())
    throw ConfigError("solve_dirichlet: fields live on a different grid");
  if (!(p.s > 0.0)) throw ConfigError("solve_dirichlet: s must be positive");
  p.q.check_finite("solve_dirichlet q");
  p.F.check_finite("solve_dirichlet F");
  p.f.check_finite("solve_dirichlet f");
  if (!p.f.supported_on(p.grid->exterior_mask()))
    throw ConfigError("solve_dirichlet: exterior data f must vanish on omega");
  for (int node : p.grid->omega_nodes())
    if (p.q[node] < -1e-12)
      throw SolverError("solve_dirichlet: loss of coercivity, q < -1e-12 on omega", 0.0,
                        0);
}

/// Matrix-free interior operator y = [(-Delta)^s x~ ]_Omega + q x, with x~
/// the zero extension of the interior vector x.
struct InteriorOp {
  const GridSpec& grid;
  const Field& q;
  const std::vector<double>& sym;  // |xi|^{2s}
  const std::vector<int>& nodes;
  std::shared_ptr<const GridSpec> grid_ptr;

  std::vector<double> apply(const std::vector<double>& x) const {
    Field full = Field::zeros(grid_ptr);
    for (std::size_t i = 0; i < nodes.size(); ++i)
      full[nodes[i]] = x[i];
    const Field lap = apply_symbol(full, std::span<const double>(sym));
    std::vector<double> y(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i)
      y[i] = lap[nodes[i]] + q[nodes[i]] * x[i];
    return y;
  }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::fabs(v));
  return m;
}

/// Interior RHS of the Schur reduction. q * f~ vanishes because q is
/// interior-supported and f exterior-supported, so only the nonlocal term
/// of the operator sees the exterior data.
std::vector<double> reduced_rhs(const LinearProblem& p, const std::vector<double>& sym) {
  const Field lap_f = apply_symbol(p.f, std::span<const double>(sym));
  const auto& nodes = p.grid->omega_nodes();
  std::vector<double> rhs(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i)
    rhs[i] = p.F[nodes[i]] - lap_f[nodes[i]];
  return rhs;
}

Field assemble_solution(const LinearProblem& p, const std::vector<double>& x) {
  Field v = p.f;
  v.set_support(Support::any);
  const auto& nodes = p.grid->omega_nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) v[nodes[i]] = x[i];
  return v;
}

double true_residual(const LinearProblem& p, const Field& v,
                     const std::vector<double>& sym) {
  const Field lap = apply_symbol(v, std::span<const double>(sym));
  double r = 0.0;
  for (int node : p.grid->omega_nodes())
    r = std::max(r, std::fabs(lap[node] + p.q[node] * v[node] - p.F[node]));
  return r;
}

struct Precond {
  Preconditioner kind;
  const GridSpec& grid;
  std::shared_ptr<const GridSpec> grid_ptr;
  const std::vector<int>& nodes;
  std::vector<double> inv_sym;   // spectral: 1 / (|xi|^{2s} + c)
  std::vector<double> inv_diag;  // diagonal: 1 / (diag + q)

  std::vector<double> apply(const std::vector<double>& r) const {
    if (kind == Preconditioner::none) return r;
    if (kind == Preconditioner::diagonal) {
      std::vector<double> z(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) z[i] = inv_diag[i] * r[i];
      return z;
    }
    Field full = Field::zeros(grid_ptr);
    for (std::size_t i = 0; i < nodes.size(); ++i) full[nodes[i]] = r[i];
    const Field sm = apply_symbol(full, std::span<const double>(inv_sym));
    std::vector<double> z(r.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) z[i] = sm[nodes[i]];
    return z;
  }
};

Precond make_precond(const LinearProblem& p, const std::vector<double>& sym,
                     Preconditioner kind) {
  Precond pc{kind, *p.grid, p.grid, p.grid->omega_nodes(), {}, {}};
  if (kind == Preconditioner::spectral) {
    double qbar = 0.0;
    for (int node : p.grid->omega_nodes()) qbar += p.q[node];
    qbar /= static_cast<double>(p.grid->omega_nodes().size());
    const double c = 1.0 + std::max(0.0, qbar);
    pc.inv_sym.resize(sym.size());
    for (std::size_t i = 0; i < sym.size(); ++i) pc.inv_sym[i] = 1.0 / (sym[i] + c);
  } else if (kind == Preconditioner::diagonal) {
    // Diagonal of a Fourier multiplier is the symbol mean, identical at
    // every node; q adds the nodal variation.
    double mean = 0.0;
    for (double v : sym) mean += v;
    mean /= static_cast<double>(sym.size());
    pc.inv_diag.resize(p.grid->omega_nodes().size());
    const auto& nodes = p.grid->omega_nodes();
    for (std::size_t i = 0; i < nodes.size(); ++i)
      pc.inv_diag[i] = 1.0 / (mean + std::max(0.0, p.q[nodes[i]]));
  }
  return pc;
}

}  // namespace

SolveReport solve_dirichlet(const LinearProblem& p, const SolverOptions& opts) {
  validate_problem(p);
  if (!(opts.tol > 0.0)) throw ConfigError("solve_dirichlet: tol must be positive");
  if (opts.max_iter < 1) throw ConfigError("solve_dirichlet: max_iter must be >= 1");

  const auto sym = frac_symbol(*p.grid, 2.0 * p.s);
  const auto& nodes = p.grid->omega_nodes();
  const InteriorOp A{*p.grid, p.q, sym, nodes, p.grid};
  const Precond M = make_precond(p, sym, opts.precond);

  double f_inf = 0.0;
  for (int i = 0; i < p.f.size(); ++i) f_inf = std::max(f_inf, std::fabs(p.f[i]));
  double F_inf = 0.0;
  for (int node : nodes) F_inf = std::max(F_inf, std::fabs(p.F[node]));
  const double scale = 1.0 + F_inf + f_inf;
  const double target = opts.tol * scale;

  std::vector<double> x(nodes.size(), 0.0);
  const std::vector<double> b = reduced_rhs(p, sym);
  std::vector<double> r = b;
  int iterations = 0;

  // The convergence contract lives on the interior Schur residual b - A x.
  // Outer restarts re-evaluate it from scratch so recurrence drift cannot
  // fake convergence.
  for (int round = 0; round < 3 && iterations <= opts.max_iter; ++round) {
    if (max_abs(r) > target) {
      std::vector<double> z = M.apply(r);
      std::vector<double> d = z;
      double rz = dot(r, z);
      while (iterations < opts.max_iter) {
        const std::vector<double> Ad = A.apply(d);
        const double dAd = dot(d, Ad);
        if (!(dAd > 0.0))
          throw SolverError("solve_dirichlet: CG breakdown, operator not positive",
                            max_abs(r), iterations);
        const double alpha = rz / dAd;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += alpha * d[i];
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= alpha * Ad[i];
        ++iterations;
        if (max_abs(r) <= 0.5 * target) break;
        z = M.apply(r);
        const double rz_next = dot(r, z);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = z[i] + (rz_next / rz) * d[i];
        rz = rz_next;
      }
    }
    // Fresh evaluation of the interior residual.
    const std::vector<double> Ax = A.apply(x);
    r = b;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= Ax[i];
    if (max_abs(r) <= target) {
      SolveReport rep;
      rep.solution = assemble_solution(p, x);
      rep.iterations = iterations;
      rep.residual_norm = true_residual(p, rep.solution, sym);
      rep.method = SolveMethod::iterative;
      rep.solution.check_finite("solve_dirichlet solution");
      return rep;
    }
  }
  char msg[160];
  std::snprintf(msg, sizeof msg,
                "solve_dirichlet: CG stalled at residual %.3e against target %.3e "
                "after %d iterations",
                max_abs(r), target, iterations);
  throw SolverError(msg, max_abs(r), iterations);
}

SolveReport solve_dirichlet(const LinearProblem& p, double tol, int max_iter) {
  SolverOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  return solve_dirichlet(p, opts);
}

SolveReport dense_oracle_solve(const LinearProblem& p) {
  validate_problem(p);
  const auto& nodes = p.grid->omega_nodes();
  const int n = static_cast<int>(nodes.size());
  if (n > 4096)
    throw ConfigError("dense_oracle_solve: more than 4096 interior nodes");

  const auto sym = frac_symbol(*p.grid, 2.0 * p.s);
  Eigen::MatrixXd A(n, n);
  for (int j = 0; j < n; ++j) {
    Field e = Field::zeros(p.grid);
    e[nodes[static_cast<std::size_t>(j)]] = 1.0;
    const Field col = apply_symbol(e, std::span<const double>(sym));
    for (int i = 0; i < n; ++i)
      A(i, j) = col[nodes[static_cast<std::size_t>(i)]];
    A(j, j) += p.q[nodes[static_cast<std::size_t>(j)]];
  }

  const double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(1.0, A.cwiseAbs().maxCoeff()))
    throw InternalError("dense_oracle_solve: assembled interior matrix not symmetric");

  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (A + A.transpose()));
  if (llt.info() != Eigen::Success)
    throw SolverError("dense_oracle_solve: Cholesky failed, operator not SPD", 0.0, 0);

  const std::vector<double> rhs = reduced_rhs(p, sym);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b(i) = rhs[static_cast<std::size_t>(i)];
  const Eigen::VectorXd xe = llt.solve(b);

  std::vector<double> x(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = xe(i);

  SolveReport rep;
  rep.solution = assemble_solution(p, x);
  rep.iterations = 0;
  rep.residual_norm = true_residual(p, rep.solution, sym);
  rep.method = SolveMethod::dense;
  rep.solution.check_finite("dense_oracle_solve solution");
  return rep;
}

double coercivity_probe(const LinearProblem& p, RngStream& rng, int count) {
  validate_problem(p);
  const auto sym = frac_symbol(*p.grid, 2.0 * p.s);
  const auto& nodes = p.grid->omega_nodes();
  const InteriorOp A{*p.grid, p.q, sym, nodes, p.grid};
  double worst = 1e300;
  for (int trial = 0; trial < count; ++trial) {
    std::vector<double> x(nodes.size());
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    const double xx = dot(x, x);
    if (xx == 0.0) continue;
    const std::vector<double> Ax = A.apply(x);
    worst = std::min(worst, dot(x, Ax) / xx);
  }
  return worst;
}

}  // namespace nlfs
