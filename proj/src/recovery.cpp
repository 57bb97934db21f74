#include "nlfs/recovery.hpp"

#include <json.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nlfs/errors.hpp"
#include "nlfs/spectral.hpp"
#include "nlfs/util.hpp"

namespace nlfs {

using json = nlohmann::json;

/// Cross-stage cache attached to a task: plateau geometry, realized
/// adjoints, the plateau realization, and the basis-control families. All
/// entries are recomputable; dropping the workspace only costs time.
struct RecoveryWorkspace {
  bool ready = false;
  Field plateau;
  std::array<double, 2> center{};

  bool adjoints_ready = false;
  Field adjoint_q;  ///< reference potential the adjoints were solved with
  std::vector<Field> adjoint_controls;  ///< exterior data, second window
  std::vector<Field> adjoint_fields;    ///< recovery-side homogeneous solutions
  std::vector<std::vector<double>> adjoint_coeffs;  ///< over the probing family
  std::vector<double> adjoint_errors;   ///< absolute L2(Omega) synthesis misfit

  bool chi_ready = false;
  Field chi_q;
  TestFunction chi_staged;
  Field chi_field;
  double chi_error = 0.0;

  bool families_ready = false;
  std::vector<Field> control_family;
  std::vector<Field> adjoint_family;
};

namespace {

MultiIndex ones_index(int k) { return MultiIndex(std::vector<int>(static_cast<std::size_t>(k), 1)); }

Field zero_exterior(const std::shared_ptr<const GridSpec>& grid) {
  Field f = Field::zeros(grid);
  f.set_support(Support::exterior);
  return f;
}

double mask_integral(const Field& f, const std::vector<std::uint8_t>& mask) {
  double sum = 0.0;
  for (int i = 0; i < f.size(); ++i)
    if (mask[static_cast<std::size_t>(i)]) sum += f[i];
  return sum * f.grid()->quad_weight();
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Field reference_q(const RecoveryTask& task) {
  if (task.options.q0.empty()) return Field::zeros(task.grid);
  if (task.options.q0.grid().get() != task.grid.get())
    throw ConfigError("recovery: q0 lives on a different grid");
  return task.options.q0;
}

NlfseSystem make_system(const RecoveryTask& task, const Field& q, Nonlinearity P) {
  NlfseSystem sys;
  sys.grid = task.grid;
  sys.q = q;
  sys.P = std::move(P);
  sys.linear = task.options.solver;
  return sys;
}

NlfseSystem make_linear_system(const RecoveryTask& task, const Field& q) {
  return make_system(task, q, Nonlinearity(task.params));
}

/// Coordinates of `x` over `family` in the L2(mask) sense, by the dense
/// normal equations of the small Gram system. Works on raw values so the
/// field and the family may live on distinct (but identical) grid objects.
std::pair<std::vector<double>, double> expand_in_span(
    const Field& x, const std::vector<Field>& family,
    const std::vector<std::uint8_t>& mask, double quad_weight) {
  const int n = static_cast<int>(family.size());
  const auto dot = [&](const Field& a, const Field& b) {
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i)
      if (mask[static_cast<std::size_t>(i)]) s += a[i] * b[i];
    return s * quad_weight;
  };
  Eigen::MatrixXd g(n, n);
  Eigen::VectorXd rhs(n);
  for (int i = 0; i < n; ++i) {
    rhs(i) = dot(family[static_cast<std::size_t>(i)], x);
    for (int j = 0; j <= i; ++j) {
      g(i, j) = dot(family[static_cast<std::size_t>(i)], family[static_cast<std::size_t>(j)]);
      g(j, i) = g(i, j);
    }
  }
  const Eigen::VectorXd c = g.ldlt().solve(rhs);
  double res2 = dot(x, x) - 2.0 * c.dot(rhs) + c.dot(g * c);
  res2 = std::max(res2, 0.0);
  const double xn = std::sqrt(std::max(dot(x, x), 0.0));
  const double rel = xn > 0.0 ? std::sqrt(res2) / xn : std::sqrt(res2);
  return {std::vector<double>(c.data(), c.data() + n), rel};
}

/// Top-order expansion source T_alpha, alpha = e_1 + .. + e_k, with the
/// first-order terms prescribed to be `h` (values plus optional derivative
/// tables). Intermediate orders solve the zero-data problems of `sys`.
Field staged_top_source(const NlfseSystem& sys, std::span<const TestFunction> h) {
  const int k = static_cast<int>(h.size());
  std::map<MultiIndex, Field> terms;
  DerivTableMap tables;
  for (int i = 0; i < k; ++i) {
    const MultiIndex ei = MultiIndex::unit(k, i);
    terms.emplace(ei, h[static_cast<std::size_t>(i)].value);
    if (!h[static_cast<std::size_t>(i)].derivs.empty())
      tables.emplace(ei, h[static_cast<std::size_t>(i)].derivs);
  }
  const DerivTableMap* tab = tables.empty() ? nullptr : &tables;
  for (int ord = 2; ord < k; ++ord) {
    for (const MultiIndex& beta : indices_with_order(k, ord)) {
      if (!beta.is_binary()) continue;
      LinearProblem p{sys.grid, sys.P.params().s, sys.q,
                      expansion_source(sys, beta, terms, tab), zero_exterior(sys.grid)};
      terms.emplace(beta, solve_dirichlet(p, sys.linear).solution);
    }
  }
  return expansion_source(sys, ones_index(k), terms, tab);
}

/// -int_Omega T_alpha v0: the polarization pairing predicted by `sys` for
/// prescribed first-order behavior. The sign matches the exterior-route
/// derivative d^alpha <Lambda, g> = int_ext g (-Delta)^s w_alpha.
double expansion_pairing(const NlfseSystem& sys, std::span<const TestFunction> h,
                         const Field& v0) {
  const Field top = staged_top_source(sys, h);
  return -inner_product(top, v0, sys.grid->omega_mask());
}

void validate_bumps(const RecoveryTask& task) {
  if (task.bump_family.empty()) throw ConfigError("recovery: empty bump family");
  for (std::size_t i = 0; i < task.bump_family.size(); ++i) {
    const Field& b = task.bump_family[i];
    if (b.grid().get() != task.grid.get())
      throw ConfigError("recovery: bump " + std::to_string(i) + " on a different grid");
    b.check_finite("recovery bump");
    for (int n = 0; n < b.size(); ++n)
      if (b[n] < 0.0)
        throw ConfigError("recovery: bump " + std::to_string(i) + " is not nonnegative");
    const double mass = mask_integral(b, task.grid->full_mask());
    if (std::abs(mass - 1.0) > 1e-8)
      throw ConfigError("recovery: bump " + std::to_string(i) +
                        " does not have unit integral");
    if (!b.supported_on(task.recovery_region))
      throw ConfigError("recovery: bump " + std::to_string(i) +
                        " leaks outside the recovery region");
  }
}

void validate_task(const RecoveryTask& task) {
  if (!task.grid) throw ConfigError("recovery: null grid");
  task.params.validate();
  const auto& grid = *task.grid;
  if (static_cast<int>(task.recovery_region.size()) != grid.node_count())
    throw ConfigError("recovery: region mask size != node count");
  bool any = false;
  for (int i = 0; i < grid.node_count(); ++i) {
    const auto n = static_cast<std::size_t>(i);
    if (!task.recovery_region[n]) continue;
    any = true;
    if (!grid.omega_mask()[n])
      throw ConfigError("recovery: region mask leaves Omega");
  }
  if (!any) throw ConfigError("recovery: empty recovery region");
  validate_bumps(task);

  const MeasurementSource& src = task.dn_source;
  if (task.mode == RecoveryMode::oracle) {
    if (!src.has_truth())
      throw ConfigError("recovery: oracle mode needs a live truth backend");
  } else if (!src.has_truth() && !src.has_archive()) {
    throw ConfigError("recovery: exterior mode needs a truth or an archive");
  }
  if (src.has_truth() && src.truth()->grid.get() != task.grid.get())
    throw ConfigError("recovery: task and measurement backend must share the grid");
  if (src.has_archive()) {
    const GridSpec& ag = *src.archive_grid();
    if (ag.omega_mask() != grid.omega_mask() || ag.exterior_mask() != grid.exterior_mask() ||
        ag.w1_mask() != grid.w1_mask() || ag.w2_mask() != grid.w2_mask())
      throw ConfigError("recovery: archive geometry differs from the task grid");
  }
  if (task.mode == RecoveryMode::exterior) {
    bool w1 = false, w2 = false;
    for (const auto v : grid.w1_mask()) w1 = w1 || v;
    for (const auto v : grid.w2_mask()) w2 = w2 || v;
    if (!w1 || !w2)
      throw ConfigError("recovery: exterior mode needs both measurement windows");
    if (src.has_archive() && !src.has_truth() &&
        task.options.route != ControlRoute::basis)
      throw ConfigError("recovery: replay requires the basis control route");
  }
  if (task.options.q_iterations < 1)
    throw ConfigError("recovery: q_iterations must be >= 1");
  if (!(task.options.plateau_frac > 0.0))
    throw ConfigError("recovery: plateau_frac must be positive");
  if (task.options.jobs < 1) throw ConfigError("recovery: jobs must be >= 1");
}

/// Axis-aligned bounding box of the nonzero nodes of `mask`.
std::pair<std::array<double, 2>, std::array<double, 2>> mask_bounds(
    const GridSpec& grid, const std::vector<std::uint8_t>& mask) {
  std::array<double, 2> lo{std::numeric_limits<double>::max(),
                           std::numeric_limits<double>::max()};
  std::array<double, 2> hi{std::numeric_limits<double>::lowest(),
                           std::numeric_limits<double>::lowest()};
  for (int n = 0; n < grid.node_count(); ++n) {
    if (!mask[static_cast<std::size_t>(n)]) continue;
    const auto x = grid.coords(n);
    for (int d = 0; d < grid.dim(); ++d) {
      lo[static_cast<std::size_t>(d)] = std::min(lo[static_cast<std::size_t>(d)], x[static_cast<std::size_t>(d)]);
      hi[static_cast<std::size_t>(d)] = std::max(hi[static_cast<std::size_t>(d)], x[static_cast<std::size_t>(d)]);
    }
  }
  return {lo, hi};
}

RecoveryWorkspace& ensure_workspace(RecoveryTask& task) {
  if (!task.workspace) task.workspace = std::make_shared<RecoveryWorkspace>();
  RecoveryWorkspace& ws = *task.workspace;
  if (ws.ready) return ws;

  const GridSpec& grid = *task.grid;
  // Plateau core: bounding box of every bump support, so chi == 1 wherever a
  // bump can see. The taper width is a fraction of the Omega extent, clipped
  // so the cutoff stays supported inside Omega.
  std::vector<std::uint8_t> support(static_cast<std::size_t>(grid.node_count()), 0);
  for (const Field& b : task.bump_family)
    for (int n = 0; n < b.size(); ++n)
      if (b[n] != 0.0) support[static_cast<std::size_t>(n)] = 1;
  const auto [core_lo, core_hi] = mask_bounds(grid, support);
  const auto [om_lo, om_hi] = mask_bounds(grid, grid.omega_mask());
  double transition = std::numeric_limits<double>::max();
  for (int d = 0; d < grid.dim(); ++d) {
    const auto i = static_cast<std::size_t>(d);
    const double want = task.options.plateau_frac * (om_hi[i] - om_lo[i]);
    const double room = std::min(core_lo[i] - om_lo[i], om_hi[i] - core_hi[i]);
    transition = std::min(transition, std::min(want, room));
  }
  transition = std::max(transition, grid.spacing());
  ws.plateau = plateau_field(task.grid, core_lo, core_hi, transition, 6);
  ws.plateau = masked(ws.plateau, grid.omega_mask());
  ws.plateau.set_support(Support::interior);
  for (int d = 0; d < grid.dim(); ++d) {
    const auto i = static_cast<std::size_t>(d);
    ws.center[i] = 0.5 * (core_lo[i] + core_hi[i]);
  }
  ws.ready = true;
  return ws;
}

void ensure_families(RecoveryTask& task, RecoveryWorkspace& ws) {
  if (ws.families_ready) return;
  const MeasurementSource& src = task.dn_source;
  std::vector<BumpSpec> sb = task.options.control_bumps;
  std::vector<BumpSpec> pb = task.options.adjoint_bumps;
  if (src.has_archive()) {
    // Replay can only pair what the archive covers.
    sb = src.archive()->source_bumps;
    pb = src.archive()->probe_bumps;
  } else if (task.options.route == ControlRoute::basis && (sb.empty() || pb.empty())) {
    const GridSpec& grid = *task.grid;
    const auto lattice = [&](const RegionSpec& r) {
      std::array<double, 2> lo = r.lo, hi = r.hi;
      if (r.kind == RegionSpec::Kind::ball)
        for (int d = 0; d < grid.dim(); ++d) {
          const auto i = static_cast<std::size_t>(d);
          lo[i] = r.center[i] - r.radius;
          hi[i] = r.center[i] + r.radius;
        }
      double extent = std::numeric_limits<double>::max();
      for (int d = 0; d < grid.dim(); ++d) {
        const auto i = static_cast<std::size_t>(d);
        extent = std::min(extent, hi[i] - lo[i]);
      }
      const int per_axis = grid.dim() == 1 ? 6 : 3;
      return window_bump_lattice(grid, lo, hi, per_axis, 0.3 * extent, 6);
    };
    if (!grid.regions().w1 || !grid.regions().w2)
      throw ConfigError("recovery: basis route needs window regions");
    if (sb.empty()) sb = lattice(*grid.regions().w1);
    if (pb.empty()) pb = lattice(*grid.regions().w2);
  }
  if (task.options.route == ControlRoute::basis || src.has_archive()) {
    ws.control_family = sample_exterior_family(task.grid, sb);
    ws.adjoint_family = sample_exterior_family(task.grid, pb);
  }
  ws.families_ready = true;
}

struct Realized {
  TestFunction staged;    ///< exterior control (+ family coords on the basis route)
  Field field;            ///< recovery-side solution carrying the control
  double abs_err = 0.0;   ///< L2(Omega) misfit against the target
  double rel_err = 0.0;
};

/// Synthesizes an exterior control on `window` whose solution under q_ref
/// tracks `target` on Omega, then realizes the recovery-side solution field.
Realized realize_target(RecoveryTask& task, RecoveryWorkspace& ws, const Field& q_ref,
                        const Field& target, const std::vector<std::uint8_t>& window,
                        bool adjoint_side) {
  const NlfseSystem sys = make_linear_system(task, q_ref);
  Realized out;
  RungeResult r;
  if (task.options.route == ControlRoute::basis || task.dn_source.has_archive()) {
    ensure_families(task, ws);
    const auto& family = adjoint_side ? ws.adjoint_family : ws.control_family;
    r = runge_control_basis(sys, target, family, task.options.runge);
    out.staged.coeffs = r.coeffs;
  } else {
    r = runge_control(sys, target, window, task.options.runge);
  }
  out.staged.value = r.control;
  out.abs_err = r.fit_error;
  out.rel_err = r.achieved_err();
  LinearProblem p{task.grid, task.params.s, q_ref, Field::zeros(task.grid), r.control};
  out.field = solve_dirichlet(p, task.options.solver).solution;
  return out;
}

/// Adjoint-side targets: the plateau modulated by Legendre polynomials over
/// the recovery region. Narrow bumps are essentially unreachable through the
/// severely smoothing trace operator, while these low-frequency modes are;
/// the realized weights then form a well-conditioned moment system against
/// the bump family, which is all the least-squares localization needs.
/// Probing family the adjoint controls are drawn from: the archived probe
/// family under replay, the configured family when given, a nodal basis of
/// the second window in 1d, and a window lattice in 2d (nodal would need one
/// solve per window node).
std::vector<Field> adjoint_probing_family(const RecoveryTask& task) {
  const MeasurementSource& src = task.dn_source;
  const GridSpec& grid = *task.grid;
  if (src.has_archive()) return sample_exterior_family(task.grid, src.archive()->probe_bumps);
  if (!task.options.adjoint_bumps.empty())
    return sample_exterior_family(task.grid, task.options.adjoint_bumps);
  if (grid.dim() == 1) {
    std::vector<Field> family;
    for (int n = 0; n < grid.node_count(); ++n) {
      if (!grid.w2_mask()[static_cast<std::size_t>(n)]) continue;
      Field f = Field::zeros(task.grid);
      f[n] = 1.0;
      f.set_support(Support::exterior);
      family.push_back(std::move(f));
    }
    return family;
  }
  if (!grid.regions().w2) throw ConfigError("recovery: second window region required");
  const RegionSpec& r = *grid.regions().w2;
  std::array<double, 2> lo = r.lo, hi = r.hi;
  if (r.kind == RegionSpec::Kind::ball)
    for (int d = 0; d < grid.dim(); ++d) {
      const auto i = static_cast<std::size_t>(d);
      lo[i] = r.center[i] - r.radius;
      hi[i] = r.center[i] + r.radius;
    }
  double extent = std::min(hi[0] - lo[0], grid.dim() == 2 ? hi[1] - lo[1] : hi[0] - lo[0]);
  return sample_exterior_family(
      task.grid, window_bump_lattice(grid, lo, hi, 4, 0.3 * extent, 6));
}

/// Adjoint synthesis. The recovery identities are shape-free on the adjoint
/// side — the probe-side solution multiplies both the measured and the
/// synthetic pairings — so instead of chasing prescribed targets through the
/// severely smoothing trace operator (whose misfit would only degrade
/// conditioning), the adjoints are the top singular directions of the
/// probing-family -> recovery-region trace map: exactly realizable by
/// construction, mutually orthogonal on the region, scaled to unit strength.
/// Trailing directions below the rank guard mean the window cannot localize
/// that many bumps.
void ensure_adjoints(RecoveryTask& task, RecoveryWorkspace& ws, const Field& q_ref) {
  if (task.mode == RecoveryMode::oracle) {
    if (!ws.adjoints_ready) {
      ws.adjoint_fields = task.bump_family;
      ws.adjoint_controls.clear();
      ws.adjoint_coeffs.clear();
      ws.adjoint_errors.assign(task.bump_family.size(), 0.0);
      ws.adjoints_ready = true;
    }
    return;
  }
  if (ws.adjoints_ready && (ws.adjoint_q - q_ref).max_norm() == 0.0) return;
  const GridSpec& grid = *task.grid;
  const int nb = static_cast<int>(task.bump_family.size());
  const std::vector<Field> family = adjoint_probing_family(task);
  const int r = static_cast<int>(family.size());
  if (r < nb)
    throw ConfigError("recovery: adjoint probing family smaller than the bump family");

  std::vector<int> region_nodes;
  for (int n = 0; n < grid.node_count(); ++n)
    if (task.recovery_region[static_cast<std::size_t>(n)]) region_nodes.push_back(n);

  std::vector<Field> traces(static_cast<std::size_t>(r));
  parallel_for(r, task.options.jobs, [&](int j) {
    LinearProblem p{task.grid, task.params.s, q_ref, Field::zeros(task.grid),
                    family[static_cast<std::size_t>(j)]};
    traces[static_cast<std::size_t>(j)] = solve_dirichlet(p, task.options.solver).solution;
  });
  Eigen::MatrixXd T(static_cast<Eigen::Index>(region_nodes.size()), r);
  for (int j = 0; j < r; ++j)
    for (std::size_t i = 0; i < region_nodes.size(); ++i)
      T(static_cast<Eigen::Index>(i), j) = traces[static_cast<std::size_t>(j)][region_nodes[i]];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(T, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s(0) <= 0.0 || s(nb - 1) < 1e-10 * s(0))
    throw ConfigError(
        "recovery: probing window cannot localize the bump family "
        "(trace rank below bump count): insufficient localization");

  ws.adjoint_controls.assign(static_cast<std::size_t>(nb), Field());
  ws.adjoint_fields.assign(static_cast<std::size_t>(nb), Field());
  ws.adjoint_coeffs.assign(static_cast<std::size_t>(nb), {});
  ws.adjoint_errors.assign(static_cast<std::size_t>(nb), 0.0);
  for (int j = 0; j < nb; ++j) {
    Field control = Field::zeros(task.grid);
    Field field = Field::zeros(task.grid);
    std::vector<double> coeffs(static_cast<std::size_t>(r), 0.0);
    for (int t = 0; t < r; ++t) {
      const double w = svd.matrixV()(t, j) / s(j);
      coeffs[static_cast<std::size_t>(t)] = w;
      control.axpy(w, family[static_cast<std::size_t>(t)]);
      field.axpy(w, traces[static_cast<std::size_t>(t)]);
    }
    control.set_support(Support::exterior);
    ws.adjoint_controls[static_cast<std::size_t>(j)] = std::move(control);
    ws.adjoint_fields[static_cast<std::size_t>(j)] = std::move(field);
    ws.adjoint_coeffs[static_cast<std::size_t>(j)] = std::move(coeffs);
  }
  ws.adjoint_q = q_ref;
  ws.adjoints_ready = true;
}

void ensure_chi(RecoveryTask& task, RecoveryWorkspace& ws, const Field& q_ref) {
  if (ws.chi_ready && (ws.chi_q - q_ref).max_norm() == 0.0) return;
  Realized r = realize_target(task, ws, q_ref, ws.plateau, task.grid->w1_mask(), false);
  ws.chi_staged = r.staged;
  ws.chi_field = r.field;
  ws.chi_error = r.abs_err;
  ws.chi_q = q_ref;
  ws.chi_ready = true;
}

/// Least-squares solve of the bump system; rank deficiency means the bump
/// family cannot localize the unknown.
Eigen::VectorXd solve_bump_lsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < A.cols())
    throw ConfigError("recovery: bump system rank-deficient: insufficient localization");
  return qr.solve(rhs);
}

Field combine_bumps(const RecoveryTask& task, const Eigen::VectorXd& c) {
  Field out = Field::zeros(task.grid);
  for (int j = 0; j < c.size(); ++j)
    out.axpy(c(j), task.bump_family[static_cast<std::size_t>(j)]);
  out.set_support(Support::interior);
  return out;
}

/// Field-level error implied by per-row measurement errors: solve the same
/// localization system for the error vector and take the norm of the bump
/// combination it produces. Signs are stripped before combining, which can
/// only enlarge the result since the bumps are nonnegative.
double propagate_row_error(const RecoveryTask& task, const Eigen::MatrixXd& A,
                           const Eigen::VectorXd& rowerr) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  const Eigen::VectorXd ec = qr.solve(rowerr).cwiseAbs();
  return l2_norm(combine_bumps(task, ec), task.grid->omega_mask());
}

Nonlinearity known_nonlinearity(const RecoveryTask& task, const CoeffMap& a_known) {
  Nonlinearity P(task.params);
  for (const auto& [key, field] : a_known)
    if (key.first >= 1) P.set_coeff(key.first, key.second, field);
  return P;
}

Field known_potential(const RecoveryTask& task, const CoeffMap& a_known) {
  const auto it = a_known.find({0, MultiIndex::zeros(task.grid->dim())});
  if (it != a_known.end()) {
    if (it->second.grid().get() != task.grid.get())
      throw ConfigError("recovery: known potential on a different grid");
    return it->second;
  }
  return reference_q(task);
}

}  // namespace

// ---------------------------------------------------------------------------
// MeasurementSource

MeasurementSource MeasurementSource::from_system(NlfseSystem truth, FdOptions fd) {
  if (!truth.grid) throw ConfigError("measurement source: null grid");
  if (!(fd.eps_step > 0.0))
    throw ConfigError("measurement source: eps_step must be positive");
  if (fd.jobs < 1) throw ConfigError("measurement source: jobs must be >= 1");
  MeasurementSource src;
  src.truth_ = std::make_shared<NlfseSystem>(std::move(truth));
  src.fd_ = fd;
  return src;
}

MeasurementSource MeasurementSource::with_fd(const FdOptions& fd) const {
  if (!(fd.eps_step > 0.0))
    throw ConfigError("measurement source: eps_step must be positive");
  MeasurementSource src = *this;
  src.fd_ = fd;
  return src;
}

MeasurementSource MeasurementSource::from_archive(DNData archive) {
  if (archive.source_bumps.empty() || archive.probe_bumps.empty())
    throw ConfigError("measurement source: archive without probing families");
  if (archive.max_order < 1)
    throw ConfigError("measurement source: archive without tensors");
  MeasurementSource src;
  src.archive_ = std::make_shared<DNData>(std::move(archive));
  src.archive_grid_ = rebuild_grid(*src.archive_);
  src.archive_sources_ = sample_exterior_family(src.archive_grid_, src.archive_->source_bumps);
  src.archive_probes_ = sample_exterior_family(src.archive_grid_, src.archive_->probe_bumps);
  return src;
}

namespace {

/// Family coordinates of a staged function: trust `coeffs` when present,
/// otherwise expand the value over the family and insist it lies in the
/// span. Fields may live on a distinct grid object with equal geometry.
std::vector<double> family_coords(const TestFunction& f, const std::vector<Field>& family,
                                  const std::vector<std::uint8_t>& mask, double quad_weight,
                                  const char* what) {
  if (!f.coeffs.empty()) {
    if (f.coeffs.size() != family.size())
      throw ConfigError(std::string("replay: ") + what + " coefficient count != family size");
    return f.coeffs;
  }
  if (f.value.empty()) throw ConfigError(std::string("replay: empty ") + what);
  if (static_cast<std::size_t>(f.value.size()) != mask.size())
    throw ConfigError(std::string("replay: ") + what + " size != archive grid");
  auto [c, rel] = expand_in_span(f.value, family, mask, quad_weight);
  if (rel > 1e-8)
    throw ConfigError(std::string("replay: ") + what +
                      " outside the archived family span (residual " + fmt17(rel) + ")");
  return c;
}

}  // namespace

double MeasurementSource::first_order(const TestFunction& f, const Field& probe) const {
  if (archive_) {
    const auto c = family_coords(f, archive_sources_, archive_grid_->exterior_mask(),
                                 archive_grid_->quad_weight(), "source");
    TestFunction ptf;
    ptf.value = probe;
    const auto p = family_coords(ptf, archive_probes_, archive_grid_->exterior_mask(),
                                 archive_grid_->quad_weight(), "probe");
    const int r = static_cast<int>(archive_sources_.size());
    double value = 0.0;
    for (int j = 0; j < r; ++j) {
      const auto it = archive_->derivative.find(MultiIndex::unit(r, j));
      if (it == archive_->derivative.end())
        throw ConfigError("replay: archive lacks an order-one tensor");
      double row = 0.0;
      for (std::size_t t = 0; t < p.size(); ++t) row += p[t] * it->second[t];
      value += c[static_cast<std::size_t>(j)] * row;
    }
    return value;
  }
  if (!truth_) throw ConfigError("measurement source is empty");
  // The derivative is linear in the control: normalize to unit sup norm so
  // the finite-difference steps stay inside the contraction regime whatever
  // amplitude the control synthesis produced.
  const double scale = f.value.max_norm();
  if (scale == 0.0) return 0.0;
  return scale * dn_derivative(*truth_, {f.value * (1.0 / scale)}, MultiIndex{1},
                               probe, fd_);
}

double MeasurementSource::mixed(std::span<const TestFunction> sources,
                                const Field& probe) const {
  const int k = static_cast<int>(sources.size());
  if (k < 1) throw ConfigError("measurement source: no staged sources");
  if (archive_) {
    if (k > archive_->max_order)
      throw ConfigError("replay: archive max_order below the requested derivative");
    const int r = static_cast<int>(archive_sources_.size());
    std::vector<std::vector<double>> c;
    c.reserve(sources.size());
    for (const TestFunction& f : sources)
      c.push_back(family_coords(f, archive_sources_, archive_grid_->exterior_mask(),
                                archive_grid_->quad_weight(), "source"));
    TestFunction ptf;
    ptf.value = probe;
    const auto p = family_coords(ptf, archive_probes_, archive_grid_->exterior_mask(),
                                 archive_grid_->quad_weight(), "probe");
    // Probe-contracted tensors of order k.
    std::map<MultiIndex, double> s;
    for (const auto& [alpha, values] : archive_->derivative) {
      if (alpha.order() != k) continue;
      double row = 0.0;
      for (std::size_t t = 0; t < p.size(); ++t) row += p[t] * values[t];
      s.emplace(alpha, row);
    }
    // Multilinear contraction over every slot assignment.
    std::vector<int> tuple(static_cast<std::size_t>(k), 0);
    double value = 0.0;
    while (true) {
      std::vector<int> counts(static_cast<std::size_t>(r), 0);
      double w = 1.0;
      for (int i = 0; i < k; ++i) {
        const int j = tuple[static_cast<std::size_t>(i)];
        counts[static_cast<std::size_t>(j)] += 1;
        w *= c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
      const auto it = s.find(MultiIndex(counts));
      if (it == s.end())
        throw ConfigError("replay: archive lacks an order-" + std::to_string(k) + " tensor");
      value += w * it->second;
      int pos = k - 1;
      while (pos >= 0 && tuple[static_cast<std::size_t>(pos)] == r - 1) {
        tuple[static_cast<std::size_t>(pos)] = 0;
        --pos;
      }
      if (pos < 0) break;
      tuple[static_cast<std::size_t>(pos)] += 1;
    }
    return value;
  }
  if (!truth_) throw ConfigError("measurement source is empty");
  // Multilinearity in the k slots: normalize every control to unit sup norm
  // and scale the derivative back, keeping the finite-difference steps
  // inside the contraction regime whatever the synthesis produced.
  double scale = 1.0;
  std::vector<Field> data;
  data.reserve(sources.size());
  for (const TestFunction& f : sources) {
    const double s = f.value.max_norm();
    if (s == 0.0) return 0.0;
    scale *= s;
    data.push_back(f.value * (1.0 / s));
  }
  return scale * dn_derivative(*truth_, data, ones_index(k), probe, fd_);
}

double MeasurementSource::potential_pairing(const Field& weight) const {
  if (!truth_) throw ConfigError("measurement source: oracle pairing needs a truth");
  if (weight.grid().get() != truth_->grid.get())
    throw ConfigError("measurement source: weight on a different grid");
  return inner_product(truth_->q, weight, truth_->grid->omega_mask());
}

double MeasurementSource::cascade_pairing(std::span<const TestFunction> h,
                                          const Field& v0) const {
  if (!truth_) throw ConfigError("measurement source: oracle pairing needs a truth");
  if (h.size() < 2)
    throw ConfigError("measurement source: cascade pairing needs >= 2 directions");
  // Exterior-supported arguments without prescribed tables are exterior data:
  // realize their first-order solution under the truth operator, so the value
  // is the exact limit of the finite-difference measurement for the same
  // controls. Interior-supported arguments stay prescribed as given.
  const auto& ext = truth_->grid->exterior_mask();
  const auto realize = [&](const Field& f) {
    LinearProblem p{truth_->grid, truth_->P.params().s, truth_->q,
                    Field::zeros(truth_->grid), f};
    return solve_dirichlet(p, truth_->linear).solution;
  };
  std::vector<TestFunction> solved;
  std::span<const TestFunction> use = h;
  bool any = false;
  for (const TestFunction& f : h)
    any = any || (f.derivs.empty() && f.value.supported_on(ext));
  if (any) {
    solved.assign(h.begin(), h.end());
    for (TestFunction& f : solved)
      if (f.derivs.empty() && f.value.supported_on(ext)) f.value = realize(f.value);
    use = solved;
  }
  if (v0.supported_on(ext)) return expansion_pairing(*truth_, use, realize(v0));
  return expansion_pairing(*truth_, use, v0);
}

// ---------------------------------------------------------------------------
// Shared small pieces

double region_relative_error(const Field& est, const Field& truth,
                             const std::vector<std::uint8_t>& mask) {
  const Field diff = est - truth;
  const double num = l2_norm(diff, mask);
  const double den = l2_norm(truth, mask);
  return den > 1e-300 ? num / den : num;
}

std::vector<std::uint8_t> default_recovery_region(const GridSpec& grid, double inset_frac) {
  if (!(inset_frac >= 0.0) || inset_frac >= 0.5)
    throw ConfigError("recovery region: inset fraction must lie in [0, 0.5)");
  const auto [lo, hi] = mask_bounds(grid, grid.omega_mask());
  std::vector<std::uint8_t> region(static_cast<std::size_t>(grid.node_count()), 0);
  for (int n = 0; n < grid.node_count(); ++n) {
    if (!grid.omega_mask()[static_cast<std::size_t>(n)]) continue;
    const auto x = grid.coords(n);
    bool in = true;
    for (int d = 0; d < grid.dim(); ++d) {
      const auto i = static_cast<std::size_t>(d);
      const double inset = inset_frac * (hi[i] - lo[i]);
      in = in && x[i] >= lo[i] + inset && x[i] <= hi[i] - inset;
    }
    region[static_cast<std::size_t>(n)] = in ? 1 : 0;
  }
  return region;
}

Field unit_mass_bump(std::shared_ptr<const GridSpec> grid, const BumpSpec& spec) {
  Field b = sample_bump(grid, spec);
  double mass = 0.0;
  for (int i = 0; i < b.size(); ++i) mass += b[i];
  mass *= grid->quad_weight();
  if (!(mass > 1e-300))
    throw ConfigError("unit_mass_bump: bump samples to zero on this grid");
  b *= 1.0 / mass;
  return b;
}

Field sym_product_field(std::span<const TestFunction> h, const MultiIndex& beta,
                        DerivScheme scheme) {
  const int k = static_cast<int>(h.size());
  if (k < 1) throw ConfigError("sym_product_field: empty function list");
  const auto grid = h[0].value.grid();
  if (!grid) throw ConfigError("sym_product_field: empty field");
  std::vector<Field> dv;
  dv.reserve(h.size());
  for (const TestFunction& f : h) {
    if (f.value.grid().get() != grid.get())
      throw ConfigError("sym_product_field: mixed grids");
    if (beta.is_zero()) {
      dv.push_back(f.value);
    } else if (const auto it = f.derivs.find(beta); it != f.derivs.end()) {
      dv.push_back(it->second);
    } else {
      dv.push_back(partial_derivative(f.value, beta, scheme));
    }
  }
  Field out = Field::zeros(grid);
  for (int j = 0; j < k; ++j) {
    Field p = dv[static_cast<std::size_t>(j)];
    for (int i = 0; i < k; ++i)
      if (i != j) p = hadamard(p, h[static_cast<std::size_t>(i)].value);
    out += p;
  }
  out *= static_cast<double>(factorial(k - 1));
  return out;
}

// ---------------------------------------------------------------------------
// Potential stage

Field recover_q(RecoveryTask& task, LevelRecord* record) {
  validate_task(task);
  RecoveryWorkspace& ws = ensure_workspace(task);
  const GridSpec& grid = *task.grid;
  const auto& omega = grid.omega_mask();
  const int nb = static_cast<int>(task.bump_family.size());
  const Field q_ref = reference_q(task);

  LevelRecord rec;
  rec.k = 1;
  if (record) rec.incoming_budget = record->incoming_budget;

  Eigen::MatrixXd A(nb, nb);
  Eigen::VectorXd rhs(nb);
  Eigen::VectorXd rowerr = Eigen::VectorXd::Zero(nb);
  Field q_hat;
  double last_step = 0.0;

  if (task.mode == RecoveryMode::oracle) {
    // Interior products prescribed to equal the bumps: the first-order
    // identity reads off int (q* - q_ref) b_i exactly.
    for (int i = 0; i < nb; ++i) {
      const Field& b = task.bump_family[static_cast<std::size_t>(i)];
      rhs(i) = task.dn_source.potential_pairing(b) - inner_product(q_ref, b, omega);
      for (int j = 0; j < nb; ++j)
        A(i, j) = inner_product(task.bump_family[static_cast<std::size_t>(j)], b, omega);
      rec.measurement_scale = std::max(rec.measurement_scale, std::abs(rhs(i)));
    }
    const Eigen::VectorXd c = solve_bump_lsq(A, rhs);
    q_hat = q_ref + combine_bumps(task, c);
    rec.noise_floor = 1e-14 * std::max(1.0, rec.measurement_scale);
    rowerr.setConstant(rec.noise_floor);
  } else {
    // Exterior pipeline: one data-side control tracking the plateau, one
    // adjoint control per bump, measurements taken once, then Born-style
    // passes that only re-solve the synthetic side around the latest q_hat.
    ensure_adjoints(task, ws, q_ref);
    ensure_chi(task, ws, q_ref);
    const bool live = task.dn_source.has_truth();
    // Empirical per-row measurement error: repeat each reading at twice the
    // step; the difference tracks whichever of bias or solver noise dominates.
    MeasurementSource coarse = task.dn_source;
    if (live) {
      FdOptions fd2 = task.dn_source.fd();
      fd2.eps_step *= 2.0;
      coarse = task.dn_source.with_fd(fd2);
    }
    std::vector<double> meas(static_cast<std::size_t>(nb), 0.0);
    std::vector<double> merr(static_cast<std::size_t>(nb), 0.0);
    parallel_for(nb, task.options.jobs, [&](int i) {
      const auto ui = static_cast<std::size_t>(i);
      meas[ui] = task.dn_source.first_order(ws.chi_staged, ws.adjoint_controls[ui]);
      if (live)
        merr[ui] = std::abs(coarse.first_order(ws.chi_staged, ws.adjoint_controls[ui]) -
                            meas[ui]);
    });
    for (int i = 0; i < nb; ++i) {
      rec.measurement_scale = std::max(rec.measurement_scale, std::abs(meas[static_cast<std::size_t>(i)]));
      rowerr(i) = merr[static_cast<std::size_t>(i)];
    }
    rec.noise_floor = rowerr.maxCoeff();

    q_hat = q_ref;
    const Field f = ws.chi_staged.value;
    for (int pass = 0; pass < task.options.q_iterations; ++pass) {
      const NlfseSystem sys_cur = make_linear_system(task, q_hat);
      LinearProblem pf{task.grid, task.params.s, q_hat, Field::zeros(task.grid), f};
      const Field v_data = solve_dirichlet(pf, task.options.solver).solution;
      std::vector<Field> v_adj(static_cast<std::size_t>(nb));
      parallel_for(nb, task.options.jobs, [&](int i) {
        LinearProblem pa{task.grid, task.params.s, q_hat, Field::zeros(task.grid),
                         ws.adjoint_controls[static_cast<std::size_t>(i)]};
        v_adj[static_cast<std::size_t>(i)] = solve_dirichlet(pa, task.options.solver).solution;
      });
      for (int i = 0; i < nb; ++i) {
        const Field weight =
            masked(hadamard(v_data, v_adj[static_cast<std::size_t>(i)]), omega);
        rhs(i) = meas[static_cast<std::size_t>(i)] -
                 dn_pair(sys_cur, v_data, ws.adjoint_controls[static_cast<std::size_t>(i)]);
        for (int j = 0; j < nb; ++j)
          A(i, j) = inner_product(task.bump_family[static_cast<std::size_t>(j)], weight, omega);
      }
      const Eigen::VectorXd c = solve_bump_lsq(A, rhs);
      if (std::getenv("NLFS_DEBUG_RECOVERY")) {
        Eigen::JacobiSVD<Eigen::MatrixXd> dsvd(A);
        std::string line = "[dbg] q pass Asv:";
        for (int i = 0; i < dsvd.singularValues().size(); ++i)
          line += " " + fmt17(dsvd.singularValues()(i));
        line += "\n  c:";
        for (int i = 0; i < nb; ++i) line += " " + fmt17(c(i));
        std::fprintf(stderr, "%s\n", line.c_str());
      }
      const Field step = combine_bumps(task, c);
      last_step = l2_norm(step, omega);
      q_hat = q_hat + step;
      // Project onto the admissible class q >= 0: keeps every later solve
      // coercive and is exact for admissible truths up to the step noise.
      for (double& v : q_hat.values())
        if (v < 0.0) v = 0.0;
      q_hat.set_support(Support::interior);
    }
  }

  // Field-level budget: measurement errors pushed through the localization
  // system just solved, plus the size of the last Born correction as a proxy
  // for the untaken tail.
  rec.budget = propagate_row_error(task, A, rowerr) + last_step +
               rec.incoming_budget;
  rec.completed = true;
  if (record) *record = rec;
  return q_hat;
}

// ---------------------------------------------------------------------------
// Polarization measurement

double measure_T_functional(int k, const Field& g, const RecoveryTask& task) {
  if (!task.grid) throw ConfigError("measure_T_functional: null grid");
  if (k < 2 || k > task.params.K)
    throw ConfigError("measure_T_functional: k must lie in [2, K]");
  if (static_cast<int>(task.staged.size()) != k)
    throw ConfigError("measure_T_functional: staged source count != k");
  if (g.empty()) throw ConfigError("measure_T_functional: empty probe");
  if (task.mode == RecoveryMode::oracle)
    return task.dn_source.cascade_pairing(task.staged, g);
  return task.dn_source.mixed(task.staged, g);
}

// ---------------------------------------------------------------------------
// Nonlinear levels

std::map<MultiIndex, Field> recover_a_level(int k, RecoveryTask& task,
                                            const CoeffMap& a_known,
                                            LevelRecord* record) {
  validate_task(task);
  if (k < 2 || k > task.params.K)
    throw ConfigError("recover_a_level: k must lie in [2, K]");
  const int level = k - 1;
  for (const auto& [key, field] : a_known) {
    (void)field;
    if (key.first >= level)
      throw ConfigError("recover_a_level: a_known already holds level " +
                        std::to_string(key.first));
  }

  RecoveryWorkspace& ws = ensure_workspace(task);
  const GridSpec& grid = *task.grid;
  const auto& omega = grid.omega_mask();
  const int nb = static_cast<int>(task.bump_family.size());
  const int dim = grid.dim();
  const int m = task.params.m;
  const bool oracle = task.mode == RecoveryMode::oracle;

  const Field q_hat = known_potential(task, a_known);
  const NlfseSystem sys_hat = make_system(task, q_hat, known_nonlinearity(task, a_known));
  const bool have_lower = !sys_hat.P.empty();

  ensure_adjoints(task, ws, q_hat);
  if (!oracle) ensure_chi(task, ws, q_hat);

  LevelRecord rec;
  rec.k = k;
  if (record) rec.incoming_budget = record->incoming_budget;

  const auto sigmas = indices_up_to_order(dim, m);
  std::map<MultiIndex, Field> out;
  double upper_term = 0.0;
  double budget_meas = 0.0;
  double diag_min = std::numeric_limits<double>::max();

  // Control realization misfit does not bias this stage: the weights and
  // kernels entering the system are built from the realized fields, so a
  // control that misses its target only changes which well-posed system is
  // solved. What does bias it is measurement error (estimated empirically by
  // repeating each reading at twice the step) and leakage through kernels
  // that should vanish above sigma (tracked by upper_term).
  const bool live = !oracle && task.dn_source.has_truth();
  MeasurementSource coarse = task.dn_source;
  if (live) {
    FdOptions fd2 = task.dn_source.fd();
    fd2.eps_step *= 2.0;
    coarse = task.dn_source.with_fd(fd2);
  }

  for (const MultiIndex& sigma : sigmas) {
    // Stage the targets chi x^sigma, chi, .., chi for this sigma.
    std::vector<TestFunction> staged(static_cast<std::size_t>(k));
    std::vector<TestFunction> realized(static_cast<std::size_t>(k));
    if (oracle) {
      TestFunction lead;
      lead.value = hadamard(ws.plateau, monomial_field(task.grid, sigma, ws.center));
      TestFunction plateau;
      plateau.value = ws.plateau;
      for (const MultiIndex& beta : sigmas) {
        if (beta.is_zero()) continue;
        lead.derivs[beta] =
            hadamard(ws.plateau, monomial_derivative_field(task.grid, sigma, beta, ws.center));
        plateau.derivs[beta] = Field::zeros(task.grid);
      }
      staged[0] = lead;
      for (int j = 1; j < k; ++j) staged[static_cast<std::size_t>(j)] = plateau;
      realized = staged;
    } else {
      TestFunction chi_staged = ws.chi_staged;
      TestFunction chi_real;
      chi_real.value = ws.chi_field;
      if (sigma.is_zero()) {
        staged[0] = chi_staged;
        realized[0] = chi_real;
      } else {
        const Field target =
            hadamard(ws.plateau, monomial_field(task.grid, sigma, ws.center));
        Realized lead = realize_target(task, ws, q_hat, target, grid.w1_mask(), false);
        staged[0] = lead.staged;
        realized[0].value = lead.field;
      }
      for (int j = 1; j < k; ++j) {
        staged[static_cast<std::size_t>(j)] = chi_staged;
        realized[static_cast<std::size_t>(j)] = chi_real;
      }
    }
    task.staged = staged;

    // Symmetrized kernels for every derivative order the model can carry.
    const DerivScheme scheme = sys_hat.P.deriv_scheme();
    std::map<MultiIndex, Field> G;
    for (const MultiIndex& beta : sigmas)
      G.emplace(beta, sym_product_field(realized, beta, scheme));

    // Analytic diagonal sigma! (k-1)!, k! at sigma = 0; probed numerically
    // against every bump (unit mass makes <G_sigma, b_i> read the factor).
    const double diag =
        sigma.is_zero()
            ? static_cast<double>(factorial(k))
            : static_cast<double>(multi_factorial(sigma)) * static_cast<double>(factorial(k - 1));
    diag_min = std::min(diag_min, diag);
    double probe_mean = 0.0;
    for (int i = 0; i < nb; ++i) {
      const double p =
          inner_product(G.at(sigma), task.bump_family[static_cast<std::size_t>(i)], omega);
      probe_mean += p / nb;
      const double dev = std::abs(p - diag);
      if (oracle && dev > 1e-8 * std::max(1.0, diag))
        throw InternalError("recovery algebra: diagonal factor off by " + fmt17(dev) +
                            " at sigma " + sigma.to_string());
    }
    rec.diagonal[sigma] = probe_mean;

    // Triangularity: kernels of orders not componentwise below sigma must
    // vanish on the bumps.
    for (const MultiIndex& beta : sigmas) {
      if (beta.leq(sigma)) continue;
      for (int i = 0; i < nb; ++i) {
        const double u = std::abs(
            inner_product(G.at(beta), task.bump_family[static_cast<std::size_t>(i)], omega));
        if (oracle && u > 1e-8 * std::max(1.0, diag))
          throw InternalError("recovery algebra: kernel " + beta.to_string() +
                              " fails to vanish under target " + sigma.to_string());
        upper_term = std::max(upper_term, u);
      }
    }

    // Measure, then strip cross-level and lower-sigma contributions.
    std::vector<double> meas(static_cast<std::size_t>(nb), 0.0);
    std::vector<double> merr(static_cast<std::size_t>(nb), 0.0);
    parallel_for(nb, task.options.jobs, [&](int i) {
      const auto idx = static_cast<std::size_t>(i);
      if (oracle) {
        meas[idx] = task.dn_source.cascade_pairing(staged, task.bump_family[idx]);
      } else {
        meas[idx] = task.dn_source.mixed(staged, ws.adjoint_controls[idx]);
        if (live)
          merr[idx] = std::abs(coarse.mixed(staged, ws.adjoint_controls[idx]) - meas[idx]);
      }
    });
    std::vector<double> synth(static_cast<std::size_t>(nb), 0.0);
    if (have_lower) {
      parallel_for(nb, task.options.jobs, [&](int i) {
        const auto idx = static_cast<std::size_t>(i);
        synth[idx] = expansion_pairing(sys_hat, realized, ws.adjoint_fields[idx]);
      });
    }

    Eigen::MatrixXd A(nb, nb);
    Eigen::VectorXd rhs(nb);
    Eigen::VectorXd rowerr(nb);
    for (int i = 0; i < nb; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      rec.measurement_scale = std::max(rec.measurement_scale, std::abs(meas[idx]));
      double lower = 0.0;
      for (const auto& [beta, field] : out)
        if (beta.leq(sigma) && beta != sigma)
          lower += inner_product(hadamard(field, G.at(beta)), ws.adjoint_fields[idx], omega);
      rhs(i) = (meas[idx] - synth[idx] - lower) / diag;
      rowerr(i) = oracle ? 1e-12 * std::max(1.0, std::abs(meas[idx])) / diag
                         : merr[idx] / diag;
      const Field weight =
          masked(hadamard(G.at(sigma), ws.adjoint_fields[idx]), omega) * (1.0 / diag);
      for (int j = 0; j < nb; ++j)
        A(i, j) = inner_product(task.bump_family[static_cast<std::size_t>(j)], weight, omega);
    }
    const Eigen::VectorXd c = solve_bump_lsq(A, rhs);
    if (std::getenv("NLFS_DEBUG_RECOVERY")) {
      Eigen::JacobiSVD<Eigen::MatrixXd> dsvd(A);
      std::string line = "[dbg] level sigma " + sigma.to_string() + " Asv:";
      for (int i = 0; i < dsvd.singularValues().size(); ++i)
        line += " " + fmt17(dsvd.singularValues()(i));
      line += "\n  rhs:";
      for (int i = 0; i < nb; ++i) line += " " + fmt17(rhs(i));
      line += "\n  c:";
      for (int i = 0; i < nb; ++i) line += " " + fmt17(c(i));
      std::fprintf(stderr, "%s\n", line.c_str());
    }
    budget_meas += propagate_row_error(task, A, rowerr);
    rec.noise_floor = std::max(rec.noise_floor, rowerr.maxCoeff());
    out.emplace(sigma, combine_bumps(task, c));
  }

  // Stage budget: per-sigma measurement errors pushed through the systems
  // that were solved, first-order leakage from not-yet-recovered upper
  // coefficients through imperfect kernel triangularity, and the incoming
  // error compounded by the k-linear subtractions.
  double amax = 0.0;
  for (const auto& [sigma, field] : out)
    amax = std::max(amax, l2_norm(field, omega));
  rec.budget = budget_meas + (upper_term / diag_min) * amax +
               rec.incoming_budget * (1.0 + k);
  rec.completed = true;
  if (record) *record = rec;
  return out;
}

// ---------------------------------------------------------------------------
// Full pipeline

const Field* RecoveryReport::coeff(int level, const MultiIndex& sigma) const {
  for (const RecoveredCoeff& c : a_hat)
    if (c.level == level && c.sigma == sigma) return &c.value;
  return nullptr;
}

RecoveryReport run_full_recovery(RecoveryTask& task) {
  validate_task(task);
  RecoveryReport report;
  const NlfseSystem* truth = task.dn_source.truth();
  const double ceiling = task.options.budget_ceiling;

  LevelRecord qrec;
  Field q_hat = recover_q(task, &qrec);
  if (qrec.budget > ceiling) {
    qrec.completed = false;
    report.levels.push_back(qrec);
    report.aborted = true;
    report.abort_reason = "potential stage budget " + fmt17(qrec.budget) +
                          " exceeds ceiling " + fmt17(ceiling);
    report.budget = qrec.budget;
    return report;
  }
  report.levels.push_back(qrec);
  report.q_hat = q_hat;
  if (truth)
    report.q_rel_error = region_relative_error(q_hat, truth->q, task.recovery_region);

  CoeffMap a_known;
  a_known.emplace(std::make_pair(0, MultiIndex::zeros(task.grid->dim())), q_hat);
  double budget = qrec.budget;
  for (int k = 2; k <= task.params.K; ++k) {
    LevelRecord rec;
    rec.incoming_budget = budget;
    auto fields = recover_a_level(k, task, a_known, &rec);
    if (rec.budget > ceiling) {
      rec.completed = false;
      report.levels.push_back(rec);
      report.aborted = true;
      report.abort_reason = "level " + std::to_string(k - 1) + " budget " +
                            fmt17(rec.budget) + " exceeds ceiling " + fmt17(ceiling);
      budget = rec.budget;
      break;
    }
    report.levels.push_back(rec);
    budget = rec.budget;
    for (auto& [sigma, field] : fields) {
      RecoveredCoeff rc;
      rc.level = k - 1;
      rc.sigma = sigma;
      rc.value = field;
      if (truth) {
        const Field* a_true = truth->P.coeff(k - 1, sigma);
        const Field zero = Field::zeros(task.grid);
        rc.rel_error =
            region_relative_error(field, a_true ? *a_true : zero, task.recovery_region);
      }
      report.a_hat.push_back(rc);
      a_known.emplace(std::make_pair(k - 1, sigma), std::move(field));
    }
  }
  report.budget = budget;
  return report;
}

bool verify_report_errors(const RecoveryReport& report, const RecoveryTask& task,
                          double tol) {
  const NlfseSystem* truth = task.dn_source.truth();
  if (!truth) return true;
  if (!report.q_hat.empty()) {
    const double q_err =
        region_relative_error(report.q_hat, truth->q, task.recovery_region);
    if (std::abs(q_err - report.q_rel_error) > tol) return false;
  }
  const Field zero = Field::zeros(task.grid);
  for (const RecoveredCoeff& c : report.a_hat) {
    const Field* a_true = truth->P.coeff(c.level, c.sigma);
    const double err =
        region_relative_error(c.value, a_true ? *a_true : zero, task.recovery_region);
    if (std::abs(err - c.rel_error) > tol) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Serialization

std::string recovery_report_json(const RecoveryReport& report) {
  json j;
  j["version"] = kArtifactVersion;
  j["aborted"] = report.aborted;
  j["abort_reason"] = report.abort_reason;
  j["budget"] = report.budget;
  if (!report.q_hat.empty()) {
    j["q_hat"] = std::vector<double>(report.q_hat.values().begin(),
                                     report.q_hat.values().end());
    j["q_rel_error"] = report.q_rel_error;
  }
  j["coefficients"] = json::array();
  for (const RecoveredCoeff& c : report.a_hat) {
    json e;
    e["level"] = c.level;
    e["sigma"] = c.sigma.entries();
    e["rel_error"] = c.rel_error;
    e["values"] = std::vector<double>(c.value.values().begin(), c.value.values().end());
    j["coefficients"].push_back(std::move(e));
  }
  j["levels"] = json::array();
  for (const LevelRecord& r : report.levels) {
    json e;
    e["k"] = r.k;
    e["completed"] = r.completed;
    e["incoming_budget"] = r.incoming_budget;
    e["budget"] = r.budget;
    e["measurement_scale"] = r.measurement_scale;
    e["noise_floor"] = r.noise_floor;
    e["diagonal"] = json::array();
    for (const auto& [sigma, value] : r.diagonal) {
      json d;
      d["sigma"] = sigma.entries();
      d["value"] = value;
      e["diagonal"].push_back(std::move(d));
    }
    j["levels"].push_back(std::move(e));
  }
  return j.dump(2);
}

std::string recovery_level_csv(const RecoveryReport& report) {
  std::ostringstream out;
  out << "stage_k,coeff_level,sigma,rel_error,stage_budget,stage_noise,completed\n";
  const auto stage = [&](int k) -> const LevelRecord* {
    for (const LevelRecord& r : report.levels)
      if (r.k == k) return &r;
    return nullptr;
  };
  if (!report.q_hat.empty()) {
    const LevelRecord* r = stage(1);
    out << "1,0,q," << fmt17(report.q_rel_error) << ','
        << fmt17(r ? r->budget : 0.0) << ',' << fmt17(r ? r->noise_floor : 0.0)
        << ',' << (r && r->completed ? 1 : 0) << '\n';
  }
  for (const RecoveredCoeff& c : report.a_hat) {
    const LevelRecord* r = stage(c.level + 1);
    out << (c.level + 1) << ',' << c.level << ',' << c.sigma.to_string() << ','
        << fmt17(c.rel_error) << ',' << fmt17(r ? r->budget : 0.0) << ','
        << fmt17(r ? r->noise_floor : 0.0) << ',' << (r && r->completed ? 1 : 0)
        << '\n';
  }
  return out.str();
}

}  // namespace nlfs
