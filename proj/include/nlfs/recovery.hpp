#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nlfs/dn_map.hpp"
#include "nlfs/linearization.hpp"
#include "nlfs/nonlinear_solver.hpp"
#include "nlfs/runge.hpp"

namespace nlfs {

/// How the inverse pipeline realizes its test functions.
///  - oracle: interior test functions are prescribed directly, together with
///    their derivative tables; measurements are evaluated exactly from the
///    hidden truth. Validates the recovery algebra with no approximation
///    error beyond linear algebra.
///  - exterior: test functions are realized by exterior controls through
///    runge_control, and measurements go through the polarization
///    derivatives of the exterior pairing. The full pipeline.
enum class RecoveryMode { oracle, exterior };

/// How exterior controls are synthesized: free nodal values on the window,
/// or coefficients over a finite control family (mandatory for replayed
/// archives, whose tensors only cover the archived family).
enum class ControlRoute { nodal, basis };

/// A staged test function. In oracle mode `value` is the prescribed interior
/// behavior and `derivs[sigma]` its prescribed derivative D^sigma (the
/// design convention for plateau-times-monomial targets sets
/// D^sigma(chi x^tau) := chi D^sigma x^tau, so plateau factors differentiate
/// to zero). In exterior mode `value` is an exterior-supported control;
/// `coeffs`, when present, pins its coordinates over an archived source
/// family so replayed tensors can be contracted without a live solver.
struct TestFunction {
  Field value;
  DerivTable derivs;
  std::vector<double> coeffs;
};

/// Measurement access for the inverse pipeline. Wraps either a live forward
/// simulator holding the hidden truth (q*, P*) or a replayed archive of
/// derivative tensors; recovery algorithms only consume pairing values, so
/// the truth never leaks into the reconstruction path. `truth()` is exposed
/// solely so reports can attach errors against ground truth when a backend
/// knows it.
class MeasurementSource {
 public:
  MeasurementSource() = default;

  /// Live backend: polarization derivatives are measured by subset-sum
  /// finite differences of the nonlinear forward map, controlled by `fd`.
  static MeasurementSource from_system(NlfseSystem truth, FdOptions fd = {});
  /// Replay backend: pairings are contracted from archived tensors; sources
  /// and probes must lie in the span of the archived families.
  static MeasurementSource from_archive(DNData archive);

  /// Copy sharing the backend but measuring with different finite-difference
  /// controls; recovery uses a coarsened step to estimate measurement error
  /// empirically. No effect on replay (archives carry no step).
  MeasurementSource with_fd(const FdOptions& fd) const;

  bool has_truth() const { return truth_ != nullptr; }
  bool has_archive() const { return archive_ != nullptr; }
  const NlfseSystem* truth() const { return truth_.get(); }
  const DNData* archive() const { return archive_.get(); }
  const FdOptions& fd() const { return fd_; }
  /// Grid the archive was measured on (null without an archive).
  const std::shared_ptr<const GridSpec>& archive_grid() const { return archive_grid_; }

  /// <d_eps Lambda(eps f), g>|_{eps=0}: first-order pairing of control f
  /// against an exterior-supported probe g. Live: forward difference of
  /// dn_pair (Richardson per fd()), with the control normalized to unit sup
  /// norm first — the derivative is linear in f, and normalization keeps the
  /// difference steps inside the contraction regime whatever amplitude the
  /// control synthesis produced. Replay: contraction of the order-one
  /// tensors, which the archive holds exactly.
  double first_order(const TestFunction& f, const Field& probe) const;

  /// k-th polarization derivative d^alpha <Lambda(sum_l eps_l f_l), g> at 0
  /// for alpha = e_1 + .. + e_k over the staged sources. Live: subset-sum
  /// finite differences with each slot normalized to unit sup norm (the
  /// derivative is multilinear, so the scales multiply back exactly);
  /// replay: full symmetric-tensor contraction over the archived family.
  double mixed(std::span<const TestFunction> sources, const Field& probe) const;

  /// Oracle primitive for the potential stage: integral of q* times an
  /// interior weight, the exact value of the first-order identity when the
  /// interior product of solutions is prescribed to equal `weight`.
  double potential_pairing(const Field& weight) const;

  /// Oracle primitive for the nonlinear stages: the k-th polarization
  /// derivative evaluated exactly from the hidden truth with the first-order
  /// solution fields prescribed to be `h` (values and derivative tables).
  /// Staged values that are exterior-supported with no tables are treated as
  /// exterior data and realized by a truth-operator solve first, and likewise
  /// an exterior-supported v0 — so the value is the exact limit of the
  /// finite-difference measurement for the same controls. Intermediate
  /// expansion terms are solved with the true system; the result is
  /// -int_Omega T_alpha v0 for the top-order expansion source.
  double cascade_pairing(std::span<const TestFunction> h, const Field& v0) const;

 private:
  std::shared_ptr<const NlfseSystem> truth_;
  std::shared_ptr<const DNData> archive_;
  std::shared_ptr<const GridSpec> archive_grid_;
  std::vector<Field> archive_sources_;
  std::vector<Field> archive_probes_;
  FdOptions fd_;
};

/// Tuning knobs of the inverse pipeline; everything is recovery-side (the
/// measurement backend has its own controls).
struct RecoveryOptions {
  /// Reference potential the Born-style q stage linearizes around; empty
  /// means zero.
  Field q0;
  /// Border-to-border refinements of the reference potential: each pass
  /// re-solves the synthetic side around the latest q_hat without new
  /// measurements.
  int q_iterations = 2;
  /// Plateau cutoff transition width as a fraction of the Omega box width.
  double plateau_frac = 0.10;
  /// Runge synthesis of exterior controls: route and regularization.
  ControlRoute route = ControlRoute::nodal;
  RungeOptions runge;
  /// Control families for the basis route (and replay); empty means the
  /// archived families (replay) or a lattice over the windows (live).
  std::vector<BumpSpec> control_bumps;
  std::vector<BumpSpec> adjoint_bumps;
  /// Linear solver settings for all recovery-side solves.
  SolverOptions solver;
  /// run_full_recovery aborts before trusting a level whose accumulated
  /// error estimate exceeds this ceiling.
  double budget_ceiling = 1.0;
  /// Exterior-data localization solves zero out singular directions of the
  /// bump system below this fraction of the leading one instead of letting
  /// them amplify measurement error without bound; such directions are bump
  /// combinations the probing windows cannot resolve. Oracle-mode solves
  /// ignore the floor (their systems are exact).
  double lsq_rel_floor = 1e-3;
  /// Threads for the per-bump measurement loop within a level.
  int jobs = 1;
};

struct RecoveryWorkspace;

/// One inverse problem instance: what is measured, where coefficients are
/// reported, and with which localizing bumps. `staged` holds the first-order
/// test functions consumed by measure_T_functional; recover_a_level stages
/// its own targets there. `workspace` caches plateau, adjoints and Gram
/// factors across stages; it is created on demand and may be dropped freely.
struct RecoveryTask {
  std::shared_ptr<const GridSpec> grid;
  FracParams params;
  RecoveryMode mode = RecoveryMode::oracle;
  MeasurementSource dn_source;
  /// Node mask inside Omega where coefficients are reported.
  std::vector<std::uint8_t> recovery_region;
  /// Nonnegative mollifiers with unit integral, supported in the region.
  std::vector<Field> bump_family;
  RecoveryOptions options;
  std::vector<TestFunction> staged;
  std::shared_ptr<RecoveryWorkspace> workspace;
};

/// Recovered coefficients are keyed by (level k, derivative sigma); the
/// level-0 zero-index slot carries the recovered potential so lower-level
/// data threads through one map.
using CoeffMap = std::map<std::pair<int, MultiIndex>, Field>;

/// Per-stage diagnostics. `budget` is the accumulated error estimate after
/// the stage: finite-difference bias plus runge misfit amplified through the
/// stage's subtractions; incoming error compounds, so budgets grow
/// geometrically over levels.
struct LevelRecord {
  int k = 0;  ///< directions used; the stage recovers level k-1 (k = 1: potential)
  bool completed = false;
  double incoming_budget = 0.0;
  double budget = 0.0;
  double measurement_scale = 0.0;  ///< max |functional| seen in the stage
  double noise_floor = 0.0;        ///< estimated measurement noise floor
  /// Numerically probed diagonal factor per sigma; the triangularity check
  /// compares it against sigma! (k-1)! (k! at sigma = 0).
  std::map<MultiIndex, double> diagonal;
};

struct RecoveredCoeff {
  int level = 0;
  MultiIndex sigma;
  Field value;
  /// Relative L2(recovery_region) error against ground truth; negative when
  /// the backend has no truth to compare against.
  double rel_error = -1.0;
};

struct RecoveryReport {
  Field q_hat;
  double q_rel_error = -1.0;
  std::vector<RecoveredCoeff> a_hat;
  std::vector<LevelRecord> levels;
  double budget = 0.0;
  bool aborted = false;
  std::string abort_reason;

  /// Null when the (level, sigma) coefficient was not recovered.
  const Field* coeff(int level, const MultiIndex& sigma) const;
};

/// ||est - truth||_{L2(mask)} / ||truth||_{L2(mask)}; falls back to the
/// absolute numerator when the truth vanishes on the mask.
double region_relative_error(const Field& est, const Field& truth,
                             const std::vector<std::uint8_t>& mask);

/// Default reporting region: nodes of Omega at least `inset_frac` of the
/// Omega width away from its boundary. Coefficients outside are declared
/// unrecovered rather than extrapolated.
std::vector<std::uint8_t> default_recovery_region(const GridSpec& grid,
                                                  double inset_frac = 0.15);

/// Samples a bump and rescales it to unit integral, as the task's bump
/// family requires. Throws ConfigError when the sampled bump vanishes.
Field unit_mass_bump(std::shared_ptr<const GridSpec> grid, const BumpSpec& spec);

/// Symmetrized k-linear product field of the staged test functions:
///   sum_{pi in S_k} h_{pi(1)} ... h_{pi(k-1)} D^beta h_{pi(k)}
///     = (k-1)! sum_j (prod_{i != j} h_i) D^beta h_j.
/// D^beta is looked up in each function's table when present, otherwise
/// computed with `scheme`. With plateau-and-monomial targets this field is
/// sigma! (k-1)! (k! at sigma = 0) on the plateau when beta equals the
/// staged sigma, and vanishes there unless beta <= sigma: the triangular
/// structure the induction rests on.
Field sym_product_field(std::span<const TestFunction> h, const MultiIndex& beta,
                        DerivScheme scheme = DerivScheme::spectral);

/// Recovers the potential from first-order pairings by Born-style
/// localization: for each bump, controls drive the interior product of the
/// data-side and probe-side solutions toward the bump, the measured pairing
/// minus the reference-potential pairing isolates the mollified difference
/// int (q - q_ref) x (realized product), and a least-squares solve over the
/// bump family returns q_hat on the recovery region. Oracle mode prescribes
/// the interior products to be the bumps themselves. Throws ConfigError on
/// invalid tasks and when the bump system is rank-deficient ("insufficient
/// localization").
Field recover_q(RecoveryTask& task, LevelRecord* record = nullptr);

/// k-th polarization measurement of the staged sources against probe g,
/// 2 <= k <= K. Oracle mode evaluates the expansion-source pairing exactly
/// from the truth (cascade_pairing); exterior mode measures the subset-sum
/// derivative (live) or contracts archived tensors (replay), requiring an
/// exterior-supported g. The value is linear in g by construction.
double measure_T_functional(int k, const Field& g, const RecoveryTask& task);

/// Recovers coefficient level k-1 (all |sigma| <= m) from k-direction
/// measurements by the triangular monomial induction: targets chi x^sigma,
/// chi, ..., chi in ascending |sigma|, cross-level contributions predicted
/// from `a_known` (levels below k-1 plus the level-0 potential slot) and
/// subtracted, within-level lower-sigma terms subtracted with the freshly
/// recovered fields, the analytic diagonal divided out, and the mollified
/// samples deconvolved against the bump family by least squares. The
/// numerically probed diagonal and the vanishing of not-below-sigma kernels
/// are asserted level by level (InternalError in oracle mode, budget
/// inflation in exterior mode). Budget overflow is reported through
/// `record`, not thrown; run_full_recovery enforces the ceiling.
std::map<MultiIndex, Field> recover_a_level(int k, RecoveryTask& task,
                                            const CoeffMap& a_known,
                                            LevelRecord* record = nullptr);

/// Full pipeline: recover_q, then levels k = 2..K in order, each feeding the
/// next level's subtractions. Aborts before trusting the first stage whose
/// budget exceeds options.budget_ceiling and reports the partial results.
/// Errors against ground truth are attached when the backend knows it.
RecoveryReport run_full_recovery(RecoveryTask& task);

/// Recomputes every reported error from the stored fields and the backend
/// truth; true when all recorded values match to `tol`. Reports without
/// truth access verify vacuously.
bool verify_report_errors(const RecoveryReport& report, const RecoveryTask& task,
                          double tol = 1e-12);

/// JSON rendering of a report (fields as value arrays, per-level records,
/// budget and abort state).
std::string recovery_report_json(const RecoveryReport& report);

/// CSV table of per-level results: one row per recovered coefficient plus
/// one per stage record, %.17g throughout.
std::string recovery_level_csv(const RecoveryReport& report);

}  // namespace nlfs
