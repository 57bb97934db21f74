#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nlfs/linearization.hpp"
#include "nlfs/nonlinear_solver.hpp"
#include "nlfs/shapes.hpp"

namespace nlfs {

using DnMatrix = std::vector<std::vector<double>>;

/// Exterior measurement pairing: with u a solution field and g an
/// exterior-supported probe,
///   dn_pair(u, g) = B(u, g) = int (-Delta)^{s/2}u (-Delta)^{s/2}g
///                   + int_Omega q u g + int_Omega P(u) g,
/// the discrete flux of u tested against g. The value is unchanged by
/// modifying the probe's extension inside Omega precisely because u solves
/// the equation there; requiring g to vanish off the exterior pins the
/// canonical extension. Throws ConfigError for a non-exterior probe.
double dn_pair(const NlfseSystem& sys, const Field& u, const Field& g);

/// Full map matrix: entry [i][j] pairs the solution for data sources[i]
/// with probes[j]. Uses the nonlinear solver, so sources must lie in the
/// solvable regime; with P == 0 this is the linear exterior-value map,
/// which is symmetric whenever sources and probes coincide.
DnMatrix dn_matrix(const NlfseSystem& sys, const std::vector<Field>& sources,
                   const std::vector<Field>& probes);

/// Mixed derivative of the measured map at zero data, by forward
/// differences over subset sums (binary alpha):
///   h^{-|alpha|} sum_{S subset supp(alpha)} (-1)^{|alpha|-|S|}
///     dn_pair(u(h 1_S), g).
double dn_derivative(const NlfseSystem& sys, const std::vector<Field>& data,
                     const MultiIndex& alpha, const Field& g,
                     const FdOptions& opts = {});

/// The same derivative from the linearization cascade:
///   d^alpha Lambda(0)(g) = int_ext g (-Delta)^s w_alpha,
/// which also equals -int_Omega T_alpha v_g for the linear solution v_g
/// with data g. Works for any alpha the cascade holds.
double dn_derivative_cascade(const NlfseSystem& sys, const Cascade& cascade,
                             const MultiIndex& alpha, const Field& g);

/// Measurement archive: everything an inversion run may consume without a
/// live forward solver. Geometry and order parameters rebuild the grid;
/// bump descriptors rebuild the probing families; the derivative tensors
/// hold d^alpha Lambda(0) tested against every probe, for 1 <= |alpha| <=
/// max_order. Probe-linearity extends the tensors to any probe in the span
/// of the stored family.
struct DNData {
  std::string version;
  std::uint64_t config_hash = 0;

  int dim = 1;
  int points_per_dim = 0;
  double box_length = 0.0;
  int buffer_nodes = 0;
  GridRegions regions;
  FracParams params;

  std::vector<BumpSpec> source_bumps;  ///< data family, first window
  std::vector<BumpSpec> probe_bumps;   ///< probe family, second window
  int max_order = 0;
  /// alpha -> values over probes; alpha length == source_bumps.size().
  std::map<MultiIndex, std::vector<double>> derivative;
};

/// Order-one block of the derivative tensors as a sources x probes matrix:
/// the linear exterior-value map of (-Delta)^s + q.
DnMatrix linear_dn_matrix(const DNData& dn);

/// Samples the bump families, runs the cascade to max_order, and tabulates
/// every derivative tensor. Bumps must sample to exterior-supported fields
/// (no leakage into Omega or the buffer), else ConfigError.
DNData synthesize_dn(const NlfseSystem& sys,
                     const std::vector<BumpSpec>& source_bumps,
                     const std::vector<BumpSpec>& probe_bumps, int max_order);

/// Rebuilds the grid an archive was measured on.
std::shared_ptr<const GridSpec> rebuild_grid(const DNData& dn);

/// Samples a bump family on a grid as exterior-supported fields, failing on
/// leakage. Shared by synthesis and replay.
std::vector<Field> sample_exterior_family(std::shared_ptr<const GridSpec> grid,
                                          const std::vector<BumpSpec>& bumps);

std::string dn_to_json(const DNData& dn);
DNData dn_from_json(const std::string& text);
void save_dn(const DNData& dn, const std::string& path);
DNData load_dn(const std::string& path);

}  // namespace nlfs
