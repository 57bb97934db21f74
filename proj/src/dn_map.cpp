#include "nlfs/dn_map.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "nlfs/errors.hpp"
#include "nlfs/spectral.hpp"
#include "nlfs/util.hpp"

namespace nlfs {

namespace {

using nlohmann::json;

void require_probe(const NlfseSystem& sys, const Field& g, const char* who) {
  if (!sys.grid) throw ConfigError(std::string(who) + ": null grid");
  if (g.grid().get() != sys.grid.get())
    throw ConfigError(std::string(who) + ": probe grid mismatch");
  if (!g.supported_on(sys.grid->exterior_mask()))
    throw ConfigError(std::string(who) + ": probe must vanish off the exterior");
  g.check_finite(who);
}

json array2_to_json(const std::array<double, 2>& a) { return json{a[0], a[1]}; }

std::array<double, 2> array2_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 2)
    throw ConfigError(std::string("dn archive: ") + what + " must be a pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

json region_to_json(const RegionSpec& r) {
  json j;
  j["kind"] = r.kind == RegionSpec::Kind::box ? "box" : "ball";
  j["lo"] = array2_to_json(r.lo);
  j["hi"] = array2_to_json(r.hi);
  j["center"] = array2_to_json(r.center);
  j["radius"] = r.radius;
  return j;
}

RegionSpec region_from_json(const json& j) {
  RegionSpec r;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "box")
    r.kind = RegionSpec::Kind::box;
  else if (kind == "ball")
    r.kind = RegionSpec::Kind::ball;
  else
    throw ConfigError("dn archive: unknown region kind '" + kind + "'");
  r.lo = array2_from_json(j.at("lo"), "region lo");
  r.hi = array2_from_json(j.at("hi"), "region hi");
  r.center = array2_from_json(j.at("center"), "region center");
  r.radius = j.at("radius").get<double>();
  return r;
}

json bump_to_json(const BumpSpec& b) {
  json j;
  j["center"] = array2_to_json(b.center);
  j["radius"] = b.radius;
  j["amplitude"] = b.amplitude;
  j["power"] = b.power;
  return j;
}

BumpSpec bump_from_json(const json& j) {
  BumpSpec b;
  b.center = array2_from_json(j.at("center"), "bump center");
  b.radius = j.at("radius").get<double>();
  b.amplitude = j.at("amplitude").get<double>();
  b.power = j.at("power").get<int>();
  return b;
}

}  // namespace

double dn_pair(const NlfseSystem& sys, const Field& u, const Field& g) {
  require_probe(sys, g, "dn_pair");
  if (u.grid().get() != sys.grid.get())
    throw ConfigError("dn_pair: solution grid mismatch");
  u.check_finite("dn_pair solution");
  return bilinear_form(u, g, sys.q, sys.P);
}

DnMatrix dn_matrix(const NlfseSystem& sys, const std::vector<Field>& sources,
                   const std::vector<Field>& probes) {
  if (sources.empty() || probes.empty())
    throw ConfigError("dn_matrix: empty probing family");
  DnMatrix m;
  m.reserve(sources.size());
  for (const Field& f : sources) {
    const Field u = solve_nlfse(sys, f).solution;
    std::vector<double> row;
    row.reserve(probes.size());
    for (const Field& g : probes) row.push_back(dn_pair(sys, u, g));
    m.push_back(std::move(row));
  }
  return m;
}

double dn_derivative(const NlfseSystem& sys, const std::vector<Field>& data,
                     const MultiIndex& alpha, const Field& g,
                     const FdOptions& opts) {
  require_probe(sys, g, "dn_derivative");
  if (alpha.size() != static_cast<int>(data.size()))
    throw ConfigError("dn_derivative: index length != data count");
  if (!alpha.is_binary() || alpha.is_zero())
    throw ConfigError("dn_derivative: alpha must be binary and nonzero");
  if (!(opts.eps_step > 0.0))
    throw ConfigError("dn_derivative: eps_step must be positive");
  if (opts.jobs < 1) throw ConfigError("dn_derivative: jobs must be >= 1");

  const std::vector<int> slots = alpha.support();
  const int n = static_cast<int>(slots.size());
  const int count = 1 << n;

  const auto estimate = [&](double h) {
    std::vector<double> vals(static_cast<std::size_t>(count));
    parallel_for(count, opts.jobs, [&](int mask) {
      Field f = Field::zeros(sys.grid);
      f.set_support(Support::exterior);
      for (int i = 0; i < n; ++i)
        if (mask & (1 << i))
          f.axpy(h, data[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])]);
      vals[static_cast<std::size_t>(mask)] =
          dn_pair(sys, solve_nlfse(sys, f).solution, g);
    });
    double sum = 0.0;
    for (int mask = 0; mask < count; ++mask) {
      const int sign =
          ((n - std::popcount(static_cast<unsigned>(mask))) % 2 == 0) ? 1 : -1;
      sum += sign * vals[static_cast<std::size_t>(mask)];
    }
    return sum / std::pow(h, n);
  };

  double d = estimate(opts.eps_step);
  if (opts.richardson) d = 2.0 * estimate(0.5 * opts.eps_step) - d;
  return d;
}

double dn_derivative_cascade(const NlfseSystem& sys, const Cascade& cascade,
                             const MultiIndex& alpha, const Field& g) {
  require_probe(sys, g, "dn_derivative_cascade");
  const auto it = cascade.term.find(alpha);
  if (it == cascade.term.end())
    throw ConfigError("dn_derivative_cascade: cascade lacks order " +
                      alpha.to_string());
  const Field lap = frac_laplacian(it->second, sys.P.params().s);
  return inner_product(g, lap, sys.grid->exterior_mask());
}

DnMatrix linear_dn_matrix(const DNData& dn) {
  const int r = static_cast<int>(dn.source_bumps.size());
  DnMatrix m;
  m.reserve(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const auto it = dn.derivative.find(MultiIndex::unit(r, i));
    if (it == dn.derivative.end())
      throw ConfigError("dn archive: missing order-one tensor for slot " +
                        std::to_string(i));
    m.push_back(it->second);
  }
  return m;
}

std::vector<Field> sample_exterior_family(std::shared_ptr<const GridSpec> grid,
                                          const std::vector<BumpSpec>& bumps) {
  std::vector<Field> out;
  out.reserve(bumps.size());
  for (std::size_t i = 0; i < bumps.size(); ++i) {
    Field raw = sample_bump(grid, bumps[i]);
    Field clipped = raw;
    clipped.set_support(Support::exterior);
    clipped.enforce_support();
    if ((clipped - raw).max_norm() > 0.0)
      throw ConfigError("bump " + std::to_string(i) +
                        " leaks outside the exterior region");
    out.push_back(std::move(clipped));
  }
  return out;
}

DNData synthesize_dn(const NlfseSystem& sys,
                     const std::vector<BumpSpec>& source_bumps,
                     const std::vector<BumpSpec>& probe_bumps, int max_order) {
  if (!sys.grid) throw ConfigError("synthesize_dn: null grid");
  if (source_bumps.empty() || probe_bumps.empty())
    throw ConfigError("synthesize_dn: empty probing family");
  if (max_order < 1) throw ConfigError("synthesize_dn: max_order must be >= 1");

  const std::vector<Field> sources = sample_exterior_family(sys.grid, source_bumps);
  const std::vector<Field> probes = sample_exterior_family(sys.grid, probe_bumps);
  const Cascade cascade = compute_cascade(sys, sources, max_order);

  DNData dn;
  dn.version = kArtifactVersion;
  dn.dim = sys.grid->dim();
  dn.points_per_dim = sys.grid->points_per_dim();
  dn.box_length = sys.grid->box_length();
  dn.buffer_nodes = sys.grid->buffer_nodes();
  dn.regions = sys.grid->regions();
  dn.params = sys.P.params();
  dn.source_bumps = source_bumps;
  dn.probe_bumps = probe_bumps;
  dn.max_order = max_order;

  for (const auto& [alpha, w] : cascade.term) {
    const Field lap = frac_laplacian(w, dn.params.s);
    std::vector<double> row;
    row.reserve(probes.size());
    for (const Field& g : probes)
      row.push_back(inner_product(g, lap, sys.grid->exterior_mask()));
    dn.derivative.emplace(alpha, std::move(row));
  }
  return dn;
}

std::shared_ptr<const GridSpec> rebuild_grid(const DNData& dn) {
  return build_grid(dn.dim, dn.points_per_dim, dn.box_length, dn.regions,
                    dn.buffer_nodes);
}

std::string dn_to_json(const DNData& dn) {
  json j;
  j["version"] = dn.version;
  j["config_hash"] = dn.config_hash;
  j["grid"]["dim"] = dn.dim;
  j["grid"]["points_per_dim"] = dn.points_per_dim;
  j["grid"]["box_length"] = dn.box_length;
  j["grid"]["buffer_nodes"] = dn.buffer_nodes;
  j["grid"]["omega"] = region_to_json(dn.regions.omega);
  if (dn.regions.w1) j["grid"]["w1"] = region_to_json(*dn.regions.w1);
  if (dn.regions.w2) j["grid"]["w2"] = region_to_json(*dn.regions.w2);
  j["params"]["s"] = dn.params.s;
  j["params"]["m"] = dn.params.m;
  j["params"]["K"] = dn.params.K;
  j["source_bumps"] = json::array();
  for (const BumpSpec& b : dn.source_bumps) j["source_bumps"].push_back(bump_to_json(b));
  j["probe_bumps"] = json::array();
  for (const BumpSpec& b : dn.probe_bumps) j["probe_bumps"].push_back(bump_to_json(b));
  j["max_order"] = dn.max_order;
  j["derivative"] = json::array();
  for (const auto& [alpha, values] : dn.derivative) {
    json entry;
    entry["alpha"] = alpha.entries();
    entry["values"] = values;
    j["derivative"].push_back(std::move(entry));
  }
  return j.dump(2);
}

DNData dn_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dn archive: parse failure: ") + e.what());
  }
  try {
    DNData dn;
    dn.version = j.at("version").get<std::string>();
    dn.config_hash = j.at("config_hash").get<std::uint64_t>();
    const json& grid = j.at("grid");
    dn.dim = grid.at("dim").get<int>();
    dn.points_per_dim = grid.at("points_per_dim").get<int>();
    dn.box_length = grid.at("box_length").get<double>();
    dn.buffer_nodes = grid.at("buffer_nodes").get<int>();
    dn.regions.omega = region_from_json(grid.at("omega"));
    if (grid.contains("w1")) dn.regions.w1 = region_from_json(grid.at("w1"));
    if (grid.contains("w2")) dn.regions.w2 = region_from_json(grid.at("w2"));
    dn.params.s = j.at("params").at("s").get<double>();
    dn.params.m = j.at("params").at("m").get<int>();
    dn.params.K = j.at("params").at("K").get<int>();
    dn.params.validate();
    for (const json& b : j.at("source_bumps")) dn.source_bumps.push_back(bump_from_json(b));
    for (const json& b : j.at("probe_bumps")) dn.probe_bumps.push_back(bump_from_json(b));
    dn.max_order = j.at("max_order").get<int>();
    const int r = static_cast<int>(dn.source_bumps.size());
    for (const json& entry : j.at("derivative")) {
      const MultiIndex alpha{entry.at("alpha").get<std::vector<int>>()};
      if (alpha.size() != r)
        throw ConfigError("dn archive: tensor index length != source count");
      if (alpha.order() < 1 || alpha.order() > dn.max_order)
        throw ConfigError("dn archive: tensor order outside [1, max_order]");
      const auto values = entry.at("values").get<std::vector<double>>();
      if (values.size() != dn.probe_bumps.size())
        throw ConfigError("dn archive: tensor width != probe count");
      for (const double v : values)
        if (!std::isfinite(v)) throw ConfigError("dn archive: non-finite tensor entry");
      if (!dn.derivative.emplace(alpha, values).second)
        throw ConfigError("dn archive: duplicate tensor index " + alpha.to_string());
    }
    return dn;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dn archive: malformed field: ") + e.what());
  }
}

void save_dn(const DNData& dn, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << dn_to_json(dn) << '\n';
  if (!out) throw IoError("failed while writing '" + path + "'");
}

DNData load_dn(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed while reading '" + path + "'");
  return dn_from_json(buf.str());
}

}  // namespace nlfs
