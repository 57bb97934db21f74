#include "nlfs/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "nlfs/errors.hpp"

namespace nlfs {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is. Each
// thread keeps its own plans and buffers, serialized only at creation.
std::mutex plan_mutex;

struct PlanSet {
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
  fftw_complex* a = nullptr;
  fftw_complex* b = nullptr;
  int total = 0;

  ~PlanSet() {
    std::lock_guard<std::mutex> lock(plan_mutex);
    if (fwd) fftw_destroy_plan(fwd);
    if (inv) fftw_destroy_plan(inv);
    if (a) fftw_free(a);
    if (b) fftw_free(b);
  }
};

PlanSet& plans_for(const GridSpec& grid) {
  thread_local std::map<std::pair<int, int>, PlanSet> cache;
  const auto key = std::make_pair(grid.dim(), grid.points_per_dim());
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  PlanSet& p = cache[key];
  p.total = grid.node_count();
  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    p.a = fftw_alloc_complex(static_cast<std::size_t>(p.total));
    p.b = fftw_alloc_complex(static_cast<std::size_t>(p.total));
    const int n = grid.points_per_dim();
    if (grid.dim() == 1) {
      p.fwd = fftw_plan_dft_1d(n, p.a, p.b, FFTW_FORWARD, FFTW_ESTIMATE);
      p.inv = fftw_plan_dft_1d(n, p.b, p.a, FFTW_BACKWARD, FFTW_ESTIMATE);
    } else {
      p.fwd = fftw_plan_dft_2d(n, n, p.a, p.b, FFTW_FORWARD, FFTW_ESTIMATE);
      p.inv = fftw_plan_dft_2d(n, n, p.b, p.a, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
  }
  if (!p.fwd || !p.inv) throw InternalError("spectral: FFTW planning failed");
  return p;
}

template <class SymbolAt>
Field apply_multiplier(const Field& u, SymbolAt symbol_at) {
  if (!u.grid()) throw ConfigError("apply_symbol: empty field");
  const GridSpec& grid = *u.grid();
  PlanSet& p = plans_for(grid);

  for (int i = 0; i < p.total; ++i) {
    p.a[i][0] = u[i];
    p.a[i][1] = 0.0;
  }
  fftw_execute(p.fwd);
  for (int i = 0; i < p.total; ++i) {
    const std::complex<double> s = symbol_at(i);
    const std::complex<double> v(p.b[i][0], p.b[i][1]);
    const std::complex<double> w = s * v;
    p.b[i][0] = w.real();
    p.b[i][1] = w.imag();
  }
  fftw_execute(p.inv);

  Field out = Field::zeros(u.grid());
  const double scale = 1.0 / p.total;
  double max_imag = 0.0, max_real = 0.0;
  for (int i = 0; i < p.total; ++i) {
    out[i] = p.a[i][0] * scale;
    max_real = std::max(max_real, std::fabs(p.a[i][0]) * scale);
    max_imag = std::max(max_imag, std::fabs(p.a[i][1]) * scale);
  }
  // Roundoff-born imaginary parts track the output magnitude (the symbol may
  // amplify by |xi_max|^{2s}), so the residue is measured against the larger
  // of input and output scales.
  const double ref = std::max(max_real, u.max_norm());
  if (ref > 0.0 && max_imag > 1e-10 * ref)
    throw InternalError("apply_symbol: imaginary residue exceeds 1e-10 * ||u||_inf");
  return out;
}

}  // namespace

int signed_freq(const GridSpec& grid, int node, int axis) {
  const auto ij = grid.lattice(node);
  const int k = ij[static_cast<std::size_t>(axis)];
  const int n = grid.points_per_dim();
  return k < n / 2 ? k : k - n;
}

std::array<double, 2> frequency(const GridSpec& grid, int node) {
  const double base = 2.0 * M_PI / grid.box_length();
  std::array<double, 2> xi{0.0, 0.0};
  for (int d = 0; d < grid.dim(); ++d)
    xi[static_cast<std::size_t>(d)] = base * signed_freq(grid, node, d);
  return xi;
}

std::vector<double> frac_symbol(const GridSpec& grid, double power) {
  std::vector<double> sym(static_cast<std::size_t>(grid.node_count()));
  for (int i = 0; i < grid.node_count(); ++i) {
    const auto xi = frequency(grid, i);
    const double mag2 = xi[0] * xi[0] + xi[1] * xi[1];
    sym[static_cast<std::size_t>(i)] = mag2 == 0.0 ? 0.0 : std::pow(mag2, 0.5 * power);
  }
  return sym;
}

std::vector<double> bessel_symbol(const GridSpec& grid, double power) {
  std::vector<double> sym(static_cast<std::size_t>(grid.node_count()));
  for (int i = 0; i < grid.node_count(); ++i) {
    const auto xi = frequency(grid, i);
    const double mag2 = xi[0] * xi[0] + xi[1] * xi[1];
    sym[static_cast<std::size_t>(i)] = std::pow(1.0 + mag2, 0.5 * power);
  }
  return sym;
}

std::vector<std::complex<double>> derivative_symbol(const GridSpec& grid,
                                                    const MultiIndex& sigma) {
  if (sigma.size() != grid.dim())
    throw ConfigError("derivative_symbol: sigma length must equal grid dim");
  std::vector<std::complex<double>> sym(static_cast<std::size_t>(grid.node_count()));
  const int n = grid.points_per_dim();
  for (int i = 0; i < grid.node_count(); ++i) {
    const auto xi = frequency(grid, i);
    std::complex<double> s(1.0, 0.0);
    bool kill = false;
    for (int d = 0; d < grid.dim(); ++d) {
      const int ord = sigma[d];
      if (ord == 0) continue;
      // (i xi)^ord on the Nyquist line has no conjugate partner; an odd
      // power there would produce an imaginary output, so it is dropped.
      if (ord % 2 == 1 && signed_freq(grid, i, d) == -n / 2) kill = true;
      const std::complex<double> ixi(0.0, xi[static_cast<std::size_t>(d)]);
      for (int r = 0; r < ord; ++r) s *= ixi;
    }
    sym[static_cast<std::size_t>(i)] = kill ? std::complex<double>(0.0, 0.0) : s;
  }
  return sym;
}

Field apply_symbol(const Field& u, std::span<const std::complex<double>> symbol) {
  if (static_cast<int>(symbol.size()) != u.size())
    throw ConfigError("apply_symbol: symbol size mismatch");
  return apply_multiplier(u, [&](int i) { return symbol[static_cast<std::size_t>(i)]; });
}

Field apply_symbol(const Field& u, std::span<const double> symbol) {
  if (static_cast<int>(symbol.size()) != u.size())
    throw ConfigError("apply_symbol: symbol size mismatch");
  return apply_multiplier(u, [&](int i) {
    return std::complex<double>(symbol[static_cast<std::size_t>(i)], 0.0);
  });
}

Field frac_laplacian(const Field& u, double s) {
  if (!(s > 0.0)) throw ConfigError("frac_laplacian: s must be positive");
  const auto sym = frac_symbol(*u.grid(), 2.0 * s);
  return apply_symbol(u, sym);
}

namespace {

Field central_difference(const Field& u, const MultiIndex& sigma) {
  const GridSpec& grid = *u.grid();
  const double inv2h = 1.0 / (2.0 * grid.spacing());
  Field cur = u;
  const int n = grid.points_per_dim();
  for (int d = 0; d < grid.dim(); ++d) {
    for (int rep = 0; rep < sigma[d]; ++rep) {
      Field next = Field::zeros(u.grid());
      for (int node = 0; node < grid.node_count(); ++node) {
        auto ij = grid.lattice(node);
        auto jm = ij, jp = ij;
        jm[static_cast<std::size_t>(d)] = (ij[static_cast<std::size_t>(d)] + n - 1) % n;
        jp[static_cast<std::size_t>(d)] = (ij[static_cast<std::size_t>(d)] + 1) % n;
        next[node] = (cur[grid.index(jp[0], jp[1])] - cur[grid.index(jm[0], jm[1])]) * inv2h;
      }
      cur = next;
    }
  }
  return cur;
}

}  // namespace

Field partial_derivative(const Field& u, const MultiIndex& sigma, DerivScheme scheme) {
  if (sigma.size() != u.grid()->dim())
    throw ConfigError("partial_derivative: sigma length must equal grid dim");
  if (sigma.is_zero()) return u;
  if (scheme == DerivScheme::central2) return central_difference(u, sigma);
  const auto sym = derivative_symbol(*u.grid(), sigma);
  return apply_symbol(u, std::span<const std::complex<double>>(sym));
}

double sobolev_norm(const Field& u, double a) {
  const GridSpec& grid = *u.grid();
  PlanSet& p = plans_for(grid);
  for (int i = 0; i < p.total; ++i) {
    p.a[i][0] = u[i];
    p.a[i][1] = 0.0;
  }
  fftw_execute(p.fwd);
  const auto weight = bessel_symbol(grid, 2.0 * a);
  double acc = 0.0;
  for (int i = 0; i < p.total; ++i) {
    const double mag2 = p.b[i][0] * p.b[i][0] + p.b[i][1] * p.b[i][1];
    acc += weight[static_cast<std::size_t>(i)] * mag2;
  }
  // Parseval: sum |u_hat|^2 = N^dim sum |u|^2, so dividing by N^dim and
  // applying the quadrature weight reproduces the L2 norm at a = 0.
  return std::sqrt(acc * grid.quad_weight() / p.total);
}

}  // namespace nlfs
