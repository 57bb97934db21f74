#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace nlfs {

/// Axis-aligned open box or open ball inside the periodic cell [0, L)^dim.
/// Membership is strict so region boundaries never claim grid nodes that sit
/// exactly on them.
struct RegionSpec {
  enum class Kind { box, ball };
  Kind kind = Kind::box;
  std::array<double, 2> lo{};      // box corners, dim leading entries used
  std::array<double, 2> hi{};
  std::array<double, 2> center{};  // ball
  double radius = 0.0;

  static RegionSpec box1d(double a, double b);
  static RegionSpec box2d(double ax, double bx, double ay, double by);
  static RegionSpec ball(std::array<double, 2> center, double radius);

  bool contains(std::span<const double> x, int dim) const;
};

/// Carves Omega and the two measurement windows out of the periodic cell.
/// Windows are optional; solvers that never measure can omit them.
struct GridRegions {
  RegionSpec omega;
  std::optional<RegionSpec> w1;
  std::optional<RegionSpec> w2;
};

/// Uniform periodic grid on [0, L)^dim with node masks for the interior
/// region Omega, its complement, and the measurement windows W1, W2.
/// Immutable after construction; shared by every Field built on it.
class GridSpec {
 public:
  int dim() const { return dim_; }
  int points_per_dim() const { return n_; }
  double box_length() const { return length_; }
  int node_count() const { return total_; }
  double spacing() const { return length_ / n_; }
  /// Trapezoid weight (L/N)^dim of the periodic composite rule; exact for
  /// trigonometric polynomials below the Nyquist frequency.
  double quad_weight() const { return quad_weight_; }

  /// Row-major flattening: node = i * N + j in 2d.
  int index(int i, int j = 0) const;
  std::array<double, 2> coords(int node) const;
  /// Integer lattice coordinates of a node.
  std::array<int, 2> lattice(int node) const;

  const std::vector<std::uint8_t>& omega_mask() const { return omega_; }
  const std::vector<std::uint8_t>& exterior_mask() const { return exterior_; }
  const std::vector<std::uint8_t>& w1_mask() const { return w1_; }
  const std::vector<std::uint8_t>& w2_mask() const { return w2_; }
  const std::vector<std::uint8_t>& full_mask() const { return full_; }

  /// Ascending node ids of Omega; fixes the interior DOF ordering everywhere.
  const std::vector<int>& omega_nodes() const { return omega_nodes_; }
  int buffer_nodes() const { return buffer_nodes_; }
  const GridRegions& regions() const { return regions_; }

  GridSpec(const GridSpec&) = delete;
  GridSpec& operator=(const GridSpec&) = delete;

 private:
  GridSpec() = default;
  friend std::shared_ptr<const GridSpec> build_grid(int, int, double, const GridRegions&,
                                                    int);

  int dim_ = 1;
  int n_ = 0;
  int total_ = 0;
  double length_ = 0.0;
  double quad_weight_ = 0.0;
  int buffer_nodes_ = 0;
  GridRegions regions_;
  std::vector<std::uint8_t> omega_, exterior_, w1_, w2_, full_;
  std::vector<int> omega_nodes_;
};

/// Builds the grid and validates the geometry: dim in {1, 2}, N a power of
/// two >= 8, Omega nonempty and clear of the periodic wrap by buffer_nodes
/// spacings, windows inside the exterior. Throws ConfigError on violation.
std::shared_ptr<const GridSpec> build_grid(int dim, int points_per_dim, double box_length,
                                           const GridRegions& regions, int buffer_nodes = 4);

}  // namespace nlfs
