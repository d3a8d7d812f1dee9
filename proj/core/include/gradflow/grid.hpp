#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace gradflow {

enum class Boundary { Periodic, DirichletZero };

/// Uniform 1D/2D lattice. DirichletZero grids carry an implicit zero ghost
/// layer one site outside the box; Periodic grids wrap indices.
class Grid {
 public:
  Grid(int n, double h, Boundary boundary);              // 1D
  Grid(int nx, int ny, double h, Boundary boundary);     // 2D

  int dim() const { return dim_; }
  const std::array<int, 2>& shape() const { return shape_; }
  double h() const { return h_; }
  Boundary boundary() const { return boundary_; }
  bool periodic() const { return boundary_ == Boundary::Periodic; }

  int node_count() const { return shape_[0] * shape_[1]; }
  double cell_volume() const;  // h^dim

  int node_index(int ix, int iy = 0) const { return ix + shape_[0] * iy; }
  int node_x(int node) const { return node % shape_[0]; }
  int node_y(int node) const { return node / shape_[0]; }

  /// Directed edges per axis. Periodic: one edge per node (indexed by its
  /// tail). DirichletZero: one extra edge per lattice line, indexed so that
  /// edge e on a line couples sites e-1 and e, with ghosts at -1 and n.
  int edge_count(int axis) const;
  /// Endpoints of an edge; -1 stands for the zero ghost site.
  int edge_tail(int axis, int e) const;
  int edge_head(int axis, int e) const;
  /// Edge whose tail (resp. head) is the given node.
  int outgoing_edge(int axis, int node) const;
  int incoming_edge(int axis, int node) const;

  /// True if the node lies on the outermost ring (DirichletZero boxes).
  bool on_boundary(int node) const;

  /// Euclidean distance between nodes, minimal over periodic images.
  double distance(int a, int b) const;

  bool operator==(const Grid& o) const;
  bool operator!=(const Grid& o) const { return !(*this == o); }

 private:
  int dim_;
  std::array<int, 2> shape_;
  double h_;
  Boundary boundary_;
};

/// One real value per node.
class GridFunction {
 public:
  explicit GridFunction(const Grid& grid, double fill = 0.0)
      : grid_(grid), v_(static_cast<size_t>(grid.node_count()), fill) {}
  GridFunction(const Grid& grid, std::vector<double> values);

  const Grid& grid() const { return grid_; }
  int size() const { return static_cast<int>(v_.size()); }
  double operator[](int i) const { return v_[static_cast<size_t>(i)]; }
  double& operator[](int i) { return v_[static_cast<size_t>(i)]; }
  const std::vector<double>& values() const { return v_; }
  std::vector<double>& values() { return v_; }

 private:
  Grid grid_;
  std::vector<double> v_;
};

/// One real value per directed edge per axis.
class EdgeField {
 public:
  explicit EdgeField(const Grid& grid);

  const Grid& grid() const { return grid_; }
  double axis_value(int axis, int e) const { return v_[axis][static_cast<size_t>(e)]; }
  double& axis_value(int axis, int e) { return v_[axis][static_cast<size_t>(e)]; }
  const std::vector<double>& axis(int a) const { return v_[a]; }
  std::vector<double>& axis(int a) { return v_[a]; }

 private:
  Grid grid_;
  std::array<std::vector<double>, 2> v_;
};

/// Boolean node set.
struct RegionMask {
  Grid grid;
  std::vector<std::uint8_t> in;

  explicit RegionMask(const Grid& g, bool fill = false)
      : grid(g), in(static_cast<size_t>(g.node_count()), fill ? 1 : 0) {}
  static RegionMask full(const Grid& g) { return RegionMask(g, true); }
  bool contains(int node) const { return in[static_cast<size_t>(node)] != 0; }
  void set(int node, bool value = true) { in[static_cast<size_t>(node)] = value ? 1 : 0; }
  int count() const;
};

/// Forward difference; wraps (Periodic) or reads the zero ghost (DirichletZero).
EdgeField gradient(const GridFunction& u);

/// Exact negative adjoint of gradient under the h^n-weighted inner products:
/// <divergence(g), u> = -<g, gradient(u)> for all u, g.
GridFunction divergence(const EdgeField& g);

/// Discrete Hardy-Littlewood maximal function of |u|: max over axis-aligned
/// windows containing the node (1D: all intervals; 2D: centered l-inf balls)
/// of the window average.
GridFunction hardy_littlewood_max(const GridFunction& u);

// h^n-weighted inner products and norms.
double inner(const GridFunction& a, const GridFunction& b);
double inner(const EdgeField& a, const EdgeField& b);
double l2_norm_sq(const GridFunction& a);
double l2_norm(const GridFunction& a);
double l2_norm_sq(const EdgeField& a);
/// h^n * sum over edges of |g_e|^p (each axis difference enters separately).
double lp_pow(const EdgeField& g, double p);

double min_value(const GridFunction& a);
double max_abs(const GridFunction& a);

/// Chebyshev (l-inf, in physical units) distance to the nearest source node;
/// +inf everywhere when the source set is empty. Periodic grids measure
/// wrapped distance.
GridFunction chebyshev_distance(const RegionMask& sources);

/// Support mask {|u| > threshold}.
RegionMask support_mask(const GridFunction& u, double threshold);

}  // namespace gradflow
