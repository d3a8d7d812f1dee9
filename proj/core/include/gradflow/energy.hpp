#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

#include "gradflow/grid.hpp"

namespace gradflow {

/// Symmetric elliptic coefficients, one entry (1D) or one symmetric 2x2
/// matrix (2D) per cell. Cells sit between lattice sites: Periodic grids
/// have one cell per node (wrapping), DirichletZero grids one extra cell
/// per axis (the ghost ring belongs to the surrounding medium).
class CoefficientField {
 public:
  static CoefficientField identity(const Grid& grid);
  static CoefficientField scalar(const Grid& grid, double value, double lambda);
  static CoefficientField checkerboard(const Grid& grid, double lambda);
  /// Random SPD field with spectrum in [1/lambda, lambda]. Off-diagonals are
  /// clamped to |a12| <= 0.95 min(a11, a22), keeping the assembled operator
  /// monotone; clamping only tightens the spectral window.
  static CoefficientField random_spd(const Grid& grid, double lambda, std::uint64_t seed);

  /// Plain-text format: one row per cell ("a11 a12 a22" in 2D, "a" in 1D).
  static CoefficientField load(std::istream& in, const Grid& grid, double lambda);
  void save(std::ostream& out) const;

  const Grid& grid() const { return grid_; }
  double lambda() const { return lambda_; }
  int cell_count() const;

  double a11(int cell) const { return a11_[static_cast<size_t>(cell)]; }
  double a12(int cell) const { return a12_[static_cast<size_t>(cell)]; }
  double a22(int cell) const { return a22_[static_cast<size_t>(cell)]; }

  /// Throws EllipticityViolation unless every cell's spectrum lies in
  /// [1/lambda, lambda] (up to rounding slack) and symmetry holds by storage.
  void validate() const;

 private:
  CoefficientField(const Grid& grid, double lambda);
  Grid grid_;
  double lambda_;
  std::vector<double> a11_, a12_, a22_;  // a12/a22 unused in 1D
};

/// F(x, xi) = |xi|^p / p (PPower) or (1/2) A(x) xi . xi (Quadratic).
class VariationalKernel {
 public:
  enum class Kind { PPower, Quadratic };

  static VariationalKernel ppower(double p);
  static VariationalKernel quadratic(CoefficientField coeff);

  Kind kind() const { return kind_; }
  double p() const { return p_; }
  const CoefficientField& coeff() const { return *coeff_; }
  /// Growth constant: the discrete PPower energy has Lambda = 1 exactly.
  double growth_lambda() const;

 private:
  Kind kind_;
  double p_;
  std::shared_ptr<const CoefficientField> coeff_;
};

using Vec2 = std::array<double, 2>;

// Pointwise kernel calculus at a cell. 1D vectors use component 0.
double kernel_value(const VariationalKernel& k, int cell, const Vec2& xi, int dim);
Vec2 kernel_gradient(const VariationalKernel& k, int cell, const Vec2& xi, int dim);
/// F(x,xi1) - F(x,xi2) - A(x,xi2).(xi1-xi2); positive for xi1 != xi2.
double convexity_gap(const VariationalKernel& k, int cell, const Vec2& xi1, const Vec2& xi2, int dim);
/// (A(x,xi1) - A(x,xi2)).(xi1-xi2) >= 0.
double monotonicity_gap(const VariationalKernel& k, int cell, const Vec2& xi1, const Vec2& xi2, int dim);

/// Weighted difference pair: contributes (w/2)(u_i - u_j)^2 to the discrete
/// quadratic energy. Endpoint -1 is the zero ghost; attach names the node a
/// localized energy charges the term to.
struct DifferencePair {
  std::int32_t i, j;
  double w;
  std::int32_t attach;
};

/// The quadratic form 2 F(u) = sum w (u_i - u_j)^2 realizing the A-energy:
/// per cell, A splits into axis terms (face-averaged onto edges) and
/// diagonal-difference terms carrying a12.
std::vector<DifferencePair> quadratic_pairs(const CoefficientField& coeff);

/// Localized energy; the full-mask overload is the global functional.
double energy(const GridFunction& u, const VariationalKernel& k);
double energy(const GridFunction& u, const VariationalKernel& k, const RegionMask& region);

/// Node-wise div A(x, grad u); nonnegative on a region iff u is a discrete
/// subsolution there. The optional scale output records the sum of stencil
/// flux magnitudes per node (the natural residual scale).
GridFunction subsolution_residual(const GridFunction& u, const VariationalKernel& k);
GridFunction subsolution_residual(const GridFunction& u, const VariationalKernel& k,
                                  GridFunction* scale_out);
GridFunction subsolution_residual(const GridFunction& u, const VariationalKernel& k,
                                  const RegionMask& region);

}  // namespace gradflow
