#pragma once

#include <iosfwd>
#include <vector>

#include "gradflow/energy.hpp"
#include "gradflow/grid.hpp"

namespace gradflow {

/// Geometric time grid t_k = t_min * ratio^k capped at t_max, prepended
/// with t = 0. The t_min knot doubles as the smoothing scale in the
/// maximal-function checks; refining (t_min, ratio, t_max) is the knob.
struct TimeGrid {
  double t_min = 1e-4;
  double ratio = 1.25;
  double t_max = 10.0;
  std::vector<double> knots;

  static TimeGrid geometric(double t_min, double ratio, double t_max);
  int steps() const { return static_cast<int>(knots.size()) - 1; }
};

struct ProximalConfig {
  double newton_tol = 1e-10;   // residual, absolute, h^n-weighted l2 scale
  int max_newton_iters = 60;
  double damping = 1.0;        // initial Newton step scale in (0, 1]
  double delta = 1e-12;        // degeneracy regularizer, Jacobian only
};

struct LedgerRow {
  double t;
  double l2_sq;
  double energy;
  double dissipation;  // accumulated 2 sum tau_k p F(u^k)
  double min_value;
  double support_radius;
};

struct FlowTrace {
  VariationalKernel kernel;
  TimeGrid timegrid;
  std::vector<GridFunction> states;  // states[0] = initial data
  std::vector<LedgerRow> ledger;

  /// CSV columns: t, l2_norm_sq, energy, min_value, support_radius.
  void write_csv(std::ostream& out) const;
};

/// One backward-Euler step: the unique minimizer of
/// (1/2 tau) |v - u|^2 + F(v), solved by damped Newton with CG inner solves.
/// Throws NonConvergence if the residual tolerance is not reached.
GridFunction proximal_step(const GridFunction& u, double tau, const VariationalKernel& kernel,
                           const ProximalConfig& config);

/// Implicit flow along the time grid with the exact dissipation ledger.
FlowTrace solve_flow(const GridFunction& f, const TimeGrid& timegrid,
                     const VariationalKernel& kernel, const ProximalConfig& config);

struct OrderReport {
  double min_margin;  // min over knots and nodes of (state_g - state_f)
  bool pass;
};
/// Requires f <= g pointwise; PASS iff the margin stays >= -10 newton_tol.
OrderReport check_order_preservation(const GridFunction& f, const GridFunction& g,
                                     const TimeGrid& timegrid, const VariationalKernel& kernel,
                                     const ProximalConfig& config);

struct FiniteSpeedReport {
  std::vector<double> radii;  // per knot, physical units
  bool pass;
};
/// Radius of the smallest inflation of the initial support containing all
/// |values| >= threshold, per knot. Throws DomainTooSmall when the
/// above-threshold set reaches the boundary ring.
FiniteSpeedReport check_finite_speed(const FlowTrace& trace, const RegionMask& initial_support,
                                     double threshold);

}  // namespace gradflow
