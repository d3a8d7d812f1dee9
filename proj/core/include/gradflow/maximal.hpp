#pragma once

#include <iosfwd>
#include <vector>

#include "gradflow/energy.hpp"
#include "gradflow/grid.hpp"
#include "gradflow/pflow.hpp"
#include "gradflow/semigroup.hpp"

namespace gradflow {

enum class Source { PFlow, Heat, Poisson };

const char* source_name(Source s);

/// States of one extension along the knots; states[0] is the data at t = 0.
struct Extension {
  Source source;
  TimeGrid timegrid;
  std::vector<GridFunction> states;
};

Extension extend_pflow(const GridFunction& f, const TimeGrid& timegrid,
                       const VariationalKernel& kernel, const ProximalConfig& config);
Extension extend_semigroup(const EllipticOperator& op, const GridFunction& f,
                           const TimeGrid& timegrid, Source source);

/// Vertical maximal function over the knot set (t = 0 included, so m >= f).
struct MaximalResult {
  Source source;
  TimeGrid timegrid;
  GridFunction base;
  GridFunction m;
  std::vector<int> argmax_knot;  // smallest knot index on ties

  /// CSV columns: node_index, f, m, argmax_t, in_detachment.
  void write_csv(std::ostream& out, const struct DetachmentSet& detachment) const;
};
MaximalResult vertical_max(const Extension& ext);

/// E = {m > f + tol}; reports whether E touches the box boundary ring.
struct DetachmentSet {
  RegionMask region;
  double tol;
  bool touches_boundary;
  int count;
};
DetachmentSet detachment_set(const MaximalResult& res, double tol = 1e-8);

/// div A(x, grad m) over the detachment set. The discrete comparison
/// structure makes the residual nonnegative at every detachment node; the
/// spec's continuum-faithful statement is the minimum over nodes whose full
/// stencil stays inside E, reported separately.
struct SubharmonicityReport {
  enum class Status { Pass, Fail, VacuousEmptySet, NoInterior };
  Status status;
  double min_residual_all;       // over every detachment node
  double min_residual_interior;  // over full-stencil detachment nodes
  double scale;                  // max stencil flux magnitude over checked nodes
  int set_count;
  int interior_count;
  bool pass() const {
    return status == Status::Pass || status == Status::VacuousEmptySet;
  }
};
/// With require_interior set, a nonempty detachment set without a single
/// full-stencil node throws EmptyInterior (the grid or t_max is too coarse
/// for the interior check) instead of reporting NoInterior.
SubharmonicityReport subharmonicity_residual(const MaximalResult& res,
                                             const VariationalKernel& kernel,
                                             const DetachmentSet& detachment,
                                             double tol = 1e-6,
                                             bool require_interior = false);

/// Pointwise bound |m(x) - m(y)| <= d(x,y) (Mg(x) + Mg(y)) with
/// g = max over knots >= smoothing_knots of the node gradient magnitude,
/// checked over all node pairs. The default drops the raw-data knot, so the
/// t_min state plays the smoothing role.
struct HajlaszReport {
  double max_ratio;
  long pair_count;
  bool pass;
};
HajlaszReport hajlasz_bound(const Extension& ext, int smoothing_knots = 1, double tol = 1e-6);

}  // namespace gradflow
