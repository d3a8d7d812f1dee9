#include "gradflow/maximal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "gradflow/errors.hpp"

namespace gradflow {

const char* source_name(Source s) {
  switch (s) {
    case Source::PFlow: return "pflow";
    case Source::Heat: return "heat";
    case Source::Poisson: return "poisson";
  }
  return "?";
}

Extension extend_pflow(const GridFunction& f, const TimeGrid& timegrid,
                       const VariationalKernel& kernel, const ProximalConfig& config) {
  FlowTrace trace = solve_flow(f, timegrid, kernel, config);
  return Extension{Source::PFlow, timegrid, std::move(trace.states)};
}

Extension extend_semigroup(const EllipticOperator& op, const GridFunction& f,
                           const TimeGrid& timegrid, Source source) {
  if (source == Source::PFlow)
    throw std::invalid_argument("extend_semigroup handles Heat and Poisson sources");
  Extension ext{source, timegrid, {}};
  ext.states.reserve(timegrid.knots.size());
  ext.states.push_back(f);
  const bool direct = op.spectral_available();
  for (size_t k = 1; k < timegrid.knots.size(); ++k) {
    const double t = timegrid.knots[k];
    if (source == Source::Heat) {
      // spectral path restarts from f (no error accumulation); CN steps
      ext.states.push_back(direct ? heat_apply(op, f, t)
                                  : heat_apply(op, ext.states.back(),
                                               t - timegrid.knots[k - 1]));
    } else {
      ext.states.push_back(poisson_apply(op, f, t));
    }
  }
  return ext;
}

MaximalResult vertical_max(const Extension& ext) {
  const GridFunction& f = ext.states.front();
  MaximalResult res{ext.source, ext.timegrid, f, f,
                    std::vector<int>(static_cast<size_t>(f.size()), 0)};
  for (size_t k = 1; k < ext.states.size(); ++k) {
    const GridFunction& s = ext.states[k];
    for (int i = 0; i < f.size(); ++i) res.m[i] = std::max(res.m[i], s[i]);
  }
  // smallest knot attaining the max; rounding-level near-ties resolve early
  for (int i = 0; i < f.size(); ++i) {
    const double tie = res.m[i] - 1e-12 * std::max(1.0, std::abs(res.m[i]));
    for (size_t k = 0; k < ext.states.size(); ++k) {
      if (ext.states[k][i] >= tie) {
        res.argmax_knot[static_cast<size_t>(i)] = static_cast<int>(k);
        break;
      }
    }
  }
  return res;
}

DetachmentSet detachment_set(const MaximalResult& res, double tol) {
  DetachmentSet d{RegionMask(res.m.grid()), tol, false, 0};
  const Grid& g = res.m.grid();
  for (int i = 0; i < res.m.size(); ++i) {
    if (res.m[i] > res.base[i] + tol) {
      d.region.set(i);
      ++d.count;
      if (!g.periodic() && g.on_boundary(i)) d.touches_boundary = true;
    }
  }
  return d;
}

void MaximalResult::write_csv(std::ostream& out, const DetachmentSet& detachment) const {
  out << "node_index,f,m,argmax_t,in_detachment\n";
  char buf[160];
  for (int i = 0; i < m.size(); ++i) {
    const double t = timegrid.knots[static_cast<size_t>(argmax_knot[static_cast<size_t>(i)])];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d\n", i, base[i], m[i], t,
                  detachment.region.contains(i) ? 1 : 0);
    out << buf;
  }
}

namespace {

// Stencil of a node under the kernel's discrete operator: axis neighbors,
// plus cell diagonals for 2D quadratic kernels with off-diagonal weight.
bool stencil_inside(const Grid& g, const RegionMask& region, int node, bool with_diagonals) {
  const int ix = g.node_x(node), iy = g.node_y(node);
  const int nx = g.shape()[0], ny = g.dim() == 2 ? g.shape()[1] : 1;
  for (int dy = g.dim() == 2 ? -1 : 0; dy <= (g.dim() == 2 ? 1 : 0); ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dx == 0 && dy == 0) continue;
      if (!with_diagonals && dx != 0 && dy != 0) continue;
      int jx = ix + dx, jy = iy + dy;
      if (g.periodic()) {
        jx = (jx + nx) % nx;
        jy = (jy + ny) % ny;
      } else if (jx < 0 || jx >= nx || jy < 0 || jy >= ny) {
        return false;  // ghost neighbor: the stencil leaves the box
      }
      if (!region.contains(g.node_index(jx, jy))) return false;
    }
  }
  return true;
}

}  // namespace

SubharmonicityReport subharmonicity_residual(const MaximalResult& res,
                                             const VariationalKernel& kernel,
                                             const DetachmentSet& detachment, double tol,
                                             bool require_interior) {
  SubharmonicityReport rep{};
  rep.set_count = detachment.count;
  if (detachment.count == 0) {
    rep.status = SubharmonicityReport::Status::VacuousEmptySet;
    rep.min_residual_all = 0.0;
    rep.min_residual_interior = 0.0;
    rep.scale = 0.0;
    return rep;
  }

  GridFunction scale(res.m.grid());
  const GridFunction residual = subsolution_residual(res.m, kernel, &scale);
  const Grid& g = res.m.grid();
  bool diagonals = false;
  if (kernel.kind() == VariationalKernel::Kind::Quadratic && g.dim() == 2) {
    for (int c = 0; c < kernel.coeff().cell_count() && !diagonals; ++c)
      diagonals = kernel.coeff().a12(c) != 0.0;
  }

  const double inf = std::numeric_limits<double>::infinity();
  rep.min_residual_all = inf;
  rep.min_residual_interior = inf;
  rep.scale = 0.0;
  for (int i = 0; i < res.m.size(); ++i) {
    if (!detachment.region.contains(i)) continue;
    rep.min_residual_all = std::min(rep.min_residual_all, residual[i]);
    rep.scale = std::max(rep.scale, scale[i]);
    if (stencil_inside(g, detachment.region, i, diagonals)) {
      ++rep.interior_count;
      rep.min_residual_interior = std::min(rep.min_residual_interior, residual[i]);
    }
  }
  if (rep.interior_count == 0) {
    if (require_interior)
      throw EmptyInterior("detachment set has no full-stencil node; refine the grid or t_max");
    rep.status = SubharmonicityReport::Status::NoInterior;
    rep.min_residual_interior = 0.0;
    return rep;
  }
  const double floor = std::max(rep.scale, 1e-14);
  rep.status = rep.min_residual_interior >= -tol * floor
                   ? SubharmonicityReport::Status::Pass
                   : SubharmonicityReport::Status::Fail;
  return rep;
}

HajlaszReport hajlasz_bound(const Extension& ext, int smoothing_knots, double tol) {
  const Grid& g = ext.states.front().grid();
  const int n = g.node_count();
  if (n > 4096) throw std::invalid_argument("hajlasz_bound is an all-pairs check; n <= 4096");
  const size_t from = static_cast<size_t>(std::max(0, smoothing_knots));
  if (from >= ext.states.size())
    throw std::invalid_argument("smoothing_knots exceeds the knot count");

  // m~ over the smoothed knots, and g = sup over the same knots of the node
  // gradient magnitude (max over incident edges)
  GridFunction m = ext.states[from];
  GridFunction gmax(g);
  for (size_t k = from; k < ext.states.size(); ++k) {
    const GridFunction& s = ext.states[k];
    const EdgeField xi = gradient(s);
    for (int i = 0; i < n; ++i) {
      m[i] = std::max(m[i], s[i]);
      double loc = 0.0;
      for (int a = 0; a < g.dim(); ++a) {
        loc = std::max(loc, std::abs(xi.axis_value(a, g.outgoing_edge(a, i))));
        loc = std::max(loc, std::abs(xi.axis_value(a, g.incoming_edge(a, i))));
      }
      gmax[i] = std::max(gmax[i], loc);
    }
  }
  const GridFunction mg = hardy_littlewood_max(gmax);

  HajlaszReport rep{0.0, 0, true};
  for (int x = 0; x < n; ++x) {
    for (int y = x + 1; y < n; ++y) {
      const double lhs = std::abs(m[x] - m[y]);
      if (lhs == 0.0) continue;
      const double rhs = g.distance(x, y) * (mg[x] + mg[y]);
      ++rep.pair_count;
      if (rhs == 0.0) {
        rep.max_ratio = std::numeric_limits<double>::infinity();
      } else {
        rep.max_ratio = std::max(rep.max_ratio, lhs / rhs);
      }
    }
  }
  rep.pass = rep.max_ratio <= 1.0 + tol;
  return rep;
}

}  // namespace gradflow
