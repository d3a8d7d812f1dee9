#include "gradflow/pflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "gradflow/errors.hpp"

namespace gradflow {

TimeGrid TimeGrid::geometric(double t_min, double ratio, double t_max) {
  if (!(t_min > 0.0)) throw std::invalid_argument("t_min must be positive");
  if (!(ratio > 1.0)) throw std::invalid_argument("ratio must exceed 1");
  if (!(t_max >= t_min)) throw std::invalid_argument("t_max must be >= t_min");
  TimeGrid tg;
  tg.t_min = t_min;
  tg.ratio = ratio;
  tg.t_max = t_max;
  tg.knots.push_back(0.0);
  for (double t = t_min; t <= t_max * (1.0 + 1e-12); t *= ratio) tg.knots.push_back(t);
  return tg;
}

namespace {

// Difference-pair quadratic form with mutable weights:
// H = sum_k w_k (e_i - e_j)(e_i - e_j)^T, ghost endpoints fixed at zero.
struct PairOp {
  std::vector<std::int32_t> pi, pj;
  std::vector<double> w;

  void apply_add(const std::vector<double>& x, std::vector<double>& y, double scale) const {
    const size_t m = w.size();
    for (size_t k = 0; k < m; ++k) {
      const int i = pi[k], j = pj[k];
      const double xi = i < 0 ? 0.0 : x[static_cast<size_t>(i)];
      const double xj = j < 0 ? 0.0 : x[static_cast<size_t>(j)];
      const double f = scale * w[k] * (xi - xj);
      if (i >= 0) y[static_cast<size_t>(i)] += f;
      if (j >= 0) y[static_cast<size_t>(j)] -= f;
    }
  }

  void diag_add(std::vector<double>& d, double scale) const {
    const size_t m = w.size();
    for (size_t k = 0; k < m; ++k) {
      if (pi[k] >= 0) d[static_cast<size_t>(pi[k])] += scale * w[k];
      if (pj[k] >= 0) d[static_cast<size_t>(pj[k])] += scale * w[k];
    }
  }
};

struct ProxContext {
  const VariationalKernel& kernel;
  const Grid& grid;
  PairOp op;           // quadratic: fixed weights; ppower: refreshed per iterate
  bool is_ppower;
  double hpow;         // h^(n-2)

  explicit ProxContext(const VariationalKernel& k, const Grid& g)
      : kernel(k), grid(g), is_ppower(k.kind() == VariationalKernel::Kind::PPower),
        hpow(std::pow(g.h(), g.dim() - 2)) {
    if (is_ppower) {
      for (int a = 0; a < g.dim(); ++a) {
        const int ne = g.edge_count(a);
        for (int e = 0; e < ne; ++e) {
          op.pi.push_back(static_cast<std::int32_t>(g.edge_head(a, e)));
          op.pj.push_back(static_cast<std::int32_t>(g.edge_tail(a, e)));
        }
      }
      op.w.assign(op.pi.size(), 0.0);
    } else {
      for (const auto& pr : quadratic_pairs(k.coeff())) {
        op.pi.push_back(pr.i);
        op.pj.push_back(pr.j);
        op.w.push_back(pr.w);
      }
    }
  }

  // Refresh Jacobian weights w_e = h^(n-2) (p-1) (xi^2 + delta)^((p-2)/2).
  void refresh_weights(const std::vector<double>& v, double delta) {
    if (!is_ppower) return;
    const double inv_h = 1.0 / grid.h();
    const double p = kernel.p();
    const size_t m = op.w.size();
    for (size_t k = 0; k < m; ++k) {
      const int i = op.pi[k], j = op.pj[k];
      const double xi = ((i < 0 ? 0.0 : v[static_cast<size_t>(i)]) -
                         (j < 0 ? 0.0 : v[static_cast<size_t>(j)])) * inv_h;
      op.w[k] = hpow * (p - 1.0) * std::pow(xi * xi + delta, 0.5 * (p - 2.0));
    }
  }

  // grad_euclid F(v), added into y.
  void add_energy_gradient(const std::vector<double>& v, std::vector<double>& y) const {
    const double inv_h = 1.0 / grid.h();
    if (is_ppower) {
      const double p = kernel.p();
      const double hn1 = std::pow(grid.h(), grid.dim() - 1);
      const size_t m = op.pi.size();
      for (size_t k = 0; k < m; ++k) {
        const int i = op.pi[k], j = op.pj[k];
        const double xi = ((i < 0 ? 0.0 : v[static_cast<size_t>(i)]) -
                           (j < 0 ? 0.0 : v[static_cast<size_t>(j)])) * inv_h;
        const double phi = std::pow(std::abs(xi), p - 2.0) * xi;
        if (i >= 0) y[static_cast<size_t>(i)] += hn1 * phi;
        if (j >= 0) y[static_cast<size_t>(j)] -= hn1 * phi;
      }
    } else {
      op.apply_add(v, y, 1.0);
    }
  }
};

double energy_of(const ProxContext& ctx, const std::vector<double>& v) {
  return energy(GridFunction(ctx.grid, v), ctx.kernel);
}

// Preconditioned CG for (I + (tau/h^n) H) d = rhs. Euclidean inner products.
void solve_newton_system(const ProxContext& ctx, double tau, const std::vector<double>& rhs,
                         std::vector<double>& d, double abs_tol) {
  const int n = static_cast<int>(rhs.size());
  const double scale = tau / ctx.grid.cell_volume();

  std::vector<double> diag(static_cast<size_t>(n), 1.0);
  ctx.op.diag_add(diag, scale);

  std::vector<double> r = rhs, z(static_cast<size_t>(n)), p(static_cast<size_t>(n)),
      q(static_cast<size_t>(n));
  std::fill(d.begin(), d.end(), 0.0);

  auto dot = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
    return s;
  };

  double rnorm = std::sqrt(dot(r, r));
  if (rnorm <= abs_tol) return;

  for (int i = 0; i < n; ++i) z[static_cast<size_t>(i)] = r[static_cast<size_t>(i)] / diag[static_cast<size_t>(i)];
  p = z;
  double rz = dot(r, z);
  const int max_iters = 200 + 20 * n;
  for (int it = 0; it < max_iters; ++it) {
    q = p;
    ctx.op.apply_add(p, q, scale);  // q = p + scale * H p
    const double alpha = rz / dot(p, q);
    for (int i = 0; i < n; ++i) {
      d[static_cast<size_t>(i)] += alpha * p[static_cast<size_t>(i)];
      r[static_cast<size_t>(i)] -= alpha * q[static_cast<size_t>(i)];
    }
    rnorm = std::sqrt(dot(r, r));
    if (rnorm <= abs_tol) return;
    double rz_new = 0.0;
    for (int i = 0; i < n; ++i) {
      z[static_cast<size_t>(i)] = r[static_cast<size_t>(i)] / diag[static_cast<size_t>(i)];
      rz_new += r[static_cast<size_t>(i)] * z[static_cast<size_t>(i)];
    }
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < n; ++i)
      p[static_cast<size_t>(i)] = z[static_cast<size_t>(i)] + beta * p[static_cast<size_t>(i)];
  }
  throw CGNonConvergence("proximal inner CG exceeded its iteration cap");
}

GridFunction proximal_step_impl(ProxContext& ctx, const GridFunction& u, double tau,
                                const ProximalConfig& config) {
  if (!(tau > 0.0)) throw std::invalid_argument("proximal step needs tau > 0");
  if (!(config.newton_tol > 0.0) || config.max_newton_iters < 1 ||
      !(config.damping > 0.0 && config.damping <= 1.0) || !(config.delta >= 0.0))
    throw std::invalid_argument("malformed proximal configuration");
  const int n = u.size();
  const double vol = ctx.grid.cell_volume();
  const double sqrt_vol = std::sqrt(vol);

  std::vector<double> v = u.values();
  std::vector<double> residual(static_cast<size_t>(n)), d(static_cast<size_t>(n)),
      trial(static_cast<size_t>(n));

  // R(v) = v - u + (tau/h^n) grad F(v); weighted norm uses sqrt(h^n).
  auto compute_residual = [&](const std::vector<double>& w, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    ctx.add_energy_gradient(w, out);
    const double s = tau / vol;
    for (int i = 0; i < n; ++i)
      out[static_cast<size_t>(i)] = w[static_cast<size_t>(i)] - u[i] + s * out[static_cast<size_t>(i)];
  };
  auto weighted_norm = [&](const std::vector<double>& w) {
    double s = 0.0;
    for (double x : w) s += x * x;
    return std::sqrt(s) * sqrt_vol;
  };
  auto objective = [&](const std::vector<double>& w) {
    double q = 0.0;
    for (int i = 0; i < n; ++i) {
      const double dlt = w[static_cast<size_t>(i)] - u[i];
      q += dlt * dlt;
    }
    return q * vol / (2.0 * tau) + energy_of(ctx, w);
  };

  compute_residual(v, residual);
  double rnorm = weighted_norm(residual);
  double obj = objective(v);
  std::vector<double> trial_res(static_cast<size_t>(n));

  for (int iter = 0; iter < config.max_newton_iters; ++iter) {
    if (rnorm <= config.newton_tol) return GridFunction(ctx.grid, std::move(v));

    ctx.refresh_weights(v, config.delta);
    std::vector<double> rhs(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) rhs[static_cast<size_t>(i)] = -residual[static_cast<size_t>(i)];
    const double cg_tol = std::max(0.05 * config.newton_tol / sqrt_vol, 1e-16 * rnorm / sqrt_vol);
    solve_newton_system(ctx, tau, rhs, d, cg_tol);

    // Backtracking accepts on the Armijo objective decrease or on residual
    // contraction; the objective test alone saturates at rounding level well
    // before the residual tolerance is reached.
    double slope = 0.0;  // <grad G, d> = (h^n/tau) <R, d>
    for (int i = 0; i < n; ++i) slope += residual[static_cast<size_t>(i)] * d[static_cast<size_t>(i)];
    slope *= vol / tau;
    double alpha = config.damping;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      for (int i = 0; i < n; ++i)
        trial[static_cast<size_t>(i)] = v[static_cast<size_t>(i)] + alpha * d[static_cast<size_t>(i)];
      const double trial_obj = objective(trial);
      compute_residual(trial, trial_res);
      const double trial_rnorm = weighted_norm(trial_res);
      if (trial_obj <= obj + 1e-4 * alpha * slope ||
          trial_rnorm <= (1.0 - 1e-4 * alpha) * rnorm) {
        v.swap(trial);
        obj = trial_obj;
        residual.swap(trial_res);
        rnorm = trial_rnorm;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
  if (rnorm <= config.newton_tol) return GridFunction(ctx.grid, std::move(v));
  {
    char msg[128];
    std::snprintf(msg, sizeof msg, "proximal Newton stalled at residual %.3e (tau %.3e)",
                  rnorm, tau);
    throw NonConvergence(msg);
  }
}

double support_radius_of(const GridFunction& state, const GridFunction& dist, double threshold) {
  double r = 0.0;
  for (int i = 0; i < state.size(); ++i)
    if (std::abs(state[i]) > threshold) r = std::max(r, dist[i]);
  return r;
}

}  // namespace

GridFunction proximal_step(const GridFunction& u, double tau, const VariationalKernel& kernel,
                           const ProximalConfig& config) {
  ProxContext ctx(kernel, u.grid());
  return proximal_step_impl(ctx, u, tau, config);
}

FlowTrace solve_flow(const GridFunction& f, const TimeGrid& timegrid,
                     const VariationalKernel& kernel, const ProximalConfig& config) {
  FlowTrace trace{kernel, timegrid, {}, {}};
  trace.states.reserve(timegrid.knots.size());
  trace.ledger.reserve(timegrid.knots.size());
  trace.states.push_back(f);

  ProxContext ctx(kernel, f.grid());
  const double p = kernel.p();
  const GridFunction dist = chebyshev_distance(support_mask(f, 1e-8));

  double dissipation = 0.0;
  auto push_row = [&](double t, const GridFunction& state) {
    trace.ledger.push_back({t, l2_norm_sq(state), energy(state, kernel), dissipation,
                            min_value(state), support_radius_of(state, dist, 1e-8)});
  };
  push_row(0.0, f);

  for (size_t k = 1; k < timegrid.knots.size(); ++k) {
    const double tau = timegrid.knots[k] - timegrid.knots[k - 1];
    try {
      trace.states.push_back(proximal_step_impl(ctx, trace.states.back(), tau, config));
    } catch (const NonConvergence& e) {
      throw NonConvergence(std::string(e.what()) + " at knot " + std::to_string(k),
                           static_cast<int>(k));
    }
    dissipation += 2.0 * tau * p * energy(trace.states.back(), kernel);
    push_row(timegrid.knots[k], trace.states.back());
  }
  return trace;
}

void FlowTrace::write_csv(std::ostream& out) const {
  out << "t,l2_norm_sq,energy,min_value,support_radius\n";
  char buf[192];
  for (const auto& row : ledger) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", row.t, row.l2_sq,
                  row.energy, row.min_value, row.support_radius);
    out << buf;
  }
}

OrderReport check_order_preservation(const GridFunction& f, const GridFunction& g,
                                     const TimeGrid& timegrid, const VariationalKernel& kernel,
                                     const ProximalConfig& config) {
  const FlowTrace tf = solve_flow(f, timegrid, kernel, config);
  const FlowTrace tg = solve_flow(g, timegrid, kernel, config);
  double margin = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < tf.states.size(); ++k)
    for (int i = 0; i < f.size(); ++i)
      margin = std::min(margin, tg.states[k][i] - tf.states[k][i]);
  return {margin, margin >= -10.0 * config.newton_tol};
}

FiniteSpeedReport check_finite_speed(const FlowTrace& trace, const RegionMask& initial_support,
                                     double threshold) {
  const Grid& grid = initial_support.grid;
  const GridFunction dist = chebyshev_distance(initial_support);
  FiniteSpeedReport report;
  report.radii.reserve(trace.states.size());
  for (size_t k = 0; k < trace.states.size(); ++k) {
    const GridFunction& state = trace.states[k];
    for (int i = 0; i < state.size(); ++i)
      if (grid.on_boundary(i) && std::abs(state[i]) >= threshold)
        throw DomainTooSmall("support within threshold reached the boundary at knot " +
                             std::to_string(k));
    report.radii.push_back(support_radius_of(state, dist, threshold));
  }
  report.pass = true;
  return report;
}

}  // namespace gradflow
