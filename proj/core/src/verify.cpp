#include "gradflow/verify.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include "gradflow/errors.hpp"
#include "gradflow/rng.hpp"

namespace gradflow {

namespace {

constexpr double kMarginFloor = 1e-14;

double rel_margin(double before, double after) {
  return (before - after) / std::max(before, kMarginFloor);
}

const char* subharm_label(SubharmonicityReport::Status s) {
  switch (s) {
    case SubharmonicityReport::Status::Pass: return "pass";
    case SubharmonicityReport::Status::Fail: return "fail";
    case SubharmonicityReport::Status::VacuousEmptySet: return "vacuous";
    case SubharmonicityReport::Status::NoInterior: return "no-interior";
  }
  return "?";
}

void attach_subharmonicity(ContractionReport* rep, const SubharmonicityReport& sub) {
  rep->subharmonicity = subharm_label(sub.status);
  rep->subharm_min_interior = sub.min_residual_interior;
  rep->subharm_min_all = sub.min_residual_all;
  rep->detachment_count = sub.set_count;
  if (!sub.pass() && sub.status != SubharmonicityReport::Status::NoInterior) {
    rep->pass = false;
    if (rep->reason == "-") rep->reason = "subharmonicity residual below tolerance";
  }
}

}  // namespace

ContractionReport verify_pflow_contraction(const GridFunction& f, double p,
                                           const TimeGrid& timegrid,
                                           const ProximalConfig& config, double rel_tol) {
  ContractionReport rep;
  rep.check = "pflow";
  rep.dim = f.grid().dim();
  rep.n = f.grid().shape()[0];
  rep.boundary = f.grid().boundary();
  {
    char buf[48];
    std::snprintf(buf, sizeof buf, "ppower p=%g", p);
    rep.kernel_desc = buf;
  }
  rep.reason = "-";
  const VariationalKernel kernel = VariationalKernel::ppower(p);
  rep.energy_before = lp_pow(gradient(f), p);
  const Extension ext = extend_pflow(f, timegrid, kernel, config);
  const MaximalResult res = vertical_max(ext);
  rep.energy_after = lp_pow(gradient(res.m), p);
  rep.margin = rel_margin(rep.energy_before, rep.energy_after);
  rep.pass = rep.margin >= -rel_tol;
  if (!rep.pass) rep.reason = "contraction margin below tolerance";
  const DetachmentSet det = detachment_set(res);
  attach_subharmonicity(&rep, subharmonicity_residual(res, kernel, det));
  return rep;
}

ContractionReport verify_semigroup_contraction(const EllipticOperator& op,
                                               const GridFunction& f, const TimeGrid& timegrid,
                                               Source source, double rel_tol) {
  ContractionReport rep;
  rep.check = source_name(source);
  rep.dim = f.grid().dim();
  rep.n = f.grid().shape()[0];
  rep.boundary = f.grid().boundary();
  rep.kernel_desc = "quadratic";
  rep.reason = "-";
  const VariationalKernel kernel = VariationalKernel::quadratic(op.coeff());
  rep.energy_before = energy(f, kernel);
  const Extension ext = extend_semigroup(op, f, timegrid, source);
  const MaximalResult res = vertical_max(ext);
  rep.energy_after = energy(res.m, kernel);
  rep.margin = rel_margin(rep.energy_before, rep.energy_after);
  rep.pass = rep.margin >= -rel_tol;
  if (!rep.pass) rep.reason = "contraction margin below tolerance";
  // Detachment stats are diagnostics here; the subharmonicity gate belongs
  // to the proximal chain, where the argmax argument is exact. Semigroup
  // states sampled at knots carry O(knot-gap) residual slack for rough data.
  rep.detachment_count = detachment_set(res).count;
  rep.subharmonicity = "-";

  // Theorem 2 proof chain on the smoothed maximal function: with
  // m~ = sup over knots >= t_min (data = the t_min state),
  // Lam^-1 |grad m~|^2 <= 2F(m~) <= 2F(f_eps) <= 2F(f) <= Lam |grad f|^2.
  {
    Extension smoothed{ext.source, ext.timegrid,
                       std::vector<GridFunction>(ext.states.begin() + 1, ext.states.end())};
    const MaximalResult res_s = vertical_max(smoothed);
    const double lam = op.lambda();
    const double e_s = energy(res_s.m, kernel);
    const double e_eps = energy(ext.states[1], kernel);
    const double slack = 1.0 + rel_tol;
    const bool a = l2_norm_sq(gradient(res_s.m)) <= lam * 2.0 * e_s * slack + kMarginFloor;
    const bool b = e_s <= e_eps * slack + kMarginFloor;
    const bool c = e_eps <= rep.energy_before * slack + kMarginFloor;
    const bool d = 2.0 * rep.energy_before <= lam * l2_norm_sq(gradient(f)) * slack + kMarginFloor;
    rep.secondary_pass = a && b && c && d;
    if (!rep.secondary_pass && rep.pass) {
      rep.pass = false;
      rep.reason = "smoothed-chain inequality failed";
    }
  }
  return rep;
}

GridFunction generate_data(const Grid& grid, DataGenerator generator, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xda7a));
  const int nx = grid.shape()[0];
  const int ny = grid.dim() == 2 ? grid.shape()[1] : 1;
  const double lx = grid.h() * nx, ly = grid.h() * ny;
  GridFunction f(grid);

  if (generator == DataGenerator::Bumps) {
    const int bumps = 1 + rng.uniform_int(3);
    // keep supports inside DirichletZero boxes so the data is compact
    const double inset = grid.periodic() ? 0.0 : 0.2;
    for (int b = 0; b < bumps; ++b) {
      const double cx = rng.uniform(inset * lx, (1.0 - inset) * lx);
      const double cy = rng.uniform(inset * ly, (1.0 - inset) * ly);
      const double w = rng.uniform(0.08, 0.2) * lx;
      const double amp = rng.uniform(0.2, 1.0);
      for (int i = 0; i < f.size(); ++i) {
        double dx = std::abs((grid.node_x(i) + 0.5) * grid.h() - cx);
        double dy = grid.dim() == 2 ? std::abs((grid.node_y(i) + 0.5) * grid.h() - cy) : 0.0;
        if (grid.periodic()) {
          dx = std::min(dx, lx - dx);
          if (grid.dim() == 2) dy = std::min(dy, ly - dy);
        }
        const double r = std::sqrt(dx * dx + dy * dy);
        const double s = std::max(0.0, 1.0 - r / w);
        f[i] += amp * s * s;
      }
    }
  } else {
    const int modes = 3;
    std::vector<double> ax, kx, px, ay, ky, py;
    for (int m = 0; m < modes; ++m) {
      ax.push_back(rng.uniform(0.2, 1.0));
      kx.push_back(1.0 + rng.uniform_int(4));
      px.push_back(rng.uniform(0.0, 2.0 * M_PI));
      ay.push_back(rng.uniform(0.2, 1.0));
      ky.push_back(1.0 + rng.uniform_int(4));
      py.push_back(rng.uniform(0.0, 2.0 * M_PI));
    }
    double min_v = std::numeric_limits<double>::infinity();
    for (int i = 0; i < f.size(); ++i) {
      const double x = (grid.node_x(i) + 0.5) * grid.h();
      const double y = (grid.node_y(i) + 0.5) * grid.h();
      double v = 0.0;
      for (int m = 0; m < modes; ++m) {
        v += ax[static_cast<size_t>(m)] *
             std::cos(2.0 * M_PI * kx[static_cast<size_t>(m)] * x / lx + px[static_cast<size_t>(m)]);
        if (grid.dim() == 2)
          v += ay[static_cast<size_t>(m)] *
               std::cos(2.0 * M_PI * ky[static_cast<size_t>(m)] * y / ly + py[static_cast<size_t>(m)]);
      }
      f[i] = v;
      min_v = std::min(min_v, v);
    }
    for (int i = 0; i < f.size(); ++i) f[i] -= min_v;
    if (!grid.periodic()) {
      // taper to zero at the box so the data stays admissible
      for (int i = 0; i < f.size(); ++i) {
        const double x = (grid.node_x(i) + 1.0) / (nx + 1.0);
        double w = std::sin(M_PI * x);
        w *= w;
        if (grid.dim() == 2) {
          const double y = (grid.node_y(i) + 1.0) / (ny + 1.0);
          double wy = std::sin(M_PI * y);
          w *= wy * wy;
        }
        f[i] *= w;
      }
    }
  }

  const double peak = max_abs(f);
  if (peak > 0.0)
    for (double& v : f.values()) v /= peak;
  return f;
}

int resolve_thread_count(int requested) {
  int threads = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  if (const char* env = std::getenv("GRADFLOW_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) threads = std::min(threads, cap);
  }
  return threads;
}

namespace {

struct GridSpec {
  int dim;
  int n;
  Boundary boundary;
};

Grid make_grid(const GridSpec& gs) {
  const double h = gs.boundary == Boundary::Periodic ? 1.0 / gs.n : 1.0 / (gs.n + 1);
  return gs.dim == 1 ? Grid(gs.n, h, gs.boundary) : Grid(gs.n, gs.n, h, gs.boundary);
}

enum class CoeffKind { Identity, Checkerboard, RandomSpd };

struct Scenario {
  std::uint64_t id;
  std::string check;
  GridSpec grid;
  double p = 0.0;                 // pflow scenarios
  CoeffKind coeff = CoeffKind::Identity;
  int op_index = -1;              // semigroup scenarios: shared operator slot
  std::uint64_t data_seed = 0;
};

struct OperatorSlot {
  GridSpec grid;
  CoeffKind kind;
  std::uint64_t coeff_seed;
};

struct Plan {
  std::vector<Scenario> scenarios;
  std::vector<OperatorSlot> slots;
};

int slot_for(Plan* plan, const GridSpec& gs, CoeffKind kind, std::uint64_t coeff_seed) {
  for (size_t i = 0; i < plan->slots.size(); ++i) {
    const OperatorSlot& s = plan->slots[i];
    if (s.grid.dim == gs.dim && s.grid.n == gs.n && s.grid.boundary == gs.boundary &&
        s.kind == kind && (kind != CoeffKind::RandomSpd || s.coeff_seed == coeff_seed))
      return static_cast<int>(i);
  }
  plan->slots.push_back({gs, kind, coeff_seed});
  return static_cast<int>(plan->slots.size()) - 1;
}

Plan build_plan(const Ensemble& ens, const CheckSet& checks) {
  Plan plan;
  std::vector<std::string> kinds;
  if (checks.pflow) kinds.push_back("pflow");
  if (checks.heat) kinds.push_back("heat");
  if (checks.poisson) kinds.push_back("poisson");
  if (checks.order) kinds.push_back("order");
  if (checks.finite_speed) kinds.push_back("finite-speed");
  if (checks.dissipation) kinds.push_back("dissipation");
  if (checks.hajlasz) kinds.push_back("hajlasz");
  if (checks.kernel_certificate) kinds.push_back("kernel-certificate");
  if (kinds.empty() || ens.count <= 0) return plan;

  std::vector<GridSpec> grids;
  for (int n : ens.sizes_1d) {
    grids.push_back({1, n, Boundary::Periodic});
    grids.push_back({1, n, Boundary::DirichletZero});
  }
  for (int n : ens.sizes_2d) {
    grids.push_back({2, n, Boundary::Periodic});
    grids.push_back({2, n, Boundary::DirichletZero});
  }

  for (int i = 0; i < ens.count; ++i) {
    Scenario sc;
    sc.id = static_cast<std::uint64_t>(i);
    sc.check = kinds[static_cast<size_t>(i) % kinds.size()];
    sc.data_seed = mix_seed(ens.seed, static_cast<std::uint64_t>(i));
    const int variant = i / static_cast<int>(kinds.size());
    sc.grid = grids[static_cast<size_t>(variant) % grids.size()];

    if (sc.check == "pflow" || sc.check == "order") {
      sc.p = ens.p_values[static_cast<size_t>(variant) % ens.p_values.size()];
    } else if (sc.check == "finite-speed") {
      sc.p = 4.0;
      sc.grid = {sc.grid.dim, sc.grid.dim == 1 ? 256 : 48, Boundary::DirichletZero};
    } else if (sc.check == "hajlasz") {
      sc.grid = {1, ens.sizes_1d[static_cast<size_t>(variant) % ens.sizes_1d.size()],
                 variant % 2 == 0 ? Boundary::Periodic : Boundary::DirichletZero};
    } else {
      // semigroup family: cycle the coefficient kinds, share operators
      const CoeffKind kind = static_cast<CoeffKind>(variant % 3);
      if (sc.check == "kernel-certificate" && sc.grid.dim == 2 && sc.grid.n > 32)
        sc.grid.n = 32;
      if (sc.check == "kernel-certificate") sc.grid.boundary = Boundary::Periodic;
      sc.coeff = kind;
      const std::uint64_t coeff_seed = mix_seed(ens.seed, 0xc0effULL + variant / 3);
      sc.op_index = slot_for(&plan, sc.grid, kind, coeff_seed);
    }
    plan.scenarios.push_back(std::move(sc));
  }
  return plan;
}

CoefficientField make_coeff(const Grid& grid, CoeffKind kind, double lambda,
                            std::uint64_t seed) {
  switch (kind) {
    case CoeffKind::Identity: return CoefficientField::identity(grid);
    case CoeffKind::Checkerboard: return CoefficientField::checkerboard(grid, lambda);
    case CoeffKind::RandomSpd: return CoefficientField::random_spd(grid, lambda, seed);
  }
  throw std::logic_error("unreachable");
}

const char* coeff_label(CoeffKind kind) {
  switch (kind) {
    case CoeffKind::Identity: return "identity";
    case CoeffKind::Checkerboard: return "checkerboard";
    case CoeffKind::RandomSpd: return "random-spd";
  }
  return "?";
}

ContractionReport run_scenario(const Ensemble& ens, const Scenario& sc,
                               const std::vector<EllipticOperator>& ops) {
  const Grid grid = make_grid(sc.grid);
  const GridFunction f = generate_data(grid, ens.generator, sc.data_seed);

  ContractionReport rep;
  rep.scenario_id = sc.id;
  rep.check = sc.check;
  rep.seed = sc.data_seed;
  rep.dim = sc.grid.dim;
  rep.n = sc.grid.n;
  rep.boundary = sc.grid.boundary;
  rep.reason = "-";

  if (sc.check == "pflow") {
    rep = verify_pflow_contraction(f, sc.p, ens.pflow_timegrid, ens.solver);
    rep.scenario_id = sc.id;
    rep.seed = sc.data_seed;
    return rep;
  }

  if (sc.check == "heat" || sc.check == "poisson") {
    const EllipticOperator& op = ops[static_cast<size_t>(sc.op_index)];
    rep = verify_semigroup_contraction(op, f, ens.semigroup_timegrid,
                                       sc.check == "heat" ? Source::Heat : Source::Poisson);
    rep.scenario_id = sc.id;
    rep.seed = sc.data_seed;
    rep.kernel_desc = std::string("quadratic ") + coeff_label(sc.coeff);
    return rep;
  }

  rep.kernel_desc =
      sc.p > 0.0 ? std::string("ppower") : std::string("quadratic ") + coeff_label(sc.coeff);

  if (sc.check == "order") {
    GridFunction g = f;
    const GridFunction extra = generate_data(grid, ens.generator, mix_seed(sc.data_seed, 7));
    for (int i = 0; i < g.size(); ++i) g[i] += 0.5 * extra[i];
    const OrderReport rep_o = check_order_preservation(
        f, g, ens.pflow_timegrid, VariationalKernel::ppower(sc.p), ens.solver);
    rep.margin = rep_o.min_margin;
    rep.pass = rep_o.pass;
    rep.subharmonicity = "-";
    if (!rep.pass) rep.reason = "order preservation margin below tolerance";
    return rep;
  }

  if (sc.check == "finite-speed") {
    // centered bump on a box of length 4: gentle gradients keep the p-flux
    // moderate, so the support inflates but stays inside up to t = 1
    const double box = 4.0;
    const Grid fsgrid = sc.grid.dim == 1
                            ? Grid(sc.grid.n, box / (sc.grid.n + 1), Boundary::DirichletZero)
                            : Grid(sc.grid.n, sc.grid.n, box / (sc.grid.n + 1),
                                   Boundary::DirichletZero);
    GridFunction bump(fsgrid);
    Rng rng(mix_seed(sc.data_seed, 3));
    const double w = rng.uniform(0.4, 0.6);
    for (int i = 0; i < bump.size(); ++i) {
      double d2 = std::pow((fsgrid.node_x(i) + 0.5) * fsgrid.h() - 0.5 * box, 2);
      if (fsgrid.dim() == 2)
        d2 += std::pow((fsgrid.node_y(i) + 0.5) * fsgrid.h() - 0.5 * box, 2);
      const double s = std::max(0.0, 1.0 - std::sqrt(d2) / w);
      bump[i] = s * s;
    }
    TimeGrid tg = TimeGrid::geometric(1e-4, 1.25, 1.0);
    const VariationalKernel kernel = VariationalKernel::ppower(sc.p);
    const FlowTrace trace = solve_flow(bump, tg, kernel, ens.solver);
    const RegionMask support = support_mask(bump, 1e-12);
    const FiniteSpeedReport fs = check_finite_speed(trace, support, 1e-8);
    const GridFunction dist = chebyshev_distance(support);
    double limit = std::numeric_limits<double>::infinity();
    for (int i = 0; i < bump.size(); ++i)
      if (fsgrid.on_boundary(i)) limit = std::min(limit, dist[i]);
    const double worst = *std::max_element(fs.radii.begin(), fs.radii.end());
    rep.margin = (limit - worst) / std::max(limit, kMarginFloor);
    rep.pass = fs.pass && rep.margin > 0.0;
    rep.subharmonicity = "-";
    if (!rep.pass) rep.reason = "support inflation reached the box";
    return rep;
  }

  if (sc.check == "dissipation") {
    const EllipticOperator& op = ops[static_cast<size_t>(sc.op_index)];
    const DissipationReport dr = dissipation_check(op, f, ens.semigroup_timegrid);
    rep.energy_before = dr.heat_energy.front();
    rep.energy_after = dr.heat_energy.back();
    rep.margin = -dr.worst_increase;
    rep.pass = dr.pass;
    rep.subharmonicity = "-";
    if (!rep.pass) rep.reason = "semigroup energy increased along the knots";
    return rep;
  }

  if (sc.check == "hajlasz") {
    const VariationalKernel kernel = VariationalKernel::ppower(3.0);
    const Extension ext = extend_pflow(f, ens.pflow_timegrid, kernel, ens.solver);
    const HajlaszReport hr = hajlasz_bound(ext);
    rep.margin = 1.0 - hr.max_ratio;
    rep.pass = hr.pass;
    rep.kernel_desc = "ppower p=3";
    rep.subharmonicity = "-";
    if (!rep.pass) rep.reason = "pointwise gradient bound ratio above 1";
    return rep;
  }

  if (sc.check == "kernel-certificate") {
    const EllipticOperator& op = ops[static_cast<size_t>(sc.op_index)];
    const Grid& g = op.grid();
    const double h2 = g.h() * g.h();
    const std::vector<double> times = {h2, 0.01, 0.1, 1.0};
    const GaussianCalibration cal = calibrate_gaussian_bound(g, times);
    const KernelCertificateReport kr = check_kernel_certificate(op, cal, times, {});
    rep.margin = 1.0 - kr.max_bound_ratio;
    rep.pass = kr.pass;
    rep.subharmonicity = "-";
    if (!rep.pass) rep.reason = "kernel certificate violated";
    return rep;
  }

  rep.reason = "unknown check";
  return rep;
}

}  // namespace

EnsembleResult run_ensemble(const Ensemble& ensemble, const CheckSet& checks, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const Plan plan = build_plan(ensemble, checks);

  std::vector<EllipticOperator> ops;
  ops.reserve(plan.slots.size());
  for (const auto& slot : plan.slots) {
    const Grid grid = make_grid(slot.grid);
    ops.push_back(EllipticOperator::assemble(
        grid, make_coeff(grid, slot.kind, ensemble.lambda, slot.coeff_seed)));
  }

  EnsembleResult result;
  result.reports.resize(plan.scenarios.size());
  std::atomic<size_t> next{0};
  const int workers = std::min(resolve_thread_count(threads),
                               std::max(1, static_cast<int>(plan.scenarios.size())));
  auto work = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= plan.scenarios.size()) return;
      const Scenario& sc = plan.scenarios[i];
      try {
        result.reports[i] = run_scenario(ensemble, sc, ops);
      } catch (const std::exception& e) {
        ContractionReport rep;
        rep.scenario_id = sc.id;
        rep.check = sc.check;
        rep.seed = sc.data_seed;
        rep.dim = sc.grid.dim;
        rep.n = sc.grid.n;
        rep.boundary = sc.grid.boundary;
        rep.pass = false;
        rep.margin = -std::numeric_limits<double>::infinity();
        rep.subharmonicity = "-";
        rep.reason = e.what();
        result.reports[i] = std::move(rep);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();

  result.total = static_cast<int>(result.reports.size());
  result.worst_margin = std::numeric_limits<double>::infinity();
  for (const auto& rep : result.reports) {
    if (rep.pass)
      ++result.passed;
    else
      ++result.failed;
    result.worst_margin = std::min(result.worst_margin, rep.margin);
  }
  if (result.reports.empty()) result.worst_margin = 0.0;
  result.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

void EnsembleResult::write_csv(std::ostream& out) const {
  out << "scenario_id,check,seed,dim,n,boundary,kernel,energy_before,energy_after,margin,"
         "detachment_count,subharmonicity,subharm_min_interior,subharm_min_all,"
         "secondary_pass,pass,reason\n";
  char buf[512];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf,
                  "%llu,%s,%llu,%d,%d,%s,%s,%.17g,%.17g,%.17g,%d,%s,%.17g,%.17g,%d,%d,%s\n",
                  static_cast<unsigned long long>(r.scenario_id), r.check.c_str(),
                  static_cast<unsigned long long>(r.seed), r.dim, r.n,
                  r.boundary == Boundary::Periodic ? "periodic" : "dirichlet0",
                  r.kernel_desc.c_str(), r.energy_before, r.energy_after, r.margin,
                  r.detachment_count, r.subharmonicity.c_str(), r.subharm_min_interior,
                  r.subharm_min_all, r.secondary_pass ? 1 : 0, r.pass ? 1 : 0,
                  r.reason.c_str());
    out << buf;
  }
}

std::string EnsembleResult::summary_json() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "{\n  \"total\": %d,\n  \"pass\": %d,\n  \"fail\": %d,\n"
                "  \"worst_margin\": %.17g,\n  \"wall_time_s\": %.3f\n}\n",
                total, passed, failed, worst_margin, wall_time_s);
  return buf;
}

}  // namespace gradflow
