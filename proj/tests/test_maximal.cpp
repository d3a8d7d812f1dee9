#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gradflow/errors.hpp"
#include "gradflow/maximal.hpp"
#include "gradflow/rng.hpp"
#include "gradflow/verify.hpp"

using namespace gradflow;

namespace {

const ProximalConfig kConfig;

// f = 1 + 0.5 cos profile on four periodic nodes; the heat extension is
// 1 + 0.5 e^{-2t} (1, 0, -1, 0), so every maximal quantity has a closed form.
struct CosineScenario {
  Grid grid{4, 1.0, Boundary::Periodic};
  EllipticOperator op;
  GridFunction f;
  CosineScenario()
      : op(EllipticOperator::assemble(grid, CoefficientField::identity(grid))),
        f(grid, {1.5, 1.0, 0.5, 1.0}) {}
};

}  // namespace

TEST_CASE("constants are invariant under all three extensions") {
  Grid g(8, 0.125, Boundary::Periodic);
  GridFunction c(g, 2.0);
  const TimeGrid tg = TimeGrid::geometric(1e-3, 1.5, 2.0);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  for (const Extension& ext :
       {extend_pflow(c, tg, VariationalKernel::ppower(4.0), kConfig),
        extend_semigroup(op, c, tg, Source::Heat),
        extend_semigroup(op, c, tg, Source::Poisson)}) {
    const MaximalResult res = vertical_max(ext);
    for (int i = 0; i < c.size(); ++i) {
      CHECK(res.m[i] == doctest::Approx(2.0).epsilon(1e-11));
      CHECK(res.argmax_knot[static_cast<size_t>(i)] == 0);
    }
    const DetachmentSet det = detachment_set(res, 1e-8);
    CHECK(det.count == 0);
    const SubharmonicityReport sub =
        subharmonicity_residual(res, VariationalKernel::ppower(4.0), det);
    CHECK(sub.status == SubharmonicityReport::Status::VacuousEmptySet);
    CHECK(sub.pass());
  }
}

TEST_CASE("heat cosine example matches the spectral closed form") {
  CosineScenario sc;
  const TimeGrid tg = TimeGrid::geometric(1e-4, 1.25, 10.0);
  const Extension ext = extend_semigroup(sc.op, sc.f, tg, Source::Heat);
  const MaximalResult res = vertical_max(ext);

  const double t_last = tg.knots.back();
  CHECK(res.m[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(res.m[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.m[2] == doctest::Approx(1.0 - 0.5 * std::exp(-2.0 * t_last)).epsilon(1e-12));
  CHECK(res.m[3] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.argmax_knot[0] == 0);
  CHECK(res.argmax_knot[1] == 0);  // ties resolve to the smallest knot
  CHECK(res.argmax_knot[2] == static_cast<int>(tg.knots.size()) - 1);

  const DetachmentSet det = detachment_set(res, 1e-6);
  CHECK(det.count == 1);
  CHECK(det.region.contains(2));
  CHECK(!det.touches_boundary);

  // larger tolerance can only shrink the set
  const DetachmentSet coarse = detachment_set(res, 0.75);
  CHECK(coarse.count == 0);

  // the residual at the detachment node is nonnegative; with a single node
  // the full-stencil interior is empty
  const VariationalKernel k = VariationalKernel::quadratic(sc.op.coeff());
  const SubharmonicityReport sub = subharmonicity_residual(res, k, det);
  CHECK(sub.status == SubharmonicityReport::Status::NoInterior);
  CHECK(sub.set_count == 1);
  CHECK(sub.min_residual_all >= 0.0);
  CHECK(sub.min_residual_all == doctest::Approx(std::exp(-2.0 * t_last)).epsilon(1e-6));

  // contraction numbers from the hand computation
  CHECK(energy(sc.f, k) == doctest::Approx(0.5));
  CHECK(energy(res.m, k) == doctest::Approx(0.25).epsilon(1e-6));

  // the strict variant insists on a full-stencil interior
  CHECK_THROWS_AS(subharmonicity_residual(res, k, det, 1e-6, /*require_interior=*/true),
                  EmptyInterior);
}

TEST_CASE("m dominates f and grows with t_max") {
  Grid g(32, 1.0 / 32, Boundary::Periodic);
  const GridFunction f = generate_data(g, DataGenerator::Fourier, 5);
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::random_spd(g, 10.0, 6));
  const TimeGrid short_tg = TimeGrid::geometric(1e-4, 1.25, 0.5);
  const TimeGrid long_tg = TimeGrid::geometric(1e-4, 1.25, 10.0);
  // geometric grids with equal t_min and ratio nest as prefixes
  for (size_t k = 0; k < short_tg.knots.size(); ++k)
    CHECK(short_tg.knots[k] == long_tg.knots[k]);

  for (Source src : {Source::Heat, Source::Poisson}) {
    const MaximalResult small = vertical_max(extend_semigroup(op, f, short_tg, src));
    const MaximalResult big = vertical_max(extend_semigroup(op, f, long_tg, src));
    for (int i = 0; i < f.size(); ++i) {
      CHECK(small.m[i] >= f[i]);
      CHECK(big.m[i] >= small.m[i] - 1e-13);
    }
  }
}

TEST_CASE("vertical max preserves the order of the data") {
  Grid g(48, 1.0 / 48, Boundary::Periodic);
  const GridFunction f = generate_data(g, DataGenerator::Bumps, 11);
  GridFunction gdat = f;
  const GridFunction extra = generate_data(g, DataGenerator::Bumps, 12);
  for (int i = 0; i < gdat.size(); ++i) gdat[i] += 0.6 * extra[i];
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::random_spd(g, 10.0, 13));
  const TimeGrid tg = TimeGrid::geometric(1e-3, 1.25, 5.0);
  for (Source src : {Source::Heat, Source::Poisson}) {
    const MaximalResult mf = vertical_max(extend_semigroup(op, f, tg, src));
    const MaximalResult mg = vertical_max(extend_semigroup(op, gdat, tg, src));
    for (int i = 0; i < f.size(); ++i) CHECK(mg.m[i] >= mf.m[i] - 1e-11);
  }
  const MaximalResult pf =
      vertical_max(extend_pflow(f, tg, VariationalKernel::ppower(3.0), kConfig));
  const MaximalResult pg =
      vertical_max(extend_pflow(gdat, tg, VariationalKernel::ppower(3.0), kConfig));
  for (int i = 0; i < f.size(); ++i) CHECK(pg.m[i] >= pf.m[i] - 1e-9);
}

TEST_CASE("outside the detachment set the maximal function is the data") {
  Grid g(64, 1.0 / 64, Boundary::DirichletZero);
  const GridFunction f = generate_data(g, DataGenerator::Bumps, 21);
  const Extension ext =
      extend_pflow(f, TimeGrid::geometric(1e-4, 1.25, 2.0), VariationalKernel::ppower(4.0),
                   kConfig);
  const MaximalResult res = vertical_max(ext);
  const DetachmentSet det = detachment_set(res, 1e-12);
  const EdgeField gm = gradient(res.m);
  const EdgeField gf = gradient(f);
  int outside_edges = 0;
  for (int e = 0; e < g.edge_count(0); ++e) {
    const int t = g.edge_tail(0, e), h = g.edge_head(0, e);
    if (t < 0 || h < 0 || det.region.contains(t) || det.region.contains(h)) continue;
    ++outside_edges;
    CHECK(gm.axis_value(0, e) ==
          doctest::Approx(gf.axis_value(0, e)).epsilon(1e-9).scale(1.0));
  }
  CHECK(outside_edges > 0);
}

TEST_CASE("p-flow bump: subharmonicity on the observed detachment set") {
  Grid g(96, 1.0 / 97, Boundary::DirichletZero);
  GridFunction f(g);
  for (int i = 0; i < f.size(); ++i) {
    const double x = (i + 1.0) * g.h();
    const double s = std::max(0.0, 1.0 - std::abs(x - 0.5) / 0.18);
    f[i] = s * s;
  }
  const VariationalKernel k = VariationalKernel::ppower(4.0);
  const Extension ext = extend_pflow(f, TimeGrid::geometric(1e-4, 1.25, 5.0), k, kConfig);
  const MaximalResult res = vertical_max(ext);
  const DetachmentSet det = detachment_set(res, 1e-8);
  REQUIRE(det.count > 0);
  const SubharmonicityReport sub = subharmonicity_residual(res, k, det, 1e-6);
  CHECK(sub.min_residual_all >= -1e-6 * std::max(sub.scale, 1e-14));
  if (sub.interior_count > 0) {
    CHECK(sub.status == SubharmonicityReport::Status::Pass);
    CHECK(sub.min_residual_interior >= -1e-6 * std::max(sub.scale, 1e-14));
  }
}

TEST_CASE("hajlasz bound across the three sources in 1D") {
  Grid g(128, 1.0 / 128, Boundary::Periodic);
  const GridFunction f = generate_data(g, DataGenerator::Bumps, 31);
  const TimeGrid tg = TimeGrid::geometric(1e-3, 1.3, 2.0);
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::random_spd(g, 10.0, 32));
  for (const Extension& ext :
       {extend_pflow(f, tg, VariationalKernel::ppower(3.0), kConfig),
        extend_semigroup(op, f, tg, Source::Heat),
        extend_semigroup(op, f, tg, Source::Poisson)}) {
    const HajlaszReport rep = hajlasz_bound(ext);
    CHECK(rep.pass);
    CHECK(rep.max_ratio <= 1.0 + 1e-6);
    CHECK(rep.pair_count > 0);
  }
}

TEST_CASE("hajlasz bound on the heat cosine example") {
  CosineScenario sc;
  const Extension ext =
      extend_semigroup(sc.op, sc.f, TimeGrid::geometric(1e-3, 1.3, 5.0), Source::Heat);
  const HajlaszReport rep = hajlasz_bound(ext);
  CHECK(rep.pass);
  CHECK(rep.max_ratio <= 1.0);
}

TEST_CASE("2D hajlasz ratios are reported (informative, dimensional constant)") {
  Grid g(12, 12, 1.0 / 12, Boundary::Periodic);
  const GridFunction f = generate_data(g, DataGenerator::Bumps, 41);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  const Extension ext =
      extend_semigroup(op, f, TimeGrid::geometric(1e-3, 1.3, 2.0), Source::Heat);
  const HajlaszReport rep = hajlasz_bound(ext, 1, /*tol=*/1e-6);
  CHECK(rep.max_ratio < 4.0);  // chaining constant; no constant-1 theorem in 2D
}

TEST_CASE("maximal interfaces reject invalid input") {
  Grid g(8, 0.125, Boundary::Periodic);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  const GridFunction f(g, 1.0);
  const TimeGrid tg = TimeGrid::geometric(0.1, 2.0, 0.4);
  CHECK_THROWS_AS(extend_semigroup(op, f, tg, Source::PFlow), std::invalid_argument);
  const Extension ext = extend_semigroup(op, f, tg, Source::Heat);
  CHECK_THROWS_AS(hajlasz_bound(ext, 100), std::invalid_argument);
}

TEST_CASE("maximal csv carries the documented columns") {
  CosineScenario sc;
  const TimeGrid tg = TimeGrid::geometric(0.01, 2.0, 1.0);
  const MaximalResult res = vertical_max(extend_semigroup(sc.op, sc.f, tg, Source::Heat));
  const DetachmentSet det = detachment_set(res, 1e-6);
  std::ostringstream out;
  res.write_csv(out, det);
  const std::string text = out.str();
  CHECK(text.rfind("node_index,f,m,argmax_t,in_detachment\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
  CHECK(text.find(",1\n") != std::string::npos);  // node 2 sits in the set
}
