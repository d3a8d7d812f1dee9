#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gradflow/errors.hpp"
#include "gradflow/rng.hpp"
#include "gradflow/semigroup.hpp"
#include "gradflow/verify.hpp"

using namespace gradflow;

namespace {

GridFunction random_function(const Grid& g, std::uint64_t seed, double lo = -1.0,
                             double hi = 1.0) {
  Rng rng(seed);
  GridFunction f(g);
  for (int i = 0; i < f.size(); ++i) f[i] = rng.uniform(lo, hi);
  return f;
}

double rel_l2_diff(const GridFunction& a, const GridFunction& b) {
  GridFunction d = a;
  for (int i = 0; i < d.size(); ++i) d[i] -= b[i];
  return l2_norm(d) / std::max(l2_norm(b), 1e-300);
}

}  // namespace

TEST_CASE("circulant spectrum of the periodic identity operator") {
  Grid g(4, 1.0, Boundary::Periodic);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  const SpectralDecomposition& dec = op.spectral();
  REQUIRE(dec.n == 4);
  CHECK(dec.eigenvalues[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(dec.eigenvalues[1] == doctest::Approx(2.0));
  CHECK(dec.eigenvalues[2] == doctest::Approx(2.0));
  CHECK(dec.eigenvalues[3] == doctest::Approx(4.0));
}

TEST_CASE("constants lie in the kernel on periodic grids") {
  Grid g(6, 5, 0.5, Boundary::Periodic);
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::random_spd(g, 8.0, 4));
  const GridFunction lu = op.apply_minus_l(GridFunction(g, 3.0));
  CHECK(max_abs(lu) < 1e-12);
}

TEST_CASE("operator action matches divergence of the identity flux") {
  Grid g(7, 6, 0.3, Boundary::DirichletZero);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  const GridFunction u = random_function(g, 11);
  const GridFunction lhs = op.apply_l(u);
  const GridFunction rhs = divergence(gradient(u));
  for (int i = 0; i < u.size(); ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-11));
}

TEST_CASE("quadratic form stays in the ellipticity window") {
  Rng rng(5);
  for (int trial = 0; trial < 8; ++trial) {
    Grid g(8, 8, 0.2, trial % 2 == 0 ? Boundary::Periodic : Boundary::DirichletZero);
    const double lambda = rng.uniform(2.0, 10.0);
    const EllipticOperator op =
        EllipticOperator::assemble(g, CoefficientField::random_spd(g, lambda, 100 + trial));
    const GridFunction u = random_function(g, 200 + trial);
    const double form = inner(op.apply_minus_l(u), u);
    const double grad_sq = l2_norm_sq(gradient(u));
    CHECK(form >= grad_sq / lambda * (1.0 - 1e-11));
    CHECK(form <= grad_sq * lambda * (1.0 + 1e-11));
  }
}

TEST_CASE("assembly rejects fields outside the declared window") {
  Grid g(4, 4, 1.0, Boundary::Periodic);
  CoefficientField bad = CoefficientField::scalar(g, 5.0, 2.0);  // 5 > lambda
  CHECK_THROWS_AS(EllipticOperator::assemble(g, bad), EllipticityViolation);
}

TEST_CASE("spectral invariants: residual and orthonormality") {
  Grid g(6, 5, 0.4, Boundary::DirichletZero);
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::random_spd(g, 6.0, 8));
  const SpectralDecomposition& dec = op.spectral();
  CHECK(dec.max_eigen_residual(op) <= 1e-10);
  CHECK(dec.max_orthonormality_defect() <= 1e-10);
}

TEST_CASE("spectral cap is enforced") {
  Grid g(16, 1.0 / 16, Boundary::Periodic);
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::identity(g), /*spectral_cap=*/8);
  CHECK(!op.spectral_available());
  CHECK_THROWS_AS(op.spectral(), SpectralCapExceeded);
}

TEST_CASE("heat semigroup: identity at t = 0 and eigenvector decay") {
  Grid g(4, 1.0, Boundary::Periodic);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  GridFunction f(g, {1.0, -1.0, 1.0, -1.0});
  const GridFunction f0 = heat_apply(op, f, 0.0);
  for (int i = 0; i < 4; ++i) CHECK(f0[i] == f[i]);
  const GridFunction ht = heat_apply(op, f, 0.25);
  for (int i = 0; i < 4; ++i)
    CHECK(ht[i] == doctest::Approx(std::exp(-1.0) * f[i]).epsilon(1e-12));
}

TEST_CASE("heat semigroup conserves mass on periodic grids") {
  Grid g(8, 6, 0.25, Boundary::Periodic);
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::random_spd(g, 5.0, 21));
  const GridFunction f = random_function(g, 22, 0.0, 1.0);
  double m0 = 0.0, m1 = 0.0;
  const GridFunction ht = heat_apply(op, f, 0.7);
  for (int i = 0; i < f.size(); ++i) {
    m0 += f[i];
    m1 += ht[i];
  }
  CHECK(m1 == doctest::Approx(m0).epsilon(1e-11));
}

TEST_CASE("semigroup law and l2 contraction") {
  Grid g(12, 12, 0.2, Boundary::Periodic);
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::checkerboard(g, 10.0));
  const GridFunction f = random_function(g, 30, 0.0, 1.0);
  for (double s : {0.01, 0.3}) {
    for (double t : {0.05, 1.0}) {
      const GridFunction two = heat_apply(op, heat_apply(op, f, s), t);
      const GridFunction one = heat_apply(op, f, s + t);
      CHECK(rel_l2_diff(two, one) <= 1e-9);
      const GridFunction ptwo = poisson_apply(op, poisson_apply(op, f, s), t);
      const GridFunction pone = poisson_apply(op, f, s + t);
      CHECK(rel_l2_diff(ptwo, pone) <= 1e-9);
      CHECK(l2_norm(one) <= l2_norm(f) * (1.0 + 1e-12));
      CHECK(l2_norm(pone) <= l2_norm(f) * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("crank-nicolson path agrees with the spectral oracle") {
  Grid g(48, 1.0 / 48, Boundary::DirichletZero);
  const CoefficientField a = CoefficientField::random_spd(g, 4.0, 17);
  const EllipticOperator spectral_op = EllipticOperator::assemble(g, a);
  const EllipticOperator cn_op = EllipticOperator::assemble(g, a, /*spectral_cap=*/4);
  const GridFunction f = random_function(g, 18, 0.0, 1.0);
  for (double t : {0.01, 0.2, 1.0}) {
    const GridFunction exact = heat_apply(spectral_op, f, t);
    GridFunction d = heat_apply(cn_op, f, t);
    for (int i = 0; i < d.size(); ++i) d[i] -= exact[i];
    CHECK(l2_norm(d) / l2_norm(f) <= 1e-8);  // the CN error budget is data-relative
  }
}

TEST_CASE("poisson semigroup: eigenvector decay and t = 0") {
  Grid g(4, 1.0, Boundary::Periodic);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  GridFunction f(g, {1.0, -1.0, 1.0, -1.0});  // eigenvalue 4
  const GridFunction p0 = poisson_apply(op, f, 0.0);
  for (int i = 0; i < 4; ++i) CHECK(p0[i] == f[i]);
  for (PoissonMethod m : {PoissonMethod::Spectral, PoissonMethod::Subordination}) {
    const GridFunction pt = poisson_apply(op, f, 0.5, m);
    for (int i = 0; i < 4; ++i)
      CHECK(pt[i] == doctest::Approx(std::exp(-1.0) * f[i]).epsilon(1e-9));
  }
}

TEST_CASE("subordination rule: mass and scalar accuracy") {
  const SubordinationQuadrature& q = SubordinationQuadrature::standard();
  CHECK(q.raw_mass_defect <= 1e-8);
  double mass = 0.0;
  for (double w : q.weights) {
    CHECK(w >= 0.0);
    mass += w;
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-15));
  // per-eigenvalue collapse against e^{-t sqrt(lambda)}
  for (double t : {0.01, 0.1, 1.0, 10.0}) {
    for (double lambda : {0.0, 0.5, 4.0, 123.0, 2.6e4}) {
      double approx = 0.0;
      for (int i = 0; i < q.size(); ++i) {
        const double s = q.heat_time(i, t) * lambda;
        approx += q.weights[static_cast<size_t>(i)] * (s > 700.0 ? 0.0 : std::exp(-s));
      }
      CHECK(approx == doctest::Approx(std::exp(-t * std::sqrt(lambda))).epsilon(2e-9));
    }
  }
}

TEST_CASE("subordination agrees with the spectral square root on fields") {
  Rng rng(40);
  for (int trial = 0; trial < 3; ++trial) {
    Grid g(64, 1.0 / 64, Boundary::Periodic);
    const EllipticOperator op =
        EllipticOperator::assemble(g, CoefficientField::random_spd(g, 10.0, 400 + trial));
    const GridFunction f = random_function(g, 500 + trial, 0.0, 1.0);
    for (double t : {0.01, 0.1, 1.0, 10.0}) {
      const GridFunction a = poisson_apply(op, f, t, PoissonMethod::Spectral);
      const GridFunction b = poisson_apply(op, f, t, PoissonMethod::Subordination);
      CHECK(rel_l2_diff(b, a) <= 1e-8);
    }
  }
}

TEST_CASE("degenerate subordination times project onto the kernel") {
  Grid g(8, 0.125, Boundary::Periodic);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  const GridFunction f = random_function(g, 60, 0.0, 1.0);
  const GridFunction proj = poisson_apply(op, f, 1e200, PoissonMethod::Subordination);
  double mean = 0.0;
  for (int i = 0; i < f.size(); ++i) mean += f[i];
  mean /= f.size();
  for (int i = 0; i < f.size(); ++i) CHECK(proj[i] == doctest::Approx(mean).epsilon(1e-9));
}

TEST_CASE("kernel columns: mass, symmetry, positivity") {
  Grid g(32, 1.0 / 32, Boundary::Periodic);
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::random_spd(g, 10.0, 70));
  Rng rng(71);
  for (double t : {0.003, 0.05, 0.5}) {
    for (int trial = 0; trial < 4; ++trial) {
      const int x = rng.uniform_int(32), y = rng.uniform_int(32);
      const GridFunction cx = heat_kernel_column(op, x, t);
      const GridFunction cy = heat_kernel_column(op, y, t);
      CHECK(cx[y] == doctest::Approx(cy[x]).epsilon(1e-10));
      CHECK(min_value(cx) >= -1e-12);
      double mass = 0.0;
      for (int i = 0; i < cx.size(); ++i) mass += cx[i];
      CHECK(mass * g.cell_volume() == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  CHECK_THROWS_AS(heat_kernel_column(op, 0, 0.0), std::invalid_argument);
}

TEST_CASE("kernel columns flatten to the uniform state for large t") {
  Grid g(16, 1.0 / 16, Boundary::Periodic);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  const GridFunction col = heat_kernel_column(op, 3, 50.0);
  for (int i = 0; i < col.size(); ++i) CHECK(col[i] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("gaussian certificate holds across a random elliptic ensemble") {
  Grid g(48, 1.0 / 48, Boundary::Periodic);
  const double h2 = g.h() * g.h();
  const std::vector<double> times = {h2, 0.01, 0.1, 1.0};
  const GaussianCalibration cal = calibrate_gaussian_bound(g, times);
  CHECK(cal.C >= 1.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const EllipticOperator op =
        EllipticOperator::assemble(g, CoefficientField::random_spd(g, 10.0, 900 + seed));
    const KernelCertificateReport rep = check_kernel_certificate(op, cal, times, {});
    CHECK(rep.pass);
    CHECK(rep.max_bound_ratio <= 1.0);
    CHECK(rep.worst_min_value >= -1e-12);
    CHECK(rep.worst_mass_error <= 1e-10);
  }
}

TEST_CASE("certificate csv carries the calibrated constants") {
  Grid g(16, 1.0 / 16, Boundary::Periodic);
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  const GaussianCalibration cal = calibrate_gaussian_bound(g, {0.01, 0.1});
  const KernelCertificateReport rep = check_kernel_certificate(op, cal, {0.01, 0.1}, {0, 5});
  std::ostringstream out;
  rep.write_csv(out);
  CHECK(out.str().rfind("t,y_index,min_value,mass,calibrated_C,calibrated_c,max_bound_ratio\n",
                        0) == 0);
  CHECK(rep.rows.size() == 4);
}

TEST_CASE("scalar extremum 1/(2e) by grid search") {
  // ternary search on z e^{-2z}
  double lo = 0.0, hi = 2.0;
  for (int it = 0; it < 300; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (m1 * std::exp(-2.0 * m1) < m2 * std::exp(-2.0 * m2))
      lo = m1;
    else
      hi = m2;
  }
  const double z = 0.5 * (lo + hi);
  CHECK(std::abs(z * std::exp(-2.0 * z) - 1.0 / (2.0 * std::exp(1.0))) <= 1e-12);
  CHECK(z == doctest::Approx(0.5).epsilon(1e-6));

  // the poisson-side extremum sup t^2 lambda e^{-2t sqrt(lambda)} = 1/e^2,
  // comfortably inside the 4/e^2 constant the bound uses
  double worst = 0.0;
  for (double s = 0.0; s < 6.0; s += 1e-4) worst = std::max(worst, s * s * std::exp(-2.0 * s));
  CHECK(worst == doctest::Approx(std::exp(-2.0)).epsilon(1e-6));
  CHECK(worst <= 4.0 * std::exp(-2.0));
}

TEST_CASE("operator bounds hold across kernels and times") {
  Rng rng(80);
  Grid g(10, 10, 0.15, Boundary::Periodic);
  for (int trial = 0; trial < 4; ++trial) {
    const EllipticOperator op =
        EllipticOperator::assemble(g, CoefficientField::random_spd(g, 8.0, 800 + trial));
    const GridFunction f = random_function(g, 850 + trial);
    for (double t : {1e-3, 0.1, 1.0, 10.0}) {
      const OperatorBoundReport rep = operator_bound_check(op, f, t);
      CHECK(rep.pass);
      CHECK(rep.heat_lhs <= rep.heat_rhs * (1.0 + 1e-12));
      CHECK(rep.poisson_lhs <= rep.poisson_rhs * (1.0 + 1e-12));
    }
  }
  // constants produce vanishing left sides on periodic grids
  const EllipticOperator op = EllipticOperator::assemble(g, CoefficientField::identity(g));
  const OperatorBoundReport rep = operator_bound_check(op, GridFunction(g, 2.0), 0.5);
  CHECK(rep.heat_lhs <= 1e-20);
  CHECK(rep.poisson_lhs <= 1e-20);
}

TEST_CASE("semigroup energies dissipate along the knots") {
  Grid g(9, 9, 0.2, Boundary::DirichletZero);
  const EllipticOperator op =
      EllipticOperator::assemble(g, CoefficientField::checkerboard(g, 10.0));
  const GridFunction f = random_function(g, 90, 0.0, 1.0);
  const DissipationReport rep =
      dissipation_check(op, f, TimeGrid::geometric(1e-4, 1.3, 10.0));
  CHECK(rep.pass);
  CHECK(rep.worst_increase <= 1e-10);

  // single eigenvector: F(H_t f) = e^{-2 lambda t} F(f)
  Grid g4(4, 1.0, Boundary::Periodic);
  const EllipticOperator op4 = EllipticOperator::assemble(g4, CoefficientField::identity(g4));
  GridFunction ev(g4, {1.0, -1.0, 1.0, -1.0});
  const VariationalKernel k = VariationalKernel::quadratic(op4.coeff());
  const double e0 = energy(ev, k);
  const double t = 0.3;
  CHECK(energy(heat_apply(op4, ev, t), k) ==
        doctest::Approx(std::exp(-2.0 * 4.0 * t) * e0).epsilon(1e-12));
}

TEST_CASE("hardy-littlewood domination of both semigroups") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Grid g(32, 1.0 / 32, Boundary::Periodic);
    const EllipticOperator op =
        EllipticOperator::assemble(g, CoefficientField::random_spd(g, 10.0, 301 + seed));
    const GridFunction f = generate_data(g, DataGenerator::Bumps, 400 + seed);
    const GridFunction mf = hardy_littlewood_max(f);
    for (double t : {1e-3, 0.05, 0.5, 5.0}) {
      for (const GridFunction& u : {heat_apply(op, f, t), poisson_apply(op, f, t)}) {
        for (int i = 0; i < u.size(); ++i)
          if (mf[i] > 1e-12) worst = std::max(worst, std::abs(u[i]) / mf[i]);
      }
    }
  }
  CHECK(worst <= 50.0);
}
