#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gradflow/energy.hpp"
#include "gradflow/errors.hpp"
#include "gradflow/rng.hpp"

using namespace gradflow;

namespace {

GridFunction random_function(const Grid& g, std::uint64_t seed) {
  Rng rng(seed);
  GridFunction f(g);
  for (int i = 0; i < f.size(); ++i) f[i] = rng.uniform(-1.0, 1.0);
  return f;
}

}  // namespace

TEST_CASE("pointwise kernel values and gradients") {
  const VariationalKernel p4 = VariationalKernel::ppower(4.0);
  CHECK(kernel_value(p4, 0, {1.0, 0.0}, 1) == doctest::Approx(0.25));
  CHECK(kernel_gradient(p4, 0, {1.0, 0.0}, 1)[0] == doctest::Approx(1.0));
  CHECK(kernel_gradient(p4, 0, {0.0, 0.0}, 1)[0] == 0.0);
  CHECK(kernel_gradient(p4, 0, {0.0, 0.0}, 2)[1] == 0.0);

  Grid g(2, 2, 1.0, Boundary::Periodic);
  const VariationalKernel q2 =
      VariationalKernel::quadratic(CoefficientField::scalar(g, 2.0, 2.0));
  const Vec2 grad = kernel_gradient(q2, 0, {1.0, 0.0}, 2);
  CHECK(grad[0] == doctest::Approx(2.0));
  CHECK(grad[1] == doctest::Approx(0.0));
  CHECK(kernel_value(q2, 0, {1.0, 0.0}, 2) == doctest::Approx(1.0));
}

TEST_CASE("convexity and monotonicity gaps") {
  const VariationalKernel p4 = VariationalKernel::ppower(4.0);
  CHECK(convexity_gap(p4, 0, {1.0, 0.0}, {1.0, 0.0}, 1) == 0.0);
  CHECK(monotonicity_gap(p4, 0, {1.0, 0.0}, {1.0, 0.0}, 1) == 0.0);
  CHECK(convexity_gap(p4, 0, {1.0, 0.0}, {0.0, 0.0}, 1) == doctest::Approx(0.25));

  Grid g(3, 3, 1.0, Boundary::Periodic);
  const VariationalKernel quad =
      VariationalKernel::quadratic(CoefficientField::random_spd(g, 4.0, 99));
  Rng rng(123);
  for (int trial = 0; trial < 10000; ++trial) {
    const Vec2 xi1{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    const Vec2 xi2{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    const int cell = rng.uniform_int(9);
    const VariationalKernel& k = trial % 2 == 0 ? p4 : quad;
    CHECK(convexity_gap(k, cell, xi1, xi2, 2) >= -1e-14);
    CHECK(monotonicity_gap(k, cell, xi1, xi2, 2) >= -1e-14);
    if (std::abs(xi1[0] - xi2[0]) + std::abs(xi1[1] - xi2[1]) > 1e-6)
      CHECK(convexity_gap(k, cell, xi1, xi2, 2) > 0.0);
  }
}

TEST_CASE("localized p-energy on the 3-node example") {
  Grid g(3, 1.0, Boundary::Periodic);
  GridFunction u(g, {0.0, 1.0, 0.0});
  const VariationalKernel p4 = VariationalKernel::ppower(4.0);
  CHECK(energy(u, p4) == doctest::Approx(0.5));
  CHECK(energy(u, p4, RegionMask::full(g)) == doctest::Approx(0.5));
}

TEST_CASE("constant functions carry zero energy") {
  for (Boundary b : {Boundary::Periodic, Boundary::DirichletZero}) {
    Grid g(4, 4, 0.5, b);
    GridFunction u(g, b == Boundary::Periodic ? 2.0 : 0.0);
    CHECK(energy(u, VariationalKernel::ppower(3.0)) == doctest::Approx(0.0));
    CHECK(energy(u, VariationalKernel::quadratic(CoefficientField::identity(g))) ==
          doctest::Approx(0.0));
  }
}

TEST_CASE("quadratic identity energy equals half the gradient norm") {
  for (int dim : {1, 2}) {
    for (Boundary b : {Boundary::Periodic, Boundary::DirichletZero}) {
      Grid g = dim == 1 ? Grid(9, 0.3, b) : Grid(6, 5, 0.3, b);
      GridFunction u = random_function(g, 17);
      const double e = energy(u, VariationalKernel::quadratic(CoefficientField::identity(g)));
      CHECK(e == doctest::Approx(0.5 * l2_norm_sq(gradient(u))).epsilon(1e-12));
    }
  }
}

TEST_CASE("p-homogeneity of the energy") {
  Grid g(8, 7, 0.25, Boundary::Periodic);
  GridFunction u = random_function(g, 3);
  Rng rng(4);
  for (double p : {2.5, 3.0, 4.0}) {
    const VariationalKernel k = VariationalKernel::ppower(p);
    const double base = energy(u, k);
    const double lam = rng.uniform(0.3, 2.0);
    GridFunction v = u;
    for (int i = 0; i < v.size(); ++i) v[i] *= lam;
    CHECK(energy(v, k) == doctest::Approx(std::pow(std::abs(lam), p) * base).epsilon(1e-12));
  }
}

TEST_CASE("ppower energy equals the p-th gradient norm exactly") {
  Grid g(7, 6, 0.4, Boundary::DirichletZero);
  GridFunction u = random_function(g, 5);
  for (double p : {2.5, 3.0, 4.0}) {
    CHECK(p * energy(u, VariationalKernel::ppower(p)) ==
          doctest::Approx(lp_pow(gradient(u), p)).epsilon(1e-13));
  }
}

TEST_CASE("quadratic energy obeys the ellipticity window") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const double lambda = rng.uniform(1.5, 10.0);
    Grid g(6, 6, 0.3, trial % 2 == 0 ? Boundary::Periodic : Boundary::DirichletZero);
    const CoefficientField a = CoefficientField::random_spd(g, lambda, 1000 + trial);
    const VariationalKernel k = VariationalKernel::quadratic(a);
    GridFunction u = random_function(g, 2000 + trial);
    const double two_e = 2.0 * energy(u, k);
    const double grad_sq = l2_norm_sq(gradient(u));
    CHECK(two_e >= grad_sq / lambda * (1.0 - 1e-12));
    CHECK(two_e <= grad_sq * lambda * (1.0 + 1e-12));
  }
}

TEST_CASE("energy is additive over disjoint region masks") {
  Grid g(6, 5, 0.5, Boundary::Periodic);
  GridFunction u = random_function(g, 8);
  RegionMask left(g), right(g);
  for (int i = 0; i < g.node_count(); ++i) (g.node_x(i) < 3 ? left : right).set(i);
  for (const VariationalKernel& k :
       {VariationalKernel::ppower(3.0),
        VariationalKernel::quadratic(CoefficientField::random_spd(g, 5.0, 77))}) {
    const double whole = energy(u, k, RegionMask::full(g));
    CHECK(energy(u, k, left) + energy(u, k, right) == doctest::Approx(whole).epsilon(1e-13));
    CHECK(whole == doctest::Approx(energy(u, k)).epsilon(1e-13));
  }
}

TEST_CASE("subsolution residual: 3-node hand computation") {
  Grid g(3, 1.0, Boundary::Periodic);
  GridFunction u(g, {0.0, 1.0, 0.0});
  GridFunction r = subsolution_residual(u, VariationalKernel::ppower(4.0));
  CHECK(r[0] == doctest::Approx(1.0));
  CHECK(r[1] == doctest::Approx(-2.0));
  CHECK(r[2] == doctest::Approx(1.0));
}

TEST_CASE("affine data has zero residual away from the wrap and ghosts") {
  Grid g(9, 0.5, Boundary::DirichletZero);
  GridFunction u(g);
  for (int i = 0; i < u.size(); ++i) u[i] = 0.3 + 0.2 * i * g.h();
  GridFunction r = subsolution_residual(u, VariationalKernel::ppower(3.0));
  for (int i = 1; i < 8; ++i) CHECK(r[i] == doctest::Approx(0.0).epsilon(1e-13));
}

TEST_CASE("quadratic identity residual is the five-point laplacian") {
  Grid g(6, 6, 0.5, Boundary::Periodic);
  GridFunction u = random_function(g, 9);
  const GridFunction r =
      subsolution_residual(u, VariationalKernel::quadratic(CoefficientField::identity(g)));
  const double h2 = g.h() * g.h();
  for (int i = 0; i < u.size(); ++i) {
    const int x = g.node_x(i), y = g.node_y(i);
    const double lap = (u[g.node_index((x + 1) % 6, y)] + u[g.node_index((x + 5) % 6, y)] +
                        u[g.node_index(x, (y + 1) % 6)] + u[g.node_index(x, (y + 5) % 6)] -
                        4.0 * u[i]) /
                       h2;
    CHECK(r[i] == doctest::Approx(lap).epsilon(1e-12));
  }
}

TEST_CASE("ppower residual for p=2 matches the quadratic identity residual") {
  Grid g(5, 5, 0.5, Boundary::Periodic);
  GridFunction u = random_function(g, 10);
  const GridFunction r2 = subsolution_residual(u, VariationalKernel::ppower(2.0));
  const GridFunction rq =
      subsolution_residual(u, VariationalKernel::quadratic(CoefficientField::identity(g)));
  for (int i = 0; i < u.size(); ++i) CHECK(r2[i] == doctest::Approx(rq[i]).epsilon(1e-12));
}

TEST_CASE("residual is minus the discrete energy gradient") {
  // <residual(u), v>_{h^n} = -dF(u)[v], checked by central differences
  for (int dim : {1, 2}) {
    Grid g = dim == 1 ? Grid(11, 0.3, Boundary::DirichletZero)
                      : Grid(5, 6, 0.3, Boundary::DirichletZero);
    GridFunction u = random_function(g, 20);
    GridFunction v = random_function(g, 21);
    for (const VariationalKernel& k :
         {VariationalKernel::ppower(3.0),
          VariationalKernel::quadratic(CoefficientField::random_spd(g, 3.0, 5))}) {
      const GridFunction r = subsolution_residual(u, k);
      const double eps = 1e-6;
      GridFunction up = u, um = u;
      for (int i = 0; i < u.size(); ++i) {
        up[i] += eps * v[i];
        um[i] -= eps * v[i];
      }
      const double directional = (energy(up, k) - energy(um, k)) / (2.0 * eps);
      CHECK(inner(r, v) == doctest::Approx(-directional).epsilon(1e-5));
    }
  }
}

TEST_CASE("coefficient field round-trips through the text format") {
  for (int dim : {1, 2}) {
    Grid g = dim == 1 ? Grid(6, 0.5, Boundary::Periodic)
                      : Grid(4, 3, 0.5, Boundary::DirichletZero);
    const CoefficientField a = CoefficientField::random_spd(g, 7.0, 42);
    std::stringstream buf;
    a.save(buf);
    const CoefficientField b = CoefficientField::load(buf, g, 7.0);
    for (int c = 0; c < a.cell_count(); ++c) {
      CHECK(a.a11(c) == b.a11(c));
      if (dim == 2) {
        CHECK(a.a12(c) == b.a12(c));
        CHECK(a.a22(c) == b.a22(c));
      }
    }
  }
}

TEST_CASE("ellipticity violations are rejected") {
  Grid g(4, 4, 1.0, Boundary::Periodic);
  std::stringstream buf;
  for (int c = 0; c < 16; ++c) buf << "1 0.999 1\n";  // eigenvalues 0.001 and 1.999
  CHECK_THROWS_AS(CoefficientField::load(buf, g, 2.0), EllipticityViolation);

  std::stringstream short_file;
  short_file << "1 0 1\n";
  CHECK_THROWS_AS(CoefficientField::load(short_file, g, 2.0), ParseError);
}

TEST_CASE("random spd fields stay inside the window and monotone class") {
  Grid g(8, 8, 0.25, Boundary::Periodic);
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const CoefficientField a = CoefficientField::random_spd(g, 10.0, seed);
    a.validate();
    for (int c = 0; c < a.cell_count(); ++c)
      CHECK(std::abs(a.a12(c)) <= 0.95 * std::min(a.a11(c), a.a22(c)) + 1e-15);
  }
}
