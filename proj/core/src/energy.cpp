#include "gradflow/energy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "gradflow/errors.hpp"
#include "gradflow/rng.hpp"

namespace gradflow {

namespace {

int cells_per_axis(const Grid& g, int axis) {
  return g.periodic() ? g.shape()[axis] : g.shape()[axis] + 1;
}

// Site of a cell corner; -1 for ghosts (DirichletZero only).
// Corner offsets (dx, dy) are in {0, 1}: the cell spans sites
// [cx-1, cx] x [cy-1, cy] on DirichletZero and [cx, cx+1] wrapped on Periodic.
int cell_site(const Grid& g, int cx, int cy, int dx, int dy) {
  if (g.periodic()) {
    const int ix = (cx + dx) % g.shape()[0];
    const int iy = g.dim() == 2 ? (cy + dy) % g.shape()[1] : 0;
    return g.node_index(ix, iy);
  }
  const int ix = cx - 1 + dx;
  const int iy = g.dim() == 2 ? cy - 1 + dy : 0;
  if (ix < 0 || ix >= g.shape()[0]) return -1;
  if (g.dim() == 2 && (iy < 0 || iy >= g.shape()[1])) return -1;
  return g.node_index(ix, iy);
}

int attach_node(int i, int j) {
  if (i < 0) return j;
  if (j < 0) return i;
  return std::min(i, j);
}

void eig2x2(double a11, double a12, double a22, double* lo, double* hi) {
  const double mid = 0.5 * (a11 + a22);
  const double rad = std::hypot(0.5 * (a11 - a22), a12);
  *lo = mid - rad;
  *hi = mid + rad;
}

}  // namespace

CoefficientField::CoefficientField(const Grid& grid, double lambda)
    : grid_(grid), lambda_(lambda) {
  if (!(lambda >= 1.0)) throw std::invalid_argument("ellipticity constant must be >= 1");
  const size_t n = static_cast<size_t>(cell_count());
  a11_.assign(n, 0.0);
  if (grid.dim() == 2) {
    a12_.assign(n, 0.0);
    a22_.assign(n, 0.0);
  }
}

int CoefficientField::cell_count() const {
  int c = cells_per_axis(grid_, 0);
  if (grid_.dim() == 2) c *= cells_per_axis(grid_, 1);
  return c;
}

CoefficientField CoefficientField::identity(const Grid& grid) {
  return scalar(grid, 1.0, 1.0);
}

CoefficientField CoefficientField::scalar(const Grid& grid, double value, double lambda) {
  CoefficientField f(grid, lambda);
  std::fill(f.a11_.begin(), f.a11_.end(), value);
  if (grid.dim() == 2) std::fill(f.a22_.begin(), f.a22_.end(), value);
  return f;
}

CoefficientField CoefficientField::checkerboard(const Grid& grid, double lambda) {
  CoefficientField f(grid, lambda);
  const int cx_n = cells_per_axis(grid, 0);
  for (int c = 0; c < f.cell_count(); ++c) {
    const int cx = c % cx_n, cy = c / cx_n;
    const double v = ((cx + cy) % 2 == 0) ? lambda : 1.0 / lambda;
    f.a11_[static_cast<size_t>(c)] = v;
    if (grid.dim() == 2) f.a22_[static_cast<size_t>(c)] = v;
  }
  return f;
}

CoefficientField CoefficientField::random_spd(const Grid& grid, double lambda,
                                              std::uint64_t seed) {
  CoefficientField f(grid, lambda);
  Rng rng(mix_seed(seed, 0x5bd1));
  for (int c = 0; c < f.cell_count(); ++c) {
    if (grid.dim() == 1) {
      f.a11_[static_cast<size_t>(c)] = rng.log_uniform(1.0 / lambda, lambda);
      continue;
    }
    const double l1 = rng.log_uniform(1.0 / lambda, lambda);
    const double l2 = rng.log_uniform(1.0 / lambda, lambda);
    const double th = rng.uniform(0.0, 2.0 * M_PI);
    const double cs = std::cos(th), sn = std::sin(th);
    double a11 = cs * cs * l1 + sn * sn * l2;
    double a22 = sn * sn * l1 + cs * cs * l2;
    double a12 = cs * sn * (l1 - l2);
    const double cap = 0.95 * std::min(a11, a22);
    a12 = std::clamp(a12, -cap, cap);
    f.a11_[static_cast<size_t>(c)] = a11;
    f.a12_[static_cast<size_t>(c)] = a12;
    f.a22_[static_cast<size_t>(c)] = a22;
  }
  return f;
}

CoefficientField CoefficientField::load(std::istream& in, const Grid& grid, double lambda) {
  CoefficientField f(grid, lambda);
  std::string line;
  int c = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (c >= f.cell_count()) throw ParseError("coefficient file has too many rows");
    std::istringstream row(line);
    if (grid.dim() == 1) {
      if (!(row >> f.a11_[static_cast<size_t>(c)]))
        throw ParseError("coefficient row " + std::to_string(c) + " is malformed");
    } else {
      if (!(row >> f.a11_[static_cast<size_t>(c)] >> f.a12_[static_cast<size_t>(c)] >>
            f.a22_[static_cast<size_t>(c)]))
        throw ParseError("coefficient row " + std::to_string(c) + " is malformed");
    }
    ++c;
  }
  if (c != f.cell_count())
    throw ParseError("coefficient file has " + std::to_string(c) + " rows, expected " +
                     std::to_string(f.cell_count()));
  f.validate();
  return f;
}

void CoefficientField::save(std::ostream& out) const {
  char buf[96];
  for (int c = 0; c < cell_count(); ++c) {
    if (grid_.dim() == 1) {
      std::snprintf(buf, sizeof buf, "%.17g\n", a11(c));
    } else {
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", a11(c), a12(c), a22(c));
    }
    out << buf;
  }
}

void CoefficientField::validate() const {
  const double slack = 1e-9 * lambda_;
  for (int c = 0; c < cell_count(); ++c) {
    double lo, hi;
    if (grid_.dim() == 1) {
      lo = hi = a11(c);
    } else {
      eig2x2(a11(c), a12(c), a22(c), &lo, &hi);
    }
    if (lo < 1.0 / lambda_ - slack || hi > lambda_ + slack)
      throw EllipticityViolation("cell " + std::to_string(c) + " spectrum [" +
                                 std::to_string(lo) + ", " + std::to_string(hi) +
                                 "] outside the declared window");
  }
}

VariationalKernel VariationalKernel::ppower(double p) {
  if (!(p >= 2.0)) throw std::invalid_argument("PPower requires p >= 2");
  VariationalKernel k;
  k.kind_ = Kind::PPower;
  k.p_ = p;
  return k;
}

VariationalKernel VariationalKernel::quadratic(CoefficientField coeff) {
  VariationalKernel k;
  k.kind_ = Kind::Quadratic;
  k.p_ = 2.0;
  k.coeff_ = std::make_shared<CoefficientField>(std::move(coeff));
  return k;
}

double VariationalKernel::growth_lambda() const {
  return kind_ == Kind::PPower ? 1.0 : coeff_->lambda();
}

double kernel_value(const VariationalKernel& k, int cell, const Vec2& xi, int dim) {
  if (k.kind() == VariationalKernel::Kind::PPower) {
    const double n2 = xi[0] * xi[0] + (dim == 2 ? xi[1] * xi[1] : 0.0);
    return std::pow(n2, 0.5 * k.p()) / k.p();
  }
  const auto& a = k.coeff();
  if (dim == 1) return 0.5 * a.a11(cell) * xi[0] * xi[0];
  return 0.5 * (a.a11(cell) * xi[0] * xi[0] + 2.0 * a.a12(cell) * xi[0] * xi[1] +
                a.a22(cell) * xi[1] * xi[1]);
}

Vec2 kernel_gradient(const VariationalKernel& k, int cell, const Vec2& xi, int dim) {
  if (k.kind() == VariationalKernel::Kind::PPower) {
    const double n2 = xi[0] * xi[0] + (dim == 2 ? xi[1] * xi[1] : 0.0);
    if (n2 == 0.0) return {0.0, 0.0};  // continuous extension at xi = 0
    const double s = std::pow(n2, 0.5 * (k.p() - 2.0));
    return {s * xi[0], dim == 2 ? s * xi[1] : 0.0};
  }
  const auto& a = k.coeff();
  if (dim == 1) return {a.a11(cell) * xi[0], 0.0};
  return {a.a11(cell) * xi[0] + a.a12(cell) * xi[1],
          a.a12(cell) * xi[0] + a.a22(cell) * xi[1]};
}

double convexity_gap(const VariationalKernel& k, int cell, const Vec2& xi1, const Vec2& xi2,
                     int dim) {
  const Vec2 a2 = kernel_gradient(k, cell, xi2, dim);
  double dot = a2[0] * (xi1[0] - xi2[0]);
  if (dim == 2) dot += a2[1] * (xi1[1] - xi2[1]);
  return kernel_value(k, cell, xi1, dim) - kernel_value(k, cell, xi2, dim) - dot;
}

double monotonicity_gap(const VariationalKernel& k, int cell, const Vec2& xi1, const Vec2& xi2,
                        int dim) {
  const Vec2 a1 = kernel_gradient(k, cell, xi1, dim);
  const Vec2 a2 = kernel_gradient(k, cell, xi2, dim);
  double dot = (a1[0] - a2[0]) * (xi1[0] - xi2[0]);
  if (dim == 2) dot += (a1[1] - a2[1]) * (xi1[1] - xi2[1]);
  return dot;
}

std::vector<DifferencePair> quadratic_pairs(const CoefficientField& coeff) {
  const Grid& g = coeff.grid();
  std::vector<DifferencePair> pairs;
  const double hpow = std::pow(g.h(), g.dim() - 2);  // h^(n-2)

  if (g.dim() == 1) {
    const int nc = coeff.cell_count();
    pairs.reserve(static_cast<size_t>(nc));
    for (int c = 0; c < nc; ++c) {
      const int i = cell_site(g, c, 0, 0, 0);
      const int j = cell_site(g, c, 0, 1, 0);
      if (i < 0 && j < 0) continue;
      pairs.push_back({i, j, coeff.a11(c) * hpow, attach_node(i, j)});
    }
    return pairs;
  }

  const int cxn = cells_per_axis(g, 0), cyn = cells_per_axis(g, 1);
  pairs.reserve(static_cast<size_t>(cxn) * cyn * 6);
  for (int cy = 0; cy < cyn; ++cy) {
    for (int cx = 0; cx < cxn; ++cx) {
      const int c = cx + cxn * cy;
      // rank-one split: A = cx_w ex ex^T + cy_w ey ey^T + diagonal directions
      const double abs12 = std::abs(coeff.a12(c));
      const double cx_w = coeff.a11(c) - abs12;
      const double cy_w = coeff.a22(c) - abs12;
      const double cp_w = 2.0 * std::max(coeff.a12(c), 0.0);
      const double cm_w = 2.0 * std::max(-coeff.a12(c), 0.0);

      const int sw = cell_site(g, cx, cy, 0, 0), se = cell_site(g, cx, cy, 1, 0);
      const int nw = cell_site(g, cx, cy, 0, 1), ne = cell_site(g, cx, cy, 1, 1);

      auto add = [&](int i, int j, double w) {
        if (w == 0.0 || (i < 0 && j < 0)) return;
        pairs.push_back({i, j, w * hpow, attach_node(i, j)});
      };
      add(sw, se, 0.5 * cx_w);  // bottom x-edge
      add(nw, ne, 0.5 * cx_w);  // top x-edge
      add(sw, nw, 0.5 * cy_w);  // left y-edge
      add(se, ne, 0.5 * cy_w);  // right y-edge
      add(sw, ne, 0.5 * cp_w);  // (1,1) diagonal
      add(nw, se, 0.5 * cm_w);  // (1,-1) diagonal
    }
  }
  return pairs;
}

namespace {

double ppower_energy(const GridFunction& u, double p, const RegionMask* region) {
  const Grid& g = u.grid();
  const EdgeField xi = gradient(u);
  double s = 0.0;
  for (int a = 0; a < g.dim(); ++a) {
    const int ne = g.edge_count(a);
    for (int e = 0; e < ne; ++e) {
      if (region) {
        const int at = attach_node(g.edge_tail(a, e), g.edge_head(a, e));
        if (at < 0 || !region->contains(at)) continue;
      }
      s += std::pow(std::abs(xi.axis_value(a, e)), p);
    }
  }
  return s * g.cell_volume() / p;
}

double quadratic_energy(const GridFunction& u, const CoefficientField& coeff,
                        const RegionMask* region) {
  double s = 0.0;
  for (const auto& pr : quadratic_pairs(coeff)) {
    if (region && !region->contains(pr.attach)) continue;
    const double ui = pr.i < 0 ? 0.0 : u[pr.i];
    const double uj = pr.j < 0 ? 0.0 : u[pr.j];
    const double d = ui - uj;
    s += pr.w * d * d;
  }
  return 0.5 * s;
}

}  // namespace

double energy(const GridFunction& u, const VariationalKernel& k) {
  if (k.kind() == VariationalKernel::Kind::PPower) return ppower_energy(u, k.p(), nullptr);
  return quadratic_energy(u, k.coeff(), nullptr);
}

double energy(const GridFunction& u, const VariationalKernel& k, const RegionMask& region) {
  if (k.kind() == VariationalKernel::Kind::PPower) return ppower_energy(u, k.p(), &region);
  return quadratic_energy(u, k.coeff(), &region);
}

GridFunction subsolution_residual(const GridFunction& u, const VariationalKernel& k) {
  return subsolution_residual(u, k, static_cast<GridFunction*>(nullptr));
}

GridFunction subsolution_residual(const GridFunction& u, const VariationalKernel& k,
                                  GridFunction* scale_out) {
  const Grid& g = u.grid();
  if (scale_out && scale_out->grid() != g) *scale_out = GridFunction(g);

  if (k.kind() == VariationalKernel::Kind::PPower) {
    EdgeField flux = gradient(u);
    const double p = k.p();
    for (int a = 0; a < g.dim(); ++a)
      for (double& v : flux.axis(a)) v = std::pow(std::abs(v), p - 2.0) * v;
    if (scale_out) {
      const double inv_h = 1.0 / g.h();
      for (int a = 0; a < g.dim(); ++a)
        for (int i = 0; i < g.node_count(); ++i)
          (*scale_out)[i] += (std::abs(flux.axis_value(a, g.outgoing_edge(a, i))) +
                              std::abs(flux.axis_value(a, g.incoming_edge(a, i)))) * inv_h;
    }
    return divergence(flux);
  }

  GridFunction out(g);
  const double inv_vol = 1.0 / g.cell_volume();
  for (const auto& pr : quadratic_pairs(k.coeff())) {
    const double ui = pr.i < 0 ? 0.0 : u[pr.i];
    const double uj = pr.j < 0 ? 0.0 : u[pr.j];
    const double f = pr.w * (ui - uj) * inv_vol;
    if (pr.i >= 0) out[pr.i] -= f;
    if (pr.j >= 0) out[pr.j] += f;
    if (scale_out) {
      if (pr.i >= 0) (*scale_out)[pr.i] += std::abs(f);
      if (pr.j >= 0) (*scale_out)[pr.j] += std::abs(f);
    }
  }
  return out;
}

GridFunction subsolution_residual(const GridFunction& u, const VariationalKernel& k,
                                  const RegionMask& region) {
  (void)region;  // residual values are node-local; consumers mask them
  return subsolution_residual(u, k);
}

}  // namespace gradflow
