#include "gradflow/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gradflow/errors.hpp"

namespace gradflow {

Grid::Grid(int n, double h, Boundary boundary)
    : dim_(1), shape_{n, 1}, h_(h), boundary_(boundary) {
  if (n < 2 && boundary == Boundary::Periodic)
    throw std::invalid_argument("periodic grid needs at least 2 nodes");
  if (n < 1) throw std::invalid_argument("grid needs at least 1 node");
  if (!(h > 0.0)) throw std::invalid_argument("grid spacing must be positive");
}

Grid::Grid(int nx, int ny, double h, Boundary boundary)
    : dim_(2), shape_{nx, ny}, h_(h), boundary_(boundary) {
  if ((nx < 2 || ny < 2) && boundary == Boundary::Periodic)
    throw std::invalid_argument("periodic grid needs at least 2 nodes per axis");
  if (nx < 1 || ny < 1) throw std::invalid_argument("grid needs at least 1 node per axis");
  if (!(h > 0.0)) throw std::invalid_argument("grid spacing must be positive");
}

double Grid::cell_volume() const { return dim_ == 1 ? h_ : h_ * h_; }

int Grid::edge_count(int axis) const {
  if (axis >= dim_) return 0;
  if (periodic()) return node_count();
  // one extra edge per lattice line against the ghost layer
  return axis == 0 ? (shape_[0] + 1) * shape_[1] : shape_[0] * (shape_[1] + 1);
}

int Grid::edge_tail(int axis, int e) const {
  if (periodic()) return e;
  if (axis == 0) {
    const int w = shape_[0] + 1;
    const int ex = e % w, iy = e / w;
    return ex == 0 ? -1 : node_index(ex - 1, iy);
  }
  const int ix = e % shape_[0], ey = e / shape_[0];
  return ey == 0 ? -1 : node_index(ix, ey - 1);
}

int Grid::edge_head(int axis, int e) const {
  if (periodic()) {
    const int ix = node_x(e), iy = node_y(e);
    return axis == 0 ? node_index((ix + 1) % shape_[0], iy)
                     : node_index(ix, (iy + 1) % shape_[1]);
  }
  if (axis == 0) {
    const int w = shape_[0] + 1;
    const int ex = e % w, iy = e / w;
    return ex == shape_[0] ? -1 : node_index(ex, iy);
  }
  const int ix = e % shape_[0], ey = e / shape_[0];
  return ey == shape_[1] ? -1 : node_index(ix, ey);
}

int Grid::outgoing_edge(int axis, int node) const {
  if (periodic()) return node;
  const int ix = node_x(node), iy = node_y(node);
  return axis == 0 ? (ix + 1) + (shape_[0] + 1) * iy : ix + shape_[0] * (iy + 1);
}

int Grid::incoming_edge(int axis, int node) const {
  if (periodic()) {
    const int ix = node_x(node), iy = node_y(node);
    return axis == 0 ? node_index((ix - 1 + shape_[0]) % shape_[0], iy)
                     : node_index(ix, (iy - 1 + shape_[1]) % shape_[1]);
  }
  const int ix = node_x(node), iy = node_y(node);
  return axis == 0 ? ix + (shape_[0] + 1) * iy : ix + shape_[0] * iy;
}

bool Grid::on_boundary(int node) const {
  const int ix = node_x(node), iy = node_y(node);
  if (ix == 0 || ix == shape_[0] - 1) return true;
  if (dim_ == 2 && (iy == 0 || iy == shape_[1] - 1)) return true;
  return false;
}

double Grid::distance(int a, int b) const {
  double d2 = 0.0;
  const int da[2] = {node_x(a) - node_x(b), node_y(a) - node_y(b)};
  for (int axis = 0; axis < dim_; ++axis) {
    int d = std::abs(da[axis]);
    if (periodic()) d = std::min(d, shape_[axis] - d);
    d2 += static_cast<double>(d) * d;
  }
  return h_ * std::sqrt(d2);
}

bool Grid::operator==(const Grid& o) const {
  return dim_ == o.dim_ && shape_ == o.shape_ && h_ == o.h_ && boundary_ == o.boundary_;
}

GridFunction::GridFunction(const Grid& grid, std::vector<double> values)
    : grid_(grid), v_(std::move(values)) {
  if (static_cast<int>(v_.size()) != grid_.node_count())
    throw std::invalid_argument("value count does not match node count");
}

EdgeField::EdgeField(const Grid& grid) : grid_(grid) {
  for (int a = 0; a < 2; ++a)
    v_[a].assign(static_cast<size_t>(grid.edge_count(a)), 0.0);
}

int RegionMask::count() const {
  int c = 0;
  for (auto b : in) c += b != 0;
  return c;
}

EdgeField gradient(const GridFunction& u) {
  const Grid& g = u.grid();
  EdgeField out(g);
  const double inv_h = 1.0 / g.h();
  for (int a = 0; a < g.dim(); ++a) {
    const int ne = g.edge_count(a);
    for (int e = 0; e < ne; ++e) {
      const int t = g.edge_tail(a, e), h = g.edge_head(a, e);
      const double ut = t < 0 ? 0.0 : u[t];
      const double uh = h < 0 ? 0.0 : u[h];
      out.axis_value(a, e) = (uh - ut) * inv_h;
    }
  }
  return out;
}

GridFunction divergence(const EdgeField& g) {
  const Grid& gr = g.grid();
  GridFunction out(gr);
  const double inv_h = 1.0 / gr.h();
  for (int a = 0; a < gr.dim(); ++a) {
    for (int i = 0; i < gr.node_count(); ++i) {
      out[i] += (g.axis_value(a, gr.outgoing_edge(a, i)) -
                 g.axis_value(a, gr.incoming_edge(a, i))) * inv_h;
    }
  }
  return out;
}

double inner(const GridFunction& a, const GridFunction& b) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s * a.grid().cell_volume();
}

double inner(const EdgeField& a, const EdgeField& b) {
  double s = 0.0;
  for (int ax = 0; ax < a.grid().dim(); ++ax) {
    const auto& va = a.axis(ax);
    const auto& vb = b.axis(ax);
    for (size_t e = 0; e < va.size(); ++e) s += va[e] * vb[e];
  }
  return s * a.grid().cell_volume();
}

double l2_norm_sq(const GridFunction& a) { return inner(a, a); }
double l2_norm(const GridFunction& a) { return std::sqrt(std::max(0.0, l2_norm_sq(a))); }
double l2_norm_sq(const EdgeField& a) { return inner(a, a); }

double lp_pow(const EdgeField& g, double p) {
  double s = 0.0;
  for (int ax = 0; ax < g.grid().dim(); ++ax)
    for (double v : g.axis(ax)) s += std::pow(std::abs(v), p);
  return s * g.grid().cell_volume();
}

double min_value(const GridFunction& a) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : a.values()) m = std::min(m, v);
  return m;
}

double max_abs(const GridFunction& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

namespace {

// 1D maximal function over all (wrapped or clipped) intervals containing x.
// Averages over windows reaching past a DirichletZero box only shrink for
// nonnegative data, so clipped windows realize the zero-extension supremum.
std::vector<double> hl_max_1d(const Grid& g, const std::vector<double>& u) {
  const int n = g.shape()[0];
  std::vector<double> prefix(static_cast<size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + u[static_cast<size_t>(i)];
  const double total = prefix[static_cast<size_t>(n)];

  auto wrapped_sum = [&](int start, int len) {
    start = ((start % n) + n) % n;
    if (start + len <= n) return prefix[start + len] - prefix[start];
    return total - (prefix[start] - prefix[start + len - n]);
  };

  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (int x = 0; x < n; ++x) {
    double best = u[static_cast<size_t>(x)];  // exact singleton window
    if (g.periodic()) {
      for (int a = 0; a < n; ++a) {
        double sum = 0.0;
        // grow the window to the right of x-a; lengths a+1..n hold x
        for (int len = a + 1; len <= n; ++len) {
          sum = wrapped_sum(x - a, len);
          best = std::max(best, sum / len);
        }
      }
    } else {
      for (int l = 0; l <= x; ++l)
        for (int r = x; r < n; ++r)
          best = std::max(best, (prefix[r + 1] - prefix[l]) / (r - l + 1));
    }
    out[static_cast<size_t>(x)] = best;
  }
  return out;
}

// 2D maximal function over centered l-inf balls (clipped or wrapped).
std::vector<double> hl_max_2d(const Grid& g, const std::vector<double>& u) {
  const int nx = g.shape()[0], ny = g.shape()[1];
  std::vector<double> P(static_cast<size_t>(nx + 1) * (ny + 1), 0.0);
  auto pref = [&](int i, int j) -> double& { return P[static_cast<size_t>(j) * (nx + 1) + i]; };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      pref(i + 1, j + 1) = u[static_cast<size_t>(g.node_index(i, j))] +
                           pref(i, j + 1) + pref(i + 1, j) - pref(i, j);
  auto box = [&](int x0, int x1, int y0, int y1) {  // inclusive, in-range
    return pref(x1 + 1, y1 + 1) - pref(x0, y1 + 1) - pref(x1 + 1, y0) + pref(x0, y0);
  };
  // wrapped interval [c-r, c+r] on an axis of length n -> 1 or 2 in-range spans
  auto spans = [](int c, int r, int n, int s[2][2]) {
    if (2 * r + 1 >= n) { s[0][0] = 0; s[0][1] = n - 1; return 1; }
    int lo = ((c - r) % n + n) % n;
    int hi = lo + 2 * r;
    if (hi < n) { s[0][0] = lo; s[0][1] = hi; return 1; }
    s[0][0] = lo; s[0][1] = n - 1; s[1][0] = 0; s[1][1] = hi - n;
    return 2;
  };

  const int rmax = std::max(nx, ny);
  std::vector<double> out(static_cast<size_t>(nx) * ny, 0.0);
  for (int y = 0; y < ny; ++y) {
    for (int x = 0; x < nx; ++x) {
      double best = u[static_cast<size_t>(g.node_index(x, y))];  // exact singleton window
      for (int r = 0; r < rmax; ++r) {
        double sum = 0.0;
        long cells = 0;
        if (g.periodic()) {
          int sx[2][2], sy[2][2];
          const int kx = spans(x, r, nx, sx), ky = spans(y, r, ny, sy);
          for (int i = 0; i < kx; ++i)
            for (int j = 0; j < ky; ++j)
              sum += box(sx[i][0], sx[i][1], sy[j][0], sy[j][1]);
          const long w = std::min(2 * r + 1, nx);
          cells = w * static_cast<long>(std::min(2 * r + 1, ny));
        } else {
          const int x0 = std::max(0, x - r), x1 = std::min(nx - 1, x + r);
          const int y0 = std::max(0, y - r), y1 = std::min(ny - 1, y + r);
          sum = box(x0, x1, y0, y1);
          cells = static_cast<long>(x1 - x0 + 1) * (y1 - y0 + 1);
        }
        best = std::max(best, sum / static_cast<double>(cells));
        if (!g.periodic() && x - r <= 0 && x + r >= nx - 1 && y - r <= 0 && y + r >= ny - 1)
          break;
        if (g.periodic() && 2 * r + 1 >= rmax) break;
      }
      out[static_cast<size_t>(g.node_index(x, y))] = best;
    }
  }
  return out;
}

}  // namespace

GridFunction hardy_littlewood_max(const GridFunction& u) {
  std::vector<double> abs_u(u.values().size());
  for (size_t i = 0; i < abs_u.size(); ++i) abs_u[i] = std::abs(u.values()[i]);
  auto vals = u.grid().dim() == 1 ? hl_max_1d(u.grid(), abs_u) : hl_max_2d(u.grid(), abs_u);
  return GridFunction(u.grid(), std::move(vals));
}

GridFunction chebyshev_distance(const RegionMask& sources) {
  const Grid& g = sources.grid;
  const double inf = std::numeric_limits<double>::infinity();
  const int nx = g.shape()[0], ny = g.shape()[1];

  // chamfer sweeps on an integer field; exact for the chessboard metric
  auto sweep = [&](std::vector<double>& d, int width, int height) {
    auto at = [&](int i, int j) -> double& { return d[static_cast<size_t>(j) * width + i]; };
    for (int j = 0; j < height; ++j)
      for (int i = 0; i < width; ++i) {
        double best = at(i, j);
        if (i > 0) best = std::min(best, at(i - 1, j) + 1);
        if (j > 0) {
          best = std::min(best, at(i, j - 1) + 1);
          if (i > 0) best = std::min(best, at(i - 1, j - 1) + 1);
          if (i + 1 < width) best = std::min(best, at(i + 1, j - 1) + 1);
        }
        at(i, j) = best;
      }
    for (int j = height - 1; j >= 0; --j)
      for (int i = width - 1; i >= 0; --i) {
        double best = at(i, j);
        if (i + 1 < width) best = std::min(best, at(i + 1, j) + 1);
        if (j + 1 < height) {
          best = std::min(best, at(i, j + 1) + 1);
          if (i + 1 < width) best = std::min(best, at(i + 1, j + 1) + 1);
          if (i > 0) best = std::min(best, at(i - 1, j + 1) + 1);
        }
        at(i, j) = best;
      }
  };

  const int tiles = g.periodic() ? 3 : 1;
  const int w = nx * tiles, ht = (g.dim() == 2 ? ny : 1) * (g.dim() == 2 ? tiles : 1);
  std::vector<double> d(static_cast<size_t>(w) * ht, inf);
  for (int ty = 0; ty < (g.dim() == 2 ? tiles : 1); ++ty)
    for (int tx = 0; tx < tiles; ++tx)
      for (int i = 0; i < g.node_count(); ++i)
        if (sources.contains(i))
          d[static_cast<size_t>(g.node_y(i) + ty * ny) * w + (g.node_x(i) + tx * nx)] = 0.0;
  sweep(d, w, ht);

  GridFunction out(g, inf);
  const int ox = g.periodic() ? nx : 0;
  const int oy = (g.periodic() && g.dim() == 2) ? ny : 0;
  for (int i = 0; i < g.node_count(); ++i) {
    const double v = d[static_cast<size_t>(g.node_y(i) + oy) * w + (g.node_x(i) + ox)];
    out[i] = v == inf ? inf : v * g.h();
  }
  return out;
}

RegionMask support_mask(const GridFunction& u, double threshold) {
  RegionMask m(u.grid());
  for (int i = 0; i < u.size(); ++i)
    if (std::abs(u[i]) > threshold) m.set(i);
  return m;
}

}  // namespace gradflow
