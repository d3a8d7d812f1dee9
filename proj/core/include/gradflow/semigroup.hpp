#pragma once

#include <iosfwd>
#include <memory>
#include <vector>

#include "gradflow/energy.hpp"
#include "gradflow/grid.hpp"
#include "gradflow/pflow.hpp"

namespace gradflow {

enum class PoissonMethod { Spectral, Subordination };

/// Dense spectral data of -L: eigenvalues ascending, eigenvectors stored
/// column-major and orthonormal in the euclidean sense (divide by h^(n/2)
/// for the h^n-weighted normalization).
struct SpectralDecomposition {
  int n = 0;
  std::vector<double> eigenvalues;
  std::vector<double> eigenvectors;

  /// max_j |(-L) phi_j - lambda_j phi_j| / max(1, lambda_j), h^n scale.
  double max_eigen_residual(const class EllipticOperator& op) const;
  double max_orthonormality_defect() const;
};

/// Quadrature for e^{-t(-L)^(1/2)} = int_0^inf k_t(s) e^{sL} ds, realized on
/// the log axis of the substituted variable (s = t^2 / (4 r)). Weights are
/// nonnegative, t-independent, and renormalized to unit mass.
struct SubordinationQuadrature {
  std::vector<double> r;
  std::vector<double> weights;
  double raw_mass_defect = 0.0;  // |1 - sum w| before renormalization

  static const SubordinationQuadrature& standard();
  double heat_time(int i, double t) const { return t * t / (4.0 * r[static_cast<size_t>(i)]); }
  int size() const { return static_cast<int>(r.size()); }
};

/// -div(A grad .) assembled as a sparse symmetric form under the module
/// `grid` calculus; immutable and cheap to copy (shared internals).
class EllipticOperator {
 public:
  /// Validates the coefficient window and assembles. Grids with at most
  /// spectral_cap nodes get a dense eigendecomposition on demand.
  static EllipticOperator assemble(const Grid& grid, const CoefficientField& coeff,
                                   int spectral_cap = 4096);

  const Grid& grid() const;
  const CoefficientField& coeff() const;
  double lambda() const;
  int node_count() const;
  int spectral_cap() const;
  bool spectral_available() const;

  GridFunction apply_minus_l(const GridFunction& u) const;  // -L u
  GridFunction apply_l(const GridFunction& u) const;

  /// Lazily computed and cached; throws SpectralCapExceeded over the cap.
  const SpectralDecomposition& spectral() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// e^{tL} f. Spectral under the cap; Crank-Nicolson with CG inner solves and
/// Richardson-controlled substepping (local error <= 1e-8) beyond it.
GridFunction heat_apply(const EllipticOperator& op, const GridFunction& f, double t);

/// e^{-t(-L)^(1/2)} f, by functional calculus or by the subordination rule.
/// Nonfinite t^2 degenerates to the projection onto the kernel of -L.
GridFunction poisson_apply(const EllipticOperator& op, const GridFunction& f, double t,
                           PoissonMethod method = PoissonMethod::Spectral);

/// K_t(., y) = heat extension of delta_y / h^n.
GridFunction heat_kernel_column(const EllipticOperator& op, int y, double t);

struct OperatorBoundReport {
  double heat_lhs, heat_rhs;        // t |grad H_t f|^2  vs  Lambda/(2e) |f|^2
  double poisson_lhs, poisson_rhs;  // t^2 |grad P_t f|^2 vs 4 Lambda/e^2 |f|^2
  bool pass;
};
OperatorBoundReport operator_bound_check(const EllipticOperator& op, const GridFunction& f,
                                         double t);

struct DissipationReport {
  std::vector<double> heat_energy;     // F_A(H_t f) along the knots
  std::vector<double> poisson_energy;  // F_A(P_t f)
  double worst_increase;
  bool pass;  // nonincreasing within 1e-10 absolute slack
};
DissipationReport dissipation_check(const EllipticOperator& op, const GridFunction& f,
                                    const TimeGrid& timegrid);

/// Gaussian kernel bound K_t(x,y) <= C Lambda^(n/2) t^(-n/2)
/// exp(-c d(x,y)^2 / (Lambda t)); (C, c) are calibrated on A = I and then
/// verified per operator.
struct GaussianCalibration {
  double C;
  double c;
};
GaussianCalibration calibrate_gaussian_bound(const Grid& grid, const std::vector<double>& times);

struct KernelCertRow {
  double t;
  int y;
  double min_value;
  double mass;
  double bound_ratio;  // max over x of K / bound; <= 1 certifies
};
struct KernelCertificateReport {
  GaussianCalibration calibration;
  std::vector<KernelCertRow> rows;
  double worst_min_value;
  double worst_mass_error;  // |mass - 1| (Periodic) or max(0, mass - 1)
  double max_bound_ratio;
  bool pass;

  /// CSV columns: t, y_index, min_value, mass, calibrated_C, calibrated_c,
  /// max_bound_ratio.
  void write_csv(std::ostream& out) const;
};
KernelCertificateReport check_kernel_certificate(const EllipticOperator& op,
                                                 const GaussianCalibration& calibration,
                                                 const std::vector<double>& times,
                                                 const std::vector<int>& columns);

}  // namespace gradflow
