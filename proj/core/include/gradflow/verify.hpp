#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gradflow/maximal.hpp"

namespace gradflow {

/// One scenario outcome. margin is the check's PASS margin: for contraction
/// checks (energy_before - energy_after) / max(energy_before, floor), for
/// the auxiliary checks a quantity that must stay above -tolerance.
struct ContractionReport {
  std::uint64_t scenario_id = 0;
  std::string check;  // pflow | heat | poisson | order | finite-speed | ...
  std::uint64_t seed = 0;
  int dim = 1;
  int n = 0;
  Boundary boundary = Boundary::Periodic;
  std::string kernel_desc;
  double energy_before = 0.0;
  double energy_after = 0.0;
  double margin = 0.0;
  int detachment_count = 0;
  std::string subharmonicity;  // pass | fail | vacuous | no-interior | -
  double subharm_min_interior = 0.0;
  double subharm_min_all = 0.0;
  bool secondary_pass = true;
  bool pass = false;
  std::string reason;  // failure cause; "-" when clean
};

ContractionReport verify_pflow_contraction(const GridFunction& f, double p,
                                           const TimeGrid& timegrid,
                                           const ProximalConfig& config,
                                           double rel_tol = 1e-6);
ContractionReport verify_semigroup_contraction(const EllipticOperator& op,
                                               const GridFunction& f, const TimeGrid& timegrid,
                                               Source source, double rel_tol = 1e-6);

enum class DataGenerator { Bumps, Fourier };

/// Scenario family: deterministic function of (seed, count, ranges).
struct Ensemble {
  std::uint64_t seed = 0;
  int count = 200;
  DataGenerator generator = DataGenerator::Bumps;
  std::vector<double> p_values = {2.5, 3.0, 4.0};
  double lambda = 10.0;
  std::vector<int> sizes_1d = {64, 128};
  std::vector<int> sizes_2d = {32};
  TimeGrid pflow_timegrid = TimeGrid::geometric(1e-4, 1.25, 10.0);
  TimeGrid semigroup_timegrid = TimeGrid::geometric(1e-4, 1.1, 10.0);
  ProximalConfig solver;
};

struct CheckSet {
  bool pflow = true;
  bool heat = true;
  bool poisson = true;
  bool order = false;
  bool finite_speed = false;
  bool dissipation = false;
  bool hajlasz = false;
  bool kernel_certificate = false;
};

struct EnsembleResult {
  std::vector<ContractionReport> reports;
  int total = 0;
  int passed = 0;
  int failed = 0;
  double worst_margin = 0.0;
  double wall_time_s = 0.0;

  void write_csv(std::ostream& out) const;
  /// {total, pass, fail, worst_margin, wall_time_s}; wall time is the one
  /// field that is not reproducible across runs.
  std::string summary_json() const;
};

/// Deterministic given (ensemble, checks); scenarios run on `threads`
/// workers (0 = hardware concurrency, capped by GRADFLOW_THREADS).
EnsembleResult run_ensemble(const Ensemble& ensemble, const CheckSet& checks, int threads = 0);

/// Nonnegative scenario data; compactly supported inside DirichletZero boxes.
GridFunction generate_data(const Grid& grid, DataGenerator generator, std::uint64_t seed);

int resolve_thread_count(int requested);

}  // namespace gradflow
