#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace gradflow {

/// Flat configuration mirroring the sectioned key-value file; every key has
/// a documented default and a --section-key flag twin.
struct RunConfig {
  std::string command;  // run-flow | verify | kernel-check | sweep

  int grid_dim = 1;
  int grid_n = 128;
  std::string grid_h = "auto";  // auto: 1/n (periodic), 1/(n+1) (dirichlet0)
  std::string grid_boundary = "periodic";

  std::string kernel_kind = "ppower";  // ppower | quadratic
  double kernel_p = 4.0;
  double kernel_lambda = 10.0;
  std::string kernel_coeff = "identity";  // identity | checkerboard | random-spd | file
  std::string kernel_coeff_file;

  double time_t_min = 1e-4;
  double time_ratio = 1.25;
  double time_t_max = 10.0;
  double time_semigroup_ratio = 1.1;  // knot ratio for semigroup maximal scans

  double solver_newton_tol = 1e-10;
  int solver_max_newton_iters = 60;
  double solver_damping = 1.0;
  double solver_delta = 1e-12;
  int solver_spectral_cap = 4096;

  std::string data_generator = "bumps";  // bumps | fourier
  std::uint64_t data_seed = 0;

  std::uint64_t ensemble_seed = 0;
  int ensemble_count = 200;
  std::string ensemble_generator = "bumps";
  std::string ensemble_checks = "pflow,heat,poisson";
  std::string ensemble_p_values = "2.5,3,4";
  std::string ensemble_sizes_1d = "64,128";
  std::string ensemble_sizes_2d = "32";
  double ensemble_lambda = 10.0;

  std::string sweep_kind = "tmax";  // tmax | ratio | tau
  int sweep_levels = 4;

  int kernel_check_fields = 5;
  int kernel_check_times = 4;

  std::string output_dir = "out";
  std::string output_formats = "csv,json";
  int output_threads = 0;  // 0: hardware concurrency; GRADFLOW_THREADS caps
};

/// Named overlays for common runs (theorem1-smoke, theorem1, theorem23,
/// kernel-smoke, full).
std::vector<std::string> preset_names();

/// defaults < presets < config file < flags; unknown keys are hard errors.
/// args are the tokens after the command: --config FILE, --preset NAME, and
/// --section-key VALUE triples.
RunConfig parse_config(const std::string& command, const std::vector<std::string>& args);

/// Sectioned text form; parse_config(serialize) round-trips.
void serialize_config(const RunConfig& config, std::ostream& out);

/// Throws ValidationError naming the violated invariant.
void validate_config(const RunConfig& config);

/// Runs the command, writing artifacts (atomically) and summary.json into
/// output.dir. Exit status: 0 all PASS, 1 any FAIL row, 2 execution error.
int execute(const RunConfig& config);

/// Entry point for the gradflow binary.
int cli_main(int argc, char** argv);

}  // namespace gradflow
