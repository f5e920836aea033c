#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rosen {

// Environment variable holding the default output directory.
inline constexpr const char* kOutDirEnv = "ROSEN_OUT_DIR";

struct ExperimentConfig {
  double hurst = 0.75;
  std::size_t grid_n = 128;
  double t_min = -20.0;
  double t_max = 1.0;
  std::size_t paths = 10000;
  std::uint64_t seed = 1;
  std::vector<std::size_t> epsilons{16, 8, 4, 2};  // multiples of the time step, largest first
  std::map<std::string, double> tolerances;
  std::string output_dir = "out";
  std::size_t workers = 0;  // 0 = hardware concurrency; results do not depend on it
  bool refine = false;      // verify-ito: also rerun the square identity at 2 grid_n

  void validate() const;
};

// Default tolerance per check name; also the set of accepted --tol-<name> flags.
const std::map<std::string, double>& default_tolerances();

// Applies key = value lines ('#' comments). Keys: hurst, grid_n, t_min, t_max, paths, seed,
// eps, out, workers, refine, tol.<name>.
void apply_config_file(const std::string& path, ExperimentConfig& cfg);

const std::vector<std::string>& subcommands();

// Runs one subcommand and writes its artifacts. Returns 0 (pass) or 1 (tolerance failure).
int run_subcommand(const std::string& name, const ExperimentConfig& cfg);

// Full command-line entry point; usage and config errors return 2.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace rosen
