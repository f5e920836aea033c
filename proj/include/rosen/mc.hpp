#pragma once

#include "rosen/chaos.hpp"
#include "rosen/constants.hpp"
#include "rosen/grid.hpp"
#include "rosen/sym_kernel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace rosen {

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t paths = 0;
  std::uint64_t seed = 0;
};

// Increments N(0, width(i)) from a stream keyed by (seed, path); cell i is the i-th draw.
NoiseSample sample_noise(const GridPtr& g, std::uint64_t seed, std::uint64_t path);

// Pairwise (cascade) summation; the result depends only on the order of `v`.
double pairwise_sum(std::span<const double> v);

// Mean and standard error of per-path values.
McEstimate summarize(std::span<const double> values, std::uint64_t seed);

using Functional = std::function<double(const NoiseSample&)>;
using VectorFunctional = std::function<std::vector<double>(const NoiseSample&)>;

// Evaluates the functional on paths 0..paths-1. Values are stored by path index, so the
// result does not depend on the worker count (0 = hardware concurrency).
std::vector<double> sample_values(const GridPtr& g, const Functional& f, std::size_t paths, std::uint64_t seed,
                                  std::size_t workers = 0);
// Several outputs per path: result[k][path].
std::vector<std::vector<double>> sample_vectors(const GridPtr& g, const VectorFunctional& f, std::size_t outputs,
                                                std::size_t paths, std::uint64_t seed, std::size_t workers = 0);

// Blocked sampling: paths are grouped in consecutive blocks of fixed width (the last may be
// shorter); f maps the n x b noise matrix of a block to an outputs x b value matrix.
// Block boundaries do not depend on the worker count, so results are reproducible.
using BlockFunctional = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& noise)>;
std::vector<std::vector<double>> sample_blocks(const GridPtr& g, const BlockFunctional& f, std::size_t outputs,
                                               std::size_t paths, std::uint64_t seed, std::size_t block = 128,
                                               std::size_t workers = 0);

McEstimate estimate(const GridPtr& g, const Functional& f, std::size_t paths, std::uint64_t seed,
                    std::size_t workers = 0);

// W, B^H and R^H at t = 0 and the right edge of every time cell, all driven by the same
// noise draw per path. Rows are times, columns paths.
struct PathTable {
  std::vector<double> times;
  Eigen::MatrixXd w, b, r;
};
PathTable simulate_paths(Hurst h, const GridPtr& g, std::size_t paths, std::uint64_t seed, std::size_t workers = 0);

// Third cumulant of I_2(f): 8 tr((f W)^3), the sum over all index triples.
double cumulant3_exact(const SymKernel& f);

}  // namespace rosen
