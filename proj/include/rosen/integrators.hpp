#pragma once

#include "rosen/chaos.hpp"
#include "rosen/constants.hpp"
#include "rosen/grid.hpp"
#include "rosen/mc.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rosen {

// What to do with parts of an integrand whose integral would exceed chaos order 4.
enum class Overflow { error, clip };

// delta(u) for a one-slot field, delta^2(u) for a two-slot field: the free slots become
// kernel variables and the result is symmetrized.
ChaosElement skorokhod_wiener(const FreeSlotField& u);
// delta(u 1_[a,b]) for a process of time-cell averages (each member constant on its cell).
ChaosElement skorokhod_wiener(const ChaosProcess& u, double a, double b, Overflow policy = Overflow::error);

// c_B(h) delta(I_-^{h-1/2} g 1_[a,b]). [a, b] must be within [0, t_max].
ChaosElement integral_fbm(Hurst h, const ChaosProcess& g, double a, double b, Overflow policy = Overflow::error);
// c_R(h) delta^2(sum_p g_p M_p) with the order-H/2 transfer tensor over [a, b].
ChaosElement integral_rosenblatt(Hurst h, const ChaosProcess& g, double a, double b,
                                 Overflow policy = Overflow::error);

// Time-cell averages of B^H_s and R^H_s as chaos elements.
ChaosProcess fbm_process(Hurst h, const GridPtr& g);
ChaosProcess rosenblatt_process(Hurst h, const GridPtr& g);

// Riemann sum sum_{k < horizon} g_k (h_{k+m} - h_k) delta / eps over the uniform time cells,
// m = eps / delta. Paths hold one value per time cell; horizon 0 means time_count - m.
double forward_integral_estimate(const Grid& g, std::span<const double> g_path, std::span<const double> h_path,
                                 double epsilon, std::size_t horizon = 0);

enum class Integrand { deterministic, wiener };
Integrand parse_integrand(const std::string& s);
std::string to_string(Integrand i);

struct RelationshipConfig {
  Integrand integrand = Integrand::deterministic;
  // Used for the deterministic class.
  std::function<double(double)> g = [](double s) { return 1.0 + s; };
  // Ladder in units of the time step, largest first.
  std::vector<std::size_t> eps_steps{16, 8, 4, 2};
  std::size_t paths = 10000;
  std::uint64_t seed = 1;
  std::size_t workers = 0;
};

struct RelationshipRow {
  double epsilon = 0.0;
  McEstimate forward, skorokhod, corr1, corr2, residual;
  double residual_rms = 0.0;
  double residual_rms_se = 0.0;  // delta-method standard error of the RMS
};

struct RelationshipReport {
  std::string integrator;  // "fbm" or "rosenblatt"
  std::string integrand;
  double hurst = 0.0;
  double horizon = 0.0;  // integrals run over [0, horizon]
  std::vector<RelationshipRow> rows;

  // Residual at the smallest epsilon within k standard errors of zero.
  bool residual_vanishes(double k) const;
  // Residual RMS non-increasing along the ladder, with slack of `k` standard errors of the RMS.
  bool residual_decreases(double k) const;
  std::string to_csv() const;
};

enum class Integrator { fbm, rosenblatt };

// Per-path values behind a relationship report. Row e < E is the forward sum for eps_steps[e];
// rows E, E+1, E+2 are the Skorokhod integral and the two corrections. Integrals run over
// [0, horizon()], horizon = (time_count - max eps step) * delta.
class RelationshipSampler {
 public:
  RelationshipSampler(Integrator which, Hurst h, GridPtr g, const RelationshipConfig& cfg);
  std::size_t outputs() const noexcept { return steps_.size() + 3; }
  double horizon() const noexcept { return horizon_; }
  const std::vector<std::size_t>& steps() const noexcept { return steps_; }
  double delta() const noexcept { return delta_; }
  // noise: n x b matrix of increments, one column per path
  Eigen::MatrixXd operator()(const Eigen::MatrixXd& noise) const { return body_(noise); }

 private:
  std::vector<std::size_t> steps_;
  double delta_ = 0.0, horizon_ = 0.0;
  BlockFunctional body_;
};

RelationshipReport relationship_fbm(Hurst h, const GridPtr& g, const RelationshipConfig& cfg);
RelationshipReport relationship_rosenblatt(Hurst h, const GridPtr& g, const RelationshipConfig& cfg);

enum class DualityKind { fbm, rosenblatt };

struct DualityResult {
  double lhs = 0.0;    // E[G int g d.]
  double rhs = 0.0;    // c int E[(nabla G)(u) g_u] du
  double scale = 0.0;  // sqrt(E G^2 E (int g d.)^2)
  double gap() const;
  double relative_gap() const;
};

DualityResult duality_gap(Hurst h, DualityKind which, const ChaosProcess& g, const ChaosElement& G, double a,
                          double b);

}  // namespace rosen
