#pragma once

#include "rosen/chaos.hpp"
#include "rosen/constants.hpp"
#include "rosen/grid.hpp"
#include "rosen/integrators.hpp"
#include "rosen/mc.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rosen {

// B(H/2, 1 - H) / Gamma(H/2)^2, the factor that turns the H/2 transfer kernel into |s - x|^{H-1}.
double lemma_constant(Hurst h);

// Cell averages of |s - x|^{gamma-1}: rows are grid cells x, columns the time cells of [a, b].
Eigen::MatrixXd abs_power_average(const Grid& g, double gamma, double a, double b);

// Closed forms for the fractional derivatives of integrals over [0, T] (H/2 throughout).
// nabla of the B^{(H+1)/2} integral of a deterministic g: one slot, base order 0.
FreeSlotField nabla_int_fbm(Hurst h, const ChaosProcess& g, double T);
// nabla^{H/2,H/2} of the same integral; members of order <= 1 (deterministic gives zero).
FreeSlotField nabla2_int_fbm(Hurst h, const ChaosProcess& g, double T);
// nabla of the R^H integral of a deterministic g: one slot, base order 1.
FreeSlotField nabla_int_rosenblatt(Hurst h, const ChaosProcess& g, double T);
// nabla^{H/2,H/2} of the R^H integral of a deterministic g: two slots, base order 0.
FreeSlotField nabla2_int_rosenblatt(Hurst h, const ChaosProcess& g, double T);

struct LemmaGap {
  std::string lemma;      // nabla_int_fbm, nabla2_int_fbm, nabla_int_rosenblatt, nabla2_int_rosenblatt
  std::string integrand;  // one, s, half_indicator, W
  double gap = 0.0;       // field_gap(closed form, chaos pipeline)
};
// All four lemmas for g in {1, s, 1_[0,T/2]}, plus W for the second fBm lemma.
std::vector<LemmaGap> derivative_lemma_gaps(Hurst h, const GridPtr& g, double T);

// Polynomials are coefficient lists c_0, c_1, ... of degree at most 3.
using Polynomial = std::vector<double>;
Polynomial derivative(const Polynomial& f);
Polynomial parse_polynomial(const std::string& s);  // "x", "x^2", "x^3" or comma-separated coefficients

// x_t = x0 + int theta ds + 2 c_BR int phi dB^{(H+1)/2} + int psi dR^H.
struct SecondOrderDifferential {
  Hurst h;
  double x0 = 0.0;
  ChaosProcess theta, phi, psi;
  explicit SecondOrderDifferential(Hurst hh, const GridPtr& g);
  const GridPtr& grid() const noexcept { return psi.grid; }
};

// Time-cell averages of x_s. The coefficient processes must be deterministic.
ChaosProcess state_process(const SecondOrderDifferential& d);
// x_t assembled from the coefficients (any member orders within the order-4 budget).
ChaosElement reconstruct(const SecondOrderDifferential& d, double t, Overflow policy = Overflow::error);
// Coefficients of y = f(x); orders that cannot reach y_t within order 4 are clipped.
SecondOrderDifferential ito_tilde(const SecondOrderDifferential& d, const Polynomial& f);

// Right-hand side of the Ito formula for f(Z_t), Z_t = int_0^t psi dR^H, psi deterministic
// (per time cell), from the displayed terms. max_order 0 builds only the mean.
ChaosElement ito_rhs_wiener_integrand(Hurst h, const GridPtr& g, std::span<const double> psi, const Polynomial& f,
                                      double t, int max_order = 4);
// Same with psi = 1 and the closed-form drifts s^{2H-1} and kappa3 s^{3H-1}.
ChaosElement ito_rhs_rosenblatt(Hurst h, const GridPtr& g, const Polynomial& f, double t, int max_order = 4);

// Z_t = int_0^t psi dR^H for deterministic per-cell psi.
ChaosElement rosenblatt_wiener_integral(Hurst h, const GridPtr& g, std::span<const double> psi, double t);

struct OrderGap {
  int order = 0;
  double lhs_norm = 0.0;  // sqrt(k! |f_k|^2)
  double rhs_norm = 0.0;
  double gap_rel = 0.0;   // |lhs_k - rhs_k| / |lhs_k| (absolute when lhs_k = 0)
};

struct OrderwiseGapReport {
  std::string name;
  double hurst = 0.0;
  double t = 0.0;
  std::size_t grid_n = 0;
  std::vector<OrderGap> rows;
  const OrderGap& at(int order) const;
  double max_gap() const;
  std::string to_csv() const;
};

// Part of a chaos element of exactly one order.
ChaosElement order_part(const ChaosElement& e, int k);
OrderwiseGapReport compare_orderwise(std::string name, Hurst h, double t, const ChaosElement& lhs,
                                     const ChaosElement& rhs, std::span<const int> orders);

// R_t^2 against 2 int R dR + 2 c1 (nested dB^{(H+1)/2}) + t^{2H}, orders 0, 2, 4.
OrderwiseGapReport square_identity_report(Hurst h, const GridPtr& g, double t);

struct SecondMoment {
  double term1 = 0.0, term2 = 0.0, term3 = 0.0;
  double total() const { return term1 + term2 + term3; }
};
// Three-term second moment of int_0^t psi dR^H for psi of order <= 1.
SecondMoment second_moment(Hurst h, const ChaosProcess& psi, double t);

struct MomentBound {
  McEstimate lhs;  // |Z_t|_{L^q}^3
  McEstimate rhs;  // 3(q-1) c_R int |psi (|Z| nabla2 Z + sgn(Z)(q-2)(nabla Z)^2)|_{L^{q/3}} ds
  bool holds(double k) const;  // lhs <= rhs within k combined standard errors
};
MomentBound moment_bound_gap(Hurst h, const GridPtr& g, double q, std::span<const double> psi, double t,
                             std::size_t paths, std::uint64_t seed, std::size_t workers = 0);

// Time-cell averages of Z_s = int_0^s psi dR^H for deterministic per-cell psi.
ChaosProcess rosenblatt_running_integral(Hurst h, const GridPtr& g, std::span<const double> psi);

}  // namespace rosen
