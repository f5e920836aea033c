#pragma once

#include "rosen/constants.hpp"
#include "rosen/grid.hpp"

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

namespace rosen {

class SymKernel;

enum class Side { left, right };

// Grid indices of the cells meeting (a, b), in order.
std::vector<std::size_t> time_cells(const Grid& g, double a, double b);

// Galerkin Riemann-Liouville operators of order alpha on the cell space.
// P(x, u) = int_{C_x} int_{C_u} (u - y)_+^{alpha-1} dy du / Gamma(alpha), so
// (I_+ f)_u = sum_x P(x,u) f_x / w_u and (I_- f)_x = sum_u P(x,u) f_u / w_x
// are cell averages of the exact continuum images of piecewise-constant f.
class FracOperator {
 public:
  FracOperator(const Grid& g, double alpha);

  double alpha() const noexcept { return alpha_; }
  std::size_t size() const noexcept { return w_.size(); }
  const Eigen::MatrixXd& pairs() const noexcept { return p_; }
  // K_+ (u, x) and K_- (x, u) as dense matrices.
  const Eigen::MatrixXd& left_matrix() const noexcept { return kl_; }
  const Eigen::MatrixXd& right_matrix() const noexcept { return kr_; }

  Eigen::VectorXd apply(Side side, const Eigen::VectorXd& f) const;

 private:
  double alpha_;
  Eigen::VectorXd w_;
  Eigen::MatrixXd p_, kl_, kr_;
};

// Fractional integral of a piecewise-constant function.
GridFn1 frac_integral(Side side, double alpha, const GridFn1& f);
// Left integral in both variables: K_+ F K_+^T.
GridFn2 frac_integral_2d(double alpha, const GridFn2& f);

// Cell averages over y of (1/Gamma(beta)) int_{C_p cap [a,b]} (s - y)_+^{beta-1} ds,
// one column per time cell p meeting (a, b). This is the transfer operator
// I_-^{beta} applied to the indicator of each time cell.
Eigen::MatrixXd fbm_transfer(const Grid& g, double beta, double a, double b);

// Time-averaged partial transfer: column p is the average over s in C_p of
// the transfer of 1_{[left(p), s]}, i.e. the cell-p share of a running integral.
Eigen::MatrixXd fbm_transfer_half(const Grid& g, double beta, double a, double b);

// Factored second-order transfer tensor
//   M_p(i, j) = (1 / (Gamma(alpha)^2 w_i w_j)) int_{C_p cap [a,b]} A_i(u) A_j(u) du,
// with A_i(u) = int_{C_i} (u - y)_+^{alpha-1} dy, stored through per-cell quadrature
// nodes: M_p = F_p diag(omega_p) F_p^T.
class TransferTensor {
 public:
  TransferTensor(const Grid& g, double alpha, double a, double b, std::size_t nodes = 24);

  double alpha() const noexcept { return alpha_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t time_cells() const noexcept { return cells_.size(); }
  std::size_t nodes_per_cell() const noexcept { return q_; }
  // Grid index of time cell p, and |C_p cap [a, b]|.
  std::size_t cell(std::size_t p) const { return cells_[p]; }
  double tau(std::size_t p) const { return tau_[p]; }
  std::span<const std::size_t> cells() const noexcept { return cells_; }

  const Eigen::MatrixXd& factors() const noexcept { return f_; }
  const Eigen::VectorXd& weights() const noexcept { return om_; }
  // Weights omega * (right end - u) / tau: time average of the running integral over C_p.
  const Eigen::VectorXd& half_weights() const noexcept { return half_; }

  Eigen::MatrixXd block(std::size_t p) const;
  Eigen::MatrixXd half_block(std::size_t p) const;
  // sum_p g_p M_p (plus sum_p h_p times the half blocks when h is given).
  Eigen::MatrixXd combine(std::span<const double> g, std::span<const double> h = {}) const;
  // <M_p, F>_W / tau_p for every p: exact diagonal average of (I_+ x I_+ F)(u, u) over C_p.
  Eigen::VectorXd diagonal_average(const Eigen::MatrixXd& F) const;

 private:
  double alpha_;
  std::size_t size_, q_;
  std::vector<std::size_t> cells_;
  std::vector<double> tau_;
  Eigen::VectorXd w_;
  Eigen::MatrixXd f_;
  Eigen::VectorXd om_, half_;
};

// Moving-average kernel of B^H_t as cell averages of C_B int_0^t (s - y)_+^{H-3/2} ds.
GridFn1 fbm_kernel(Hurst h, double t, const GridPtr& g);

// Kernel of R^H_t as cell averages of
// C_R int_0^t (s - y1)_+^{H/2-1} (s - y2)_+^{H/2-1} ds, by adaptive quadrature per cell pair.
SymKernel rosenblatt_kernel(Hurst h, double t, const GridPtr& g);

// sum_p g_p M_p with g restricted to the time cells of [a, b]; c_R times this is the
// white-noise kernel of the Rosenblatt integral of g.
GridFn2 transfer_rosenblatt(Hurst h, const GridFn1& g, double a, double b);

// Two-sided weights pair(|s - x|^{gamma-1}) integrated over C_x and C_p cap [a, b]:
// rows are grid cells, columns time cells of [a, b].
Eigen::MatrixXd abs_power_matrix(const Grid& g, double gamma, double a, double b);

// lhs: quadrature on a far-reaching grid of int_{-inf}^{u ^ v} (u-y)^{a-1} (v-y)^{a-1} dy,
// rhs: Beta(alpha, 1 - 2 alpha) |u - v|^{2 alpha - 1}.
std::pair<double, double> beta_kernel_identity(double alpha, double u, double v, std::size_t n = 4096,
                                               double t_min = -50.0);

}  // namespace rosen
