#include "rosen/kernels.hpp"

#include "rosen/quadrature.hpp"
#include "rosen/sym_kernel.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rosen {

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("fractional order must lie in (0, 1)");
}

void check_interval(const Grid& g, double a, double b) {
  if (!(a >= 0.0) || !(b > a) || b > g.t_max() * (1.0 + 1e-12))
    throw std::invalid_argument("integration interval must satisfy 0 <= a < b <= t_max");
}

}  // namespace

std::vector<std::size_t> time_cells(const Grid& g, double a, double b) {
  std::vector<std::size_t> out;
  for (std::size_t i = g.first_time(); i < g.size(); ++i)
    if (g.overlap(i, a, b) > 0.0) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------- FracOperator

FracOperator::FracOperator(const Grid& g, double alpha) : alpha_(alpha) {
  check_alpha(alpha);
  const std::size_t n = g.size();
  w_ = Eigen::Map<const Eigen::VectorXd>(g.widths().data(), Eigen::Index(n));
  p_ = Eigen::MatrixXd::Zero(Eigen::Index(n), Eigen::Index(n));
  const double ga = gamma_fn(alpha);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t u = x; u < n; ++u)
      p_(Eigen::Index(x), Eigen::Index(u)) =
          quad::pair_integral(alpha, g.left(x), g.right(x), g.left(u), g.right(u)) / ga;
  kl_ = p_.transpose();
  kl_.array().colwise() /= w_.array();
  kr_ = p_;
  kr_.array().colwise() /= w_.array();
}

Eigen::VectorXd FracOperator::apply(Side side, const Eigen::VectorXd& f) const {
  if (f.size() != w_.size()) throw std::invalid_argument("fractional integral: size mismatch");
  return side == Side::left ? Eigen::VectorXd(kl_ * f) : Eigen::VectorXd(kr_ * f);
}

std::shared_ptr<const FracOperator> Grid::frac_operator(double alpha) const {
  std::lock_guard lock(cache_mutex_);
  auto& slot = frac_cache_[alpha];
  if (!slot) slot = std::make_shared<const FracOperator>(*this, alpha);
  return slot;
}

std::shared_ptr<const TransferTensor> Grid::transfer(double alpha) const {
  std::lock_guard lock(cache_mutex_);
  auto& slot = transfer_cache_[alpha];
  if (!slot) slot = std::make_shared<const TransferTensor>(*this, alpha, 0.0, t_max());
  return slot;
}

GridFn1 frac_integral(Side side, double alpha, const GridFn1& f) {
  const auto op = f.grid->frac_operator(alpha);
  const Eigen::VectorXd v = op->apply(side, Eigen::Map<const Eigen::VectorXd>(f.values.data(), Eigen::Index(f.values.size())));
  return GridFn1(f.grid, std::vector<double>(v.data(), v.data() + v.size()));
}

GridFn2 frac_integral_2d(double alpha, const GridFn2& f) {
  const auto op = f.grid->frac_operator(alpha);
  const Eigen::Index n = Eigen::Index(f.n());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(f.values.data(), n, n);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out =
      op->left_matrix() * m * op->left_matrix().transpose();
  return GridFn2(f.grid, std::vector<double>(out.data(), out.data() + out.size()));
}

// ---------------------------------------------------------------- fBm transfer

Eigen::MatrixXd fbm_transfer(const Grid& g, double beta, double a, double b) {
  check_alpha(beta);
  check_interval(g, a, b);
  const auto cells = time_cells(g, a, b);
  const double gb = gamma_fn(beta);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(Eigen::Index(g.size()), Eigen::Index(cells.size()));
  for (std::size_t p = 0; p < cells.size(); ++p) {
    const double ua = std::max(a, g.left(cells[p])), ub = std::min(b, g.right(cells[p]));
    for (std::size_t x = 0; x <= cells[p]; ++x)
      out(Eigen::Index(x), Eigen::Index(p)) =
          quad::pair_integral(beta, g.left(x), g.right(x), ua, ub) / (gb * g.width(x));
  }
  return out;
}

Eigen::MatrixXd fbm_transfer_half(const Grid& g, double beta, double a, double b) {
  check_alpha(beta);
  check_interval(g, a, b);
  const auto cells = time_cells(g, a, b);
  const double gb = gamma_fn(beta);
  const quad::Rule& r = quad::left_graded(24);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(Eigen::Index(g.size()), Eigen::Index(cells.size()));
  for (std::size_t p = 0; p < cells.size(); ++p) {
    const double ua = std::max(a, g.left(cells[p])), ub = std::min(b, g.right(cells[p]));
    const double tau = ub - ua;
    // average over s of int_{ua}^{s} = int (ub - u)/tau du
    for (std::size_t m = 0; m < r.x.size(); ++m) {
      const double u = ua + tau * r.x[m];
      const double wt = r.w[m] * (ub - u);
      for (std::size_t x = 0; x <= cells[p]; ++x)
        out(Eigen::Index(x), Eigen::Index(p)) += wt * quad::cell_power(beta, g.left(x), g.right(x), u);
    }
    for (std::size_t x = 0; x <= cells[p]; ++x) out(Eigen::Index(x), Eigen::Index(p)) /= gb * g.width(x);
  }
  return out;
}

// ---------------------------------------------------------------- TransferTensor

TransferTensor::TransferTensor(const Grid& g, double alpha, double a, double b, std::size_t nodes)
    : alpha_(alpha), size_(g.size()), q_(nodes) {
  check_alpha(alpha);
  check_interval(g, a, b);
  cells_ = rosen::time_cells(g, a, b);
  w_ = Eigen::Map<const Eigen::VectorXd>(g.widths().data(), Eigen::Index(size_));
  const quad::Rule& r = quad::left_graded(q_);
  const Eigen::Index cols = Eigen::Index(cells_.size() * q_);
  f_ = Eigen::MatrixXd::Zero(Eigen::Index(size_), cols);
  om_.resize(cols);
  half_.resize(cols);
  const double ga = gamma_fn(alpha);
  for (std::size_t p = 0; p < cells_.size(); ++p) {
    const double ua = std::max(a, g.left(cells_[p])), ub = std::min(b, g.right(cells_[p]));
    const double tau = ub - ua;
    tau_.push_back(tau);
    for (std::size_t m = 0; m < q_; ++m) {
      const Eigen::Index c = Eigen::Index(p * q_ + m);
      const double u = ua + tau * r.x[m];
      om_(c) = tau * r.w[m];
      half_(c) = om_(c) * (ub - u) / tau;
      for (std::size_t i = 0; i <= cells_[p]; ++i)
        f_(Eigen::Index(i), c) = quad::cell_power(alpha, g.left(i), g.right(i), u) / (ga * g.width(i));
    }
  }
}

Eigen::MatrixXd TransferTensor::block(std::size_t p) const {
  const auto fp = f_.middleCols(Eigen::Index(p * q_), Eigen::Index(q_));
  return fp * om_.segment(Eigen::Index(p * q_), Eigen::Index(q_)).asDiagonal() * fp.transpose();
}

Eigen::MatrixXd TransferTensor::half_block(std::size_t p) const {
  const auto fp = f_.middleCols(Eigen::Index(p * q_), Eigen::Index(q_));
  return fp * half_.segment(Eigen::Index(p * q_), Eigen::Index(q_)).asDiagonal() * fp.transpose();
}

Eigen::MatrixXd TransferTensor::combine(std::span<const double> g, std::span<const double> h) const {
  if (g.size() != cells_.size() || (!h.empty() && h.size() != cells_.size()))
    throw std::invalid_argument("transfer tensor: coefficient count mismatch");
  Eigen::VectorXd c(om_.size());
  for (std::size_t p = 0; p < cells_.size(); ++p)
    for (std::size_t m = 0; m < q_; ++m) {
      const Eigen::Index k = Eigen::Index(p * q_ + m);
      c(k) = g[p] * om_(k) + (h.empty() ? 0.0 : h[p] * half_(k));
    }
  const Eigen::MatrixXd fc = f_ * c.asDiagonal();
  return fc * f_.transpose();
}

Eigen::VectorXd TransferTensor::diagonal_average(const Eigen::MatrixXd& F) const {
  if (F.rows() != Eigen::Index(size_) || F.cols() != Eigen::Index(size_))
    throw std::invalid_argument("transfer tensor: matrix size mismatch");
  const Eigen::MatrixXd fw = w_.asDiagonal() * f_;
  const Eigen::MatrixXd t = F * fw;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(Eigen::Index(cells_.size()));
  for (std::size_t p = 0; p < cells_.size(); ++p) {
    double s = 0.0;
    for (std::size_t m = 0; m < q_; ++m) {
      const Eigen::Index k = Eigen::Index(p * q_ + m);
      s += om_(k) * fw.col(k).dot(t.col(k));
    }
    out(Eigen::Index(p)) = s / tau_[p];
  }
  return out;
}

// ---------------------------------------------------------------- process kernels

GridFn1 fbm_kernel(Hurst h, double t, const GridPtr& gp) {
  const Grid& g = *gp;
  if (!(t >= 0.0) || t > g.t_max() * (1.0 + 1e-12)) throw std::invalid_argument("fbm_kernel: t outside [0, t_max]");
  const double beta = h.value() - 0.5;
  const double cb = derived_constants(h).cBigB;
  GridFn1 out(gp);
  if (t == 0.0) return out;
  const auto G = [beta](double z) { return z > 0.0 ? std::pow(z, beta + 1.0) / (beta + 1.0) : 0.0; };
  // int over y in [a, b] of ((t - y)_+^beta - (-y)_+^beta) / beta
  const auto cell = [&](double a, double b, auto&& self) -> double {
    const double w = b - a;
    if (b <= 0.0) {
      const double gap = -b;
      const double spread = gap + w + t;
      if (spread * spread / (w * t) > 1e4) {
        if (gap > 0.0)
          return quad::log_panels([&](double z) { return quad::pow_diff(z, t, beta); }, gap, gap + w) / beta;
        const double m = std::min(w, t);
        if (m < w) return self(a, -m, self) + self(-m, 0.0, self);
      }
    }
    return (G(t - a) - G(t - b) - G(-a) + G(-b)) / beta;
  };
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.left(i) >= t) break;
    out[i] = cb * cell(g.left(i), g.right(i), cell) / g.width(i);
  }
  return out;
}

SymKernel rosenblatt_kernel(Hurst h, double t, const GridPtr& gp) {
  const Grid& g = *gp;
  if (!(t >= 0.0) || t > g.t_max() * (1.0 + 1e-12))
    throw std::invalid_argument("rosenblatt_kernel: t outside [0, t_max]");
  const double alpha = h.value() / 2.0;
  const double cr = derived_constants(h).cBigR;
  SymKernel out(gp, 2);
  if (t == 0.0) return out;
  boost::math::quadrature::tanh_sinh<double> ts;
  const std::size_t n = g.size();
  auto m = out.mat();
  for (std::size_t i = 0; i < n && g.left(i) < t; ++i) {
    for (std::size_t j = i; j < n && g.left(j) < t; ++j) {
      const double lo = std::max({0.0, g.left(i), g.left(j)});
      if (lo >= t) continue;
      // two-argument form: boost then tolerates abscissas that round onto an endpoint
      const auto f = [&](double u, double) {
        return quad::cell_power(alpha, g.left(i), g.right(i), u) * quad::cell_power(alpha, g.left(j), g.right(j), u);
      };
      std::vector<double> brk{lo};
      for (double e : {g.right(i), g.right(j)})
        if (e > lo && e < t) brk.push_back(e);
      brk.push_back(t);
      std::sort(brk.begin(), brk.end());
      brk.erase(std::unique(brk.begin(), brk.end()), brk.end());
      double s = 0.0;
      for (std::size_t k = 0; k + 1 < brk.size(); ++k) {
        const double len = brk[k + 1] - brk[k];
        if (len <= 1e-13 * std::max(1.0, std::abs(brk[k]))) {
          // too short for tanh-sinh abscissas to resolve; the integrand is bounded here
          s += len * f(0.5 * (brk[k] + brk[k + 1]), 0.0);
          continue;
        }
        s += ts.integrate(f, brk[k], brk[k + 1], 1e-10);
      }
      const double v = cr * s / (g.width(i) * g.width(j));
      m(Eigen::Index(i), Eigen::Index(j)) = v;
      m(Eigen::Index(j), Eigen::Index(i)) = v;
    }
  }
  return out;
}

GridFn2 transfer_rosenblatt(Hurst h, const GridFn1& gfun, double a, double b) {
  const Grid& g = *gfun.grid;
  const TransferTensor tt(g, h.value() / 2.0, a, b);
  std::vector<double> coef(tt.time_cells());
  for (std::size_t p = 0; p < coef.size(); ++p) coef[p] = gfun[tt.cell(p)];
  (void)h;
  const Eigen::MatrixXd m = tt.combine(coef);
  GridFn2 out(gfun.grid);
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = m(Eigen::Index(i), Eigen::Index(j));
  return out;
}

Eigen::MatrixXd abs_power_matrix(const Grid& g, double gamma, double a, double b) {
  check_interval(g, a, b);
  const auto cells = time_cells(g, a, b);
  Eigen::MatrixXd out(Eigen::Index(g.size()), Eigen::Index(cells.size()));
  for (std::size_t p = 0; p < cells.size(); ++p) {
    const double ua = std::max(a, g.left(cells[p])), ub = std::min(b, g.right(cells[p]));
    for (std::size_t x = 0; x < g.size(); ++x)
      out(Eigen::Index(x), Eigen::Index(p)) = quad::abs_pair_integral(gamma, g.left(x), g.right(x), ua, ub);
  }
  return out;
}

std::pair<double, double> beta_kernel_identity(double alpha, double u, double v, std::size_t n, double t_min) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("beta identity needs alpha in (0, 1/2)");
  if (u == v) throw std::invalid_argument("beta identity is singular at u = v");
  const double top = std::min(u, v), far = std::max(u, v);
  if (!(t_min < top)) throw std::invalid_argument("t_min must lie below min(u, v)");
  GridSpec spec;
  spec.t_min = t_min;
  spec.t_max = std::max(1.0, top + 1.0);
  spec.n = n;
  spec.tail_cells = 64;
  spec.tail_factor = 1e24;
  const Grid g(spec);
  boost::math::quadrature::tanh_sinh<double> ts;
  // z = top - y >= 0 keeps the endpoint singularity at the origin
  const auto f = [&](double z) { return std::pow(z, alpha - 1.0) * std::pow(far - top + z, alpha - 1.0); };
  double lhs = 0.0;
  for (std::size_t i = 0; i < g.size() && g.left(i) < top; ++i) {
    const double z0 = top - std::min(g.right(i), top), z1 = top - g.left(i);
    lhs += ts.integrate(f, z0, z1, 1e-12);
  }
  const double rhs = beta_fn(alpha, 1.0 - 2.0 * alpha) * std::pow(far - top, 2.0 * alpha - 1.0);
  return {lhs, rhs};
}

}  // namespace rosen
