#include "rosen/formulas.hpp"

#include "rosen/kernels.hpp"
#include "rosen/quadrature.hpp"
#include "rosen/report.hpp"
#include "rosen/sym_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rosen {

namespace {

SymKernel vector_kernel(const GridPtr& g, const Eigen::VectorXd& v) {
  return SymKernel::vector(g, std::vector<double>(v.data(), v.data() + v.size()));
}

// Number of time cells covering [0, t]; t has to be a cell edge.
std::size_t cells_until(const Grid& g, double t) {
  if (!(t > 0.0) || t > g.t_max() * (1.0 + 1e-12)) throw std::invalid_argument("t must lie in (0, t_max]");
  std::size_t k = 0;
  while (k < g.time_count() && g.left(g.first_time() + k) < t - 1e-12 * std::max(1.0, t)) ++k;
  if (k == 0 || std::abs(g.right(g.first_time() + k - 1) - t) > 1e-9 * std::max(1.0, t))
    throw std::invalid_argument("t must be an edge of the time cells");
  return k;
}

void check_psi(const Grid& g, std::span<const double> psi) {
  if (psi.size() != g.time_count()) throw std::invalid_argument("psi needs one value per time cell");
}

void require_deterministic(const ChaosProcess& p, const char* what) {
  for (const auto& e : p.values)
    if (e.max_order() > 0) throw std::invalid_argument(std::string(what) + " must be deterministic");
}

double scalar_of(const ChaosElement& e) { return e.mean(); }

// (1/w_x) int_{C_x} |u - x'|^{gamma-1} dx' at the quadrature nodes of a transfer tensor.
Eigen::MatrixXd abs_nodes(const Grid& g, const TransferTensor& tt, double gamma) {
  const std::size_t q = tt.nodes_per_cell();
  const quad::Rule& r = quad::left_graded(q);
  Eigen::MatrixXd phi(Eigen::Index(g.size()), Eigen::Index(tt.time_cells() * q));
  for (std::size_t p = 0; p < tt.time_cells(); ++p) {
    const double ua = g.left(tt.cell(p)), tau = tt.tau(p);
    for (std::size_t m = 0; m < q; ++m) {
      const double u = ua + tau * r.x[m];
      const Eigen::Index c = Eigen::Index(p * q + m);
      for (std::size_t x = 0; x < g.size(); ++x) {
        const double a = g.left(x), b = g.right(x);
        phi(Eigen::Index(x), c) = (quad::cell_power(gamma, a, b, u) + quad::cell_power(gamma, -b, -a, -u)) / g.width(x);
      }
    }
  }
  return phi;
}

// Kernels of the members of an order <= 1 process: column p is the order-1 kernel (zero if absent).
Eigen::MatrixXd order1_kernels(const ChaosProcess& proc) {
  const Eigen::Index N = Eigen::Index(proc.grid->size());
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(N, Eigen::Index(proc.size()));
  for (std::size_t p = 0; p < proc.size(); ++p) {
    const ChaosElement& e = proc.values[p];
    if (e.max_order() > 1) throw std::invalid_argument("process members must have order <= 1");
    if (e.dense(1)) k.col(Eigen::Index(p)) = e.dense(1)->vec();
  }
  return k;
}

// G(p, q) = average over s in C_p, u in C_q of (s - u)_+^{H-1}.
double one_sided_weight(const Grid& g, double beta, std::size_t p, std::size_t q) {
  const std::size_t cp = g.first_time() + p, cq = g.first_time() + q;
  return quad::pair_integral(beta, g.left(cq), g.right(cq), g.left(cp), g.right(cp)) / (g.width(cp) * g.width(cq));
}

// Pieces shared by the Ito formulas for Z = int psi dR^H.
struct ItoPieces {
  std::size_t P = 0;                   // time cells up to t
  std::vector<Eigen::VectorXd> nested;  // order-1 kernel of int_0^s psi_r (s-r)^{H-1} dB', per s-cell
  std::vector<Eigen::MatrixXd> outer;   // order-2 kernel of the iterated dB' integral (E term)
  std::vector<double> triple;           // s-cell averages of the deterministic triple integral (D term)
};

ItoPieces ito_pieces(Hurst h, const Grid& g, std::span<const double> psi, std::size_t P, bool with_outer,
                     bool with_triple) {
  const double H = h.value();
  const double cbp = derived_constants(h.companion()).cSmallB;
  const Eigen::MatrixXd L = fbm_transfer(g, 0.5 * H, 0.0, g.t_max());
  const Eigen::MatrixXd Lh = fbm_transfer_half(g, 0.5 * H, 0.0, g.t_max());
  const Eigen::Index N = Eigen::Index(g.size());
  ItoPieces out;
  out.P = P;
  for (std::size_t p = 0; p < P; ++p) {
    Eigen::VectorXd a(Eigen::Index(p + 1));
    for (std::size_t q = 0; q <= p; ++q) a(Eigen::Index(q)) = psi[q] * one_sided_weight(g, H, p, q);
    const auto Lp = L.leftCols(Eigen::Index(p + 1));
    out.nested.push_back(cbp * (Lp * a));
    if (with_outer) {
      // V(:, q) = c_B' (sum_{r<q} L_r a_r + Lh_q a_q): running inner integral per u-cell
      Eigen::MatrixXd V(N, Eigen::Index(p + 1));
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(N);
      for (std::size_t q = 0; q <= p; ++q) {
        const Eigen::Index qi = Eigen::Index(q);
        V.col(qi) = cbp * (acc + a(qi) * Lh.col(qi));
        acc += a(qi) * L.col(qi);
      }
      Eigen::MatrixXd m = cbp * (Lp * a.asDiagonal() * V.transpose());
      out.outer.push_back(0.5 * (m + m.transpose()));
    }
  }
  if (with_triple) {
    // T_s = 1/2 sum_{q,q'} a(q) a(q') Abar(q,q'), a(q) = psi_q int_{C_q} (s-u)_+^{H-1} du
    Eigen::MatrixXd abar(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        const std::size_t ci = g.first_time() + i, cj = g.first_time() + j;
        const double v = quad::abs_pair_integral(H, g.left(ci), g.right(ci), g.left(cj), g.right(cj)) /
                         (g.width(ci) * g.width(cj));
        abar(Eigen::Index(i), Eigen::Index(j)) = v;
        abar(Eigen::Index(j), Eigen::Index(i)) = v;
      }
    const quad::Rule& r = quad::both_graded(16);
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t cp = g.first_time() + p;
      double tp = 0.0;
      Eigen::VectorXd a(Eigen::Index(p + 1));
      for (std::size_t m = 0; m < r.x.size(); ++m) {
        const double s = g.left(cp) + g.width(cp) * r.x[m];
        for (std::size_t q = 0; q <= p; ++q) {
          const std::size_t cq = g.first_time() + q;
          a(Eigen::Index(q)) = psi[q] * quad::cell_power(H, g.left(cq), std::min(g.right(cq), s), s);
        }
        const auto blk = abar.topLeftCorner(Eigen::Index(p + 1), Eigen::Index(p + 1));
        tp += r.w[m] * 0.5 * a.dot(blk * a);
      }
      out.triple.push_back(tp);
    }
  }
  return out;
}

// Average over C_p of s^e.
double power_average(const Grid& g, std::size_t p, double e) {
  const std::size_t c = g.first_time() + p;
  const double a = g.left(c), b = g.right(c);
  return (std::pow(b, e + 1.0) - std::pow(a, e + 1.0)) / ((e + 1.0) * (b - a));
}

ChaosElement ito_rhs_impl(Hurst h, const GridPtr& gp, std::span<const double> psi, const Polynomial& f, double t,
                          int max_order, bool closed_drifts) {
  const Grid& g = *gp;
  check_psi(g, psi);
  if (max_order < 0 || max_order > 4) throw std::invalid_argument("max_order must be in [0, 4]");
  const std::size_t P = cells_until(g, t);
  const double H = h.value();
  const ConstantSet cs = derived_constants(h);
  const Hurst hp = h.companion();
  const Polynomial f1 = derivative(f), f2 = derivative(f1), f3 = derivative(f2);
  const bool random = max_order >= 1;

  // Z_s is not needed by the mean when f''' is constant (degree <= 3) and max_order is 0.
  ChaosProcess Z = random ? rosenblatt_running_integral(h, gp, psi)
                          : deterministic_process(gp, std::vector<double>(g.time_count(), 0.0));
  const ItoPieces pc = ito_pieces(h, g, psi, P, max_order >= 2, !closed_drifts);

  ChaosElement out = ChaosElement::constant(gp, f.empty() ? 0.0 : f[0]);
  const auto member = [&](std::vector<ChaosElement> v) {
    v.resize(g.time_count(), ChaosElement(gp));
    return ChaosProcess(gp, std::move(v));
  };

  if (max_order >= 2) {
    std::vector<ChaosElement> a, c;
    for (std::size_t p = 0; p < P; ++p) {
      a.push_back(psi[p] * poly_apply(f1, Z.values[p], max_order - 2));
      ChaosElement np(gp);
      np.add(vector_kernel(gp, pc.nested[p]));
      c.push_back(psi[p] * product(poly_apply(f2, Z.values[p], max_order - 1), np, max_order - 1));
    }
    out += integral_rosenblatt(h, member(std::move(a)), 0.0, t, Overflow::clip);
    out += cs.c1 * integral_fbm(hp, member(std::move(c)), 0.0, t, Overflow::clip);
  }

  for (std::size_t p = 0; p < P; ++p) {
    const double tau = g.width(g.first_time() + p);
    double b, d;
    if (closed_drifts) {
      b = H * power_average(g, p, 2.0 * H - 1.0);
      d = 0.5 * H * cs.kappa3 * power_average(g, p, 3.0 * H - 1.0);
    } else {
      double dp = 0.0;
      for (std::size_t q = 0; q <= p; ++q)
        dp += psi[q] * one_sided_weight(g, 2.0 * H - 1.0, p, q) * g.width(g.first_time() + q);
      b = H * (2.0 * H - 1.0) * dp;
      d = std::pow(2.0 * H * (2.0 * H - 1.0), 1.5) * pc.triple[p];
    }
    if (!f2.empty()) out += (tau * psi[p] * b) * poly_apply(f2, Z.values[p], max_order);
    if (!f3.empty()) out += (tau * psi[p] * d) * poly_apply(f3, Z.values[p], max_order);
    if (max_order >= 2 && !f3.empty()) {
      ChaosElement op(gp);
      op.add(SymKernel::matrix(gp, pc.outer[p]));
      out += (cs.c2 * tau * psi[p]) * product(poly_apply(f3, Z.values[p], max_order - 2), op, max_order);
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- derivative lemmas

double lemma_constant(Hurst h) {
  const double H = h.value();
  const double g = gamma_fn(0.5 * H);
  return beta_fn(0.5 * H, 1.0 - H) / (g * g);
}

Eigen::MatrixXd abs_power_average(const Grid& g, double gamma, double a, double b) {
  Eigen::MatrixXd m = abs_power_matrix(g, gamma, a, b);
  const auto cells = time_cells(g, a, b);
  for (std::size_t p = 0; p < cells.size(); ++p) {
    const double tau = g.overlap(cells[p], a, b);
    for (std::size_t x = 0; x < g.size(); ++x) m(Eigen::Index(x), Eigen::Index(p)) /= g.width(x) * tau;
  }
  return m;
}

namespace {

std::vector<double> member_values(const ChaosProcess& g, std::span<const std::size_t> cells) {
  std::vector<double> v;
  for (std::size_t c : cells) v.push_back(scalar_of(g.at_cell(c)));
  return v;
}

}  // namespace

FreeSlotField nabla_int_fbm(Hurst h, const ChaosProcess& g, double T) {
  require_deterministic(g, "integrand");
  const Grid& gr = *g.grid;
  const auto cells = time_cells(gr, 0.0, T);
  const std::vector<double> gv = member_values(g, cells);
  const Eigen::MatrixXd A = abs_power_average(gr, h.value(), 0.0, T);
  Eigen::VectorXd gt(Eigen::Index(cells.size()));
  for (std::size_t p = 0; p < cells.size(); ++p) gt(Eigen::Index(p)) = gv[p] * gr.overlap(cells[p], 0.0, T);
  FreeSlotField out(g.grid, 1);
  out.ensure(0).col(0) = derived_constants(h.companion()).cSmallB * lemma_constant(h) * (A * gt);
  return out;
}

FreeSlotField nabla2_int_fbm(Hurst h, const ChaosProcess& g, double T) {
  const Grid& gr = *g.grid;
  const auto cells = time_cells(gr, 0.0, T);
  FreeSlotField out(g.grid, 2);
  const Eigen::Index N = Eigen::Index(gr.size());
  Eigen::MatrixXd& c0 = out.ensure(0);
  // (nabla g_s)(x) for each cell: K_+ applied to the order-1 kernels
  const Eigen::MatrixXd& kp = gr.frac_operator(0.5 * h.value())->left_matrix();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(N, Eigen::Index(cells.size()));
  for (std::size_t p = 0; p < cells.size(); ++p) {
    const ChaosElement& e = g.at_cell(cells[p]);
    if (e.max_order() > 1) throw std::invalid_argument("integrand members must have order <= 1");
    if (e.dense(1)) k.col(Eigen::Index(p)) = e.dense(1)->vec() * gr.overlap(cells[p], 0.0, T);
  }
  const Eigen::MatrixXd nab = kp * k;  // columns: tau_p (nabla g_p)
  const Eigen::MatrixXd A = abs_power_average(gr, h.value(), 0.0, T);
  const Eigen::MatrixXd m = derived_constants(h.companion()).cSmallB * lemma_constant(h) * (nab * A.transpose());
  const Eigen::MatrixXd full = m + m.transpose();  // rows x, columns y
  c0 = Eigen::Map<const Eigen::VectorXd>(full.data(), N * N);
  return out;
}

FreeSlotField nabla_int_rosenblatt(Hurst h, const ChaosProcess& g, double T) {
  require_deterministic(g, "integrand");
  const Grid& gr = *g.grid;
  const double H = h.value();
  const TransferTensor tt(gr, 0.5 * H, 0.0, T);
  const Eigen::MatrixXd phi = abs_nodes(gr, tt, H);
  const std::size_t q = tt.nodes_per_cell();
  Eigen::VectorXd c(tt.weights().size());
  for (std::size_t p = 0; p < tt.time_cells(); ++p) {
    const double gp = scalar_of(g.at_cell(tt.cell(p)));
    for (std::size_t m = 0; m < q; ++m) c(Eigen::Index(p * q + m)) = gp * tt.weights()(Eigen::Index(p * q + m));
  }
  FreeSlotField out(g.grid, 1);
  const double k = 2.0 * derived_constants(h).cSmallR * lemma_constant(h);
  out.ensure(1) = k * (phi * c.asDiagonal() * tt.factors().transpose());
  return out;
}

FreeSlotField nabla2_int_rosenblatt(Hurst h, const ChaosProcess& g, double T) {
  require_deterministic(g, "integrand");
  const Grid& gr = *g.grid;
  const double H = h.value();
  const TransferTensor tt(gr, 0.5 * H, 0.0, T);
  const Eigen::MatrixXd phi = abs_nodes(gr, tt, H);
  const std::size_t q = tt.nodes_per_cell();
  Eigen::VectorXd c(tt.weights().size());
  for (std::size_t p = 0; p < tt.time_cells(); ++p) {
    const double gp = scalar_of(g.at_cell(tt.cell(p)));
    for (std::size_t m = 0; m < q; ++m) c(Eigen::Index(p * q + m)) = gp * tt.weights()(Eigen::Index(p * q + m));
  }
  const double K = lemma_constant(h);
  const Eigen::MatrixXd full = 2.0 * derived_constants(h).cSmallR * K * K * (phi * c.asDiagonal() * phi.transpose());
  FreeSlotField out(g.grid, 2);
  const Eigen::Index N = Eigen::Index(gr.size());
  out.ensure(0) = Eigen::Map<const Eigen::VectorXd>(full.data(), N * N);
  return out;
}

std::vector<LemmaGap> derivative_lemma_gaps(Hurst h, const GridPtr& g, double T) {
  const double a2 = 0.5 * h.value();
  const Hurst hp = h.companion();
  const auto gap = [](const FreeSlotField& test, const FreeSlotField& ref) {
    if (test.is_zero() && ref.is_zero()) return 0.0;
    return field_gap(test, ref);
  };
  struct Named {
    std::string name;
    ChaosProcess proc;
  };
  std::vector<Named> det;
  det.push_back({"one", deterministic_process(g, [](double) { return 1.0; })});
  det.push_back({"s", deterministic_process(g, [](double s) { return s; })});
  {
    std::vector<double> v(g->time_count());
    for (std::size_t p = 0; p < v.size(); ++p) {
      const std::size_t c = g->first_time() + p;
      v[p] = g->overlap(c, 0.0, 0.5 * T) / g->width(c);
    }
    det.push_back({"half_indicator", deterministic_process(g, v)});
  }
  std::vector<LemmaGap> out;
  for (const auto& d : det) {
    const ChaosElement fi = integral_fbm(hp, d.proc, 0.0, T);
    out.push_back({"nabla_int_fbm", d.name, gap(nabla_int_fbm(h, d.proc, T), nabla(a2, fi))});
    out.push_back({"nabla2_int_fbm", d.name, gap(nabla2_int_fbm(h, d.proc, T), nabla2(a2, fi))});
    const ChaosElement ri = integral_rosenblatt(h, d.proc, 0.0, T);
    out.push_back({"nabla_int_rosenblatt", d.name, gap(nabla_int_rosenblatt(h, d.proc, T), nabla(a2, ri))});
    out.push_back({"nabla2_int_rosenblatt", d.name, gap(nabla2_int_rosenblatt(h, d.proc, T), nabla2(a2, ri))});
  }
  const ChaosProcess w = wiener_process(g);
  out.push_back({"nabla2_int_fbm", "W", gap(nabla2_int_fbm(h, w, T), nabla2(a2, integral_fbm(hp, w, 0.0, T)))});
  return out;
}

// ---------------------------------------------------------------- polynomials

Polynomial derivative(const Polynomial& f) {
  Polynomial d;
  for (std::size_t i = 1; i < f.size(); ++i) d.push_back(double(i) * f[i]);
  while (!d.empty() && d.back() == 0.0) d.pop_back();
  return d;
}

Polynomial parse_polynomial(const std::string& s) {
  if (s == "x") return {0.0, 1.0};
  if (s == "x^2") return {0.0, 0.0, 1.0};
  if (s == "x^3") return {0.0, 0.0, 0.0, 1.0};
  Polynomial p;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("cannot parse polynomial '" + s + "'");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos)
      throw std::invalid_argument("cannot parse polynomial '" + s + "'");
    p.push_back(v);
  }
  if (p.empty() || p.size() > 4) throw std::invalid_argument("polynomial degree must be at most 3");
  return p;
}

// ---------------------------------------------------------------- second-order differentials

SecondOrderDifferential::SecondOrderDifferential(Hurst hh, const GridPtr& g)
    : h(hh),
      theta(deterministic_process(g, std::vector<double>(g->time_count(), 0.0))),
      phi(theta),
      psi(theta) {}

ChaosProcess state_process(const SecondOrderDifferential& d) {
  require_deterministic(d.theta, "theta");
  require_deterministic(d.phi, "phi");
  require_deterministic(d.psi, "psi");
  const GridPtr& gp = d.grid();
  const Grid& g = *gp;
  const std::size_t P = g.time_count();
  const ConstantSet cs = derived_constants(d.h);
  const double cbp = derived_constants(d.h.companion()).cSmallB;
  const double a2 = 0.5 * d.h.value();
  const Eigen::MatrixXd L = fbm_transfer(g, a2, 0.0, g.t_max());
  const Eigen::MatrixXd Lh = fbm_transfer_half(g, a2, 0.0, g.t_max());
  const auto tt = g.transfer(a2);
  const Eigen::Index N = Eigen::Index(g.size());
  double th = 0.0;
  Eigen::VectorXd ph = Eigen::VectorXd::Zero(N);
  Eigen::MatrixXd ps = Eigen::MatrixXd::Zero(N, N);
  std::vector<ChaosElement> out;
  for (std::size_t p = 0; p < P; ++p) {
    const double tau = tt->tau(p);
    const double a = scalar_of(d.theta.values[p]), b = scalar_of(d.phi.values[p]), c = scalar_of(d.psi.values[p]);
    const Eigen::Index pi = Eigen::Index(p);
    ChaosElement e = ChaosElement::constant(gp, d.x0 + th + 0.5 * tau * a);
    const Eigen::VectorXd v = 2.0 * cs.cBR * cbp * (ph + b * Lh.col(pi));
    if (!v.isZero(0.0)) e.add(vector_kernel(gp, v));
    const Eigen::MatrixXd m = cs.cSmallR * (ps + c * tt->half_block(p));
    if (!m.isZero(0.0)) e.add(SymKernel::matrix(gp, m));
    out.push_back(std::move(e));
    th += tau * a;
    ph += b * L.col(pi);
    if (c != 0.0) ps += c * tt->block(p);
  }
  return ChaosProcess(gp, std::move(out));
}

ChaosElement reconstruct(const SecondOrderDifferential& d, double t, Overflow policy) {
  const GridPtr& gp = d.grid();
  const Grid& g = *gp;
  const std::size_t P = cells_until(g, t);
  ChaosElement out = ChaosElement::constant(gp, d.x0);
  for (std::size_t p = 0; p < P; ++p) out += g.width(g.first_time() + p) * d.theta.values[p];
  const double cbr = derived_constants(d.h).cBR;
  out += (2.0 * cbr) * integral_fbm(d.h.companion(), d.phi, 0.0, t, policy);
  out += integral_rosenblatt(d.h, d.psi, 0.0, t, policy);
  return out;
}

SecondOrderDifferential ito_tilde(const SecondOrderDifferential& d, const Polynomial& f) {
  const GridPtr& gp = d.grid();
  const Grid& g = *gp;
  const ChaosProcess x = state_process(d);
  const double cr = derived_constants(d.h).cSmallR;
  const double a2 = 0.5 * d.h.value();
  const auto tt = g.transfer(a2);
  const Polynomial f1 = derivative(f), f2 = derivative(f1), f3 = derivative(f2);
  SecondOrderDifferential out(d.h, gp);
  out.x0 = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) out.x0 += f[i] * std::pow(d.x0, double(i));
  for (std::size_t p = 0; p < g.time_count(); ++p) {
    const ChaosElement& xp = x.values[p];
    const double th = scalar_of(d.theta.values[p]), ph = scalar_of(d.phi.values[p]),
                 ps = scalar_of(d.psi.values[p]);
    const ChaosElement v = nabla_at(a2, xp, g.first_time() + p);
    const ChaosElement dd = nabla2_diagonal_at(*tt, xp, p);
    // psi~ feeds an R^H integral (+2 orders), phi~ an fBm integral (+1), theta~ a time integral.
    out.psi.values[p] = ps * poly_apply(f1, xp, 2);
    out.phi.values[p] = ph * poly_apply(f1, xp, 3) + ps * product(poly_apply(f2, xp, 3), v, 3);
    ChaosElement th_new = th * poly_apply(f1, xp, 4);
    if (!f2.empty()) {
      const ChaosElement f2x = poly_apply(f2, xp, 4);
      th_new += (2.0 * cr * ph) * product(f2x, v, 4);
      th_new += (cr * ps) * product(f2x, dd, 4);
    }
    if (!f3.empty()) th_new += (cr * ps) * product(poly_apply(f3, xp, 4), product(v, v, 4), 4);
    out.theta.values[p] = std::move(th_new);
  }
  return out;
}

// ---------------------------------------------------------------- Ito formulas

ChaosProcess rosenblatt_running_integral(Hurst h, const GridPtr& g, std::span<const double> psi) {
  check_psi(*g, psi);
  const double cr = derived_constants(h).cSmallR;
  const auto tt = g->transfer(0.5 * h.value());
  const Eigen::Index N = Eigen::Index(g->size());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(N, N);
  std::vector<ChaosElement> v;
  for (std::size_t p = 0; p < tt->time_cells(); ++p) {
    ChaosElement e(g);
    if (psi[p] != 0.0 || !acc.isZero(0.0)) e.add(SymKernel::matrix(g, cr * (acc + psi[p] * tt->half_block(p))));
    v.push_back(std::move(e));
    if (psi[p] != 0.0) acc += psi[p] * tt->block(p);
  }
  return ChaosProcess(g, std::move(v));
}

ChaosElement rosenblatt_wiener_integral(Hurst h, const GridPtr& g, std::span<const double> psi, double t) {
  check_psi(*g, psi);
  return integral_rosenblatt(h, deterministic_process(g, psi), 0.0, t);
}

ChaosElement ito_rhs_wiener_integrand(Hurst h, const GridPtr& g, std::span<const double> psi, const Polynomial& f,
                                      double t, int max_order) {
  return ito_rhs_impl(h, g, psi, f, t, max_order, false);
}

ChaosElement ito_rhs_rosenblatt(Hurst h, const GridPtr& g, const Polynomial& f, double t, int max_order) {
  const std::vector<double> one(g->time_count(), 1.0);
  return ito_rhs_impl(h, g, one, f, t, max_order, true);
}

// ---------------------------------------------------------------- order-wise comparison

ChaosElement order_part(const ChaosElement& e, int k) {
  if (k < 0 || k > 4) throw std::invalid_argument("order must be in [0, 4]");
  ChaosElement out(e.grid());
  if (e.dense(k)) out.add(*e.dense(k));
  if (k == 3 && !e.factored3().empty()) out.add_factored3(e.factored3());
  if (k == 4 && !e.factored().empty()) out.add_factored(e.factored());
  return out;
}

const OrderGap& OrderwiseGapReport::at(int order) const {
  for (const auto& r : rows)
    if (r.order == order) return r;
  throw std::invalid_argument("order not in report");
}

double OrderwiseGapReport::max_gap() const {
  double m = 0.0;
  for (const auto& r : rows) m = std::max(m, r.gap_rel);
  return m;
}

std::string OrderwiseGapReport::to_csv() const {
  std::string s = csv_line({"order", "lhs_norm", "rhs_norm", "gap_rel"});
  for (const auto& r : rows)
    s += csv_line({std::to_string(r.order), format_number(r.lhs_norm), format_number(r.rhs_norm),
                   format_number(r.gap_rel)});
  return s;
}

OrderwiseGapReport compare_orderwise(std::string name, Hurst h, double t, const ChaosElement& lhs,
                                     const ChaosElement& rhs, std::span<const int> orders) {
  require_same_grid(lhs.grid(), rhs.grid());
  OrderwiseGapReport rep;
  rep.name = std::move(name);
  rep.hurst = h.value();
  rep.t = t;
  rep.grid_n = lhs.grid()->n();
  for (int k : orders) {
    if (k > lhs.valid_order() || k > rhs.valid_order())
      throw std::invalid_argument("order " + std::to_string(k) + " is not determined by both sides");
    const ChaosElement l = order_part(lhs, k), r = order_part(rhs, k);
    const ChaosElement diff = l - r;
    OrderGap row;
    row.order = k;
    row.lhs_norm = std::sqrt(std::max(0.0, expectation_inner(l, l)));
    row.rhs_norm = std::sqrt(std::max(0.0, expectation_inner(r, r)));
    const double dn = std::sqrt(std::max(0.0, expectation_inner(diff, diff)));
    row.gap_rel = row.lhs_norm > 0.0 ? dn / row.lhs_norm : dn;
    rep.rows.push_back(row);
  }
  return rep;
}

OrderwiseGapReport square_identity_report(Hurst h, const GridPtr& g, double t) {
  const Grid& gr = *g;
  const std::size_t P = cells_until(gr, t);
  const double H = h.value();
  const ConstantSet cs = derived_constants(h);
  const std::vector<double> one(gr.time_count(), 1.0);
  const ChaosElement Rt = integral_rosenblatt(h, deterministic_process(g, one), 0.0, t);
  const ChaosElement lhs = product(Rt, Rt);

  const ItoPieces pc = ito_pieces(h, gr, one, P, false, false);
  std::vector<ChaosElement> nested;
  for (std::size_t p = 0; p < gr.time_count(); ++p) {
    ChaosElement e(g);
    if (p < P) e.add(vector_kernel(g, pc.nested[p]));
    nested.push_back(std::move(e));
  }
  // The identity's coefficient is 8(2H-1)/(H+1) = 2 c1, the Ito formula with f = x^2.
  ChaosElement rhs = 2.0 * integral_rosenblatt(h, rosenblatt_process(h, g), 0.0, t);
  rhs += (2.0 * cs.c1) * integral_fbm(h.companion(), ChaosProcess(g, std::move(nested)), 0.0, t);
  rhs += ChaosElement::constant(g, std::pow(t, 2.0 * H));
  const int orders[] = {0, 2, 4};
  return compare_orderwise("square_identity", h, t, lhs, rhs, orders);
}

// ---------------------------------------------------------------- moments

SecondMoment second_moment(Hurst h, const ChaosProcess& psi, double t) {
  const GridPtr& gp = psi.grid;
  const Grid& g = *gp;
  const std::size_t P = cells_until(g, t);
  const double H = h.value();
  const double c3 = derived_constants(h).c3;
  const Eigen::MatrixXd k = order1_kernels(psi).leftCols(Eigen::Index(P));
  const Eigen::MatrixXd nab = g.frac_operator(0.5 * H)->left_matrix() * k;  // (nabla psi_p)(u)
  SecondMoment out;
  for (std::size_t p = 0; p < P; ++p) {
    const std::size_t cp = g.first_time() + p;
    for (std::size_t q = 0; q < P; ++q) {
      const std::size_t cq = g.first_time() + q;
      const double e = expectation_inner(psi.values[p], psi.values[q]);
      out.term1 += e * quad::abs_pair_integral(2.0 * H - 1.0, g.left(cp), g.right(cp), g.left(cq), g.right(cq));
      const double nn = nab(Eigen::Index(cq), Eigen::Index(p)) * nab(Eigen::Index(cp), Eigen::Index(q));
      if (nn != 0.0)
        out.term2 += nn * quad::abs_pair_integral(H, g.left(cp), g.right(cp), g.left(cq), g.right(cq));
    }
  }
  out.term1 *= H * (2.0 * H - 1.0);
  out.term2 *= 2.0 * H * (2.0 * H - 1.0) * c3;
  // nabla^{H/2,H/2} of an order <= 1 member vanishes, so term3 is zero.
  return out;
}

bool MomentBound::holds(double k) const {
  return lhs.mean <= rhs.mean + k * std::hypot(lhs.std_error, rhs.std_error);
}

MomentBound moment_bound_gap(Hurst h, const GridPtr& gp, double q, std::span<const double> psi, double t,
                             std::size_t paths, std::uint64_t seed, std::size_t workers) {
  const Grid& g = *gp;
  check_psi(g, psi);
  if (!(q >= 3.0)) throw std::invalid_argument("moment bound needs q >= 3");
  if (paths < 2) throw std::invalid_argument("moment bound needs at least 2 paths");
  const std::size_t P = cells_until(g, t);
  const double cr = derived_constants(h).cSmallR;
  const double a2 = 0.5 * h.value();
  const auto tt = g.transfer(a2);
  const ChaosProcess Z = rosenblatt_running_integral(h, gp, psi);
  const Eigen::Index N = Eigen::Index(g.size());
  const Eigen::Map<const Eigen::VectorXd> w(g.widths().data(), N);

  // Per cell: matrix of Z_p, trace correction, v_p = (nabla Z_p)(p), d_p = nabla2 Z_p (p, p).
  std::vector<Eigen::MatrixXd> zm;
  std::vector<double> tr, dpv;
  Eigen::MatrixXd vv = Eigen::MatrixXd::Zero(N, Eigen::Index(P));
  const auto matrix_of = [&](const ChaosElement& e) {
    return e.dense(2) ? Eigen::MatrixXd(e.dense(2)->mat()) : Eigen::MatrixXd::Zero(N, N);
  };
  for (std::size_t p = 0; p < P; ++p) {
    zm.push_back(matrix_of(Z.values[p]));
    tr.push_back(zm.back().diagonal().dot(w));
    const ChaosElement v = nabla_at(a2, Z.values[p], g.first_time() + p);
    if (v.dense(1)) vv.col(Eigen::Index(p)) = v.dense(1)->vec();
    dpv.push_back(nabla2_diagonal_at(*tt, Z.values[p], p).mean());
  }
  const ChaosElement zt = integral_rosenblatt(h, deterministic_process(gp, psi), 0.0, t);
  const Eigen::MatrixXd zT = matrix_of(zt);
  const double trT = zT.diagonal().dot(w);

  const BlockFunctional body = [&](const Eigen::MatrixXd& xi) {
    const Eigen::Index b = xi.cols();
    Eigen::MatrixXd out(Eigen::Index(P + 1), b);
    const auto quadratic = [&](const Eigen::MatrixXd& m, double trace) -> Eigen::RowVectorXd {
      return (xi.cwiseProduct(m * xi)).colwise().sum().array() - trace;
    };
    out.row(0) = quadratic(zT, trT).array().abs().pow(q);
    const Eigen::MatrixXd vx = vv.transpose() * xi;  // P x b
    for (std::size_t p = 0; p < P; ++p) {
      const Eigen::Index pi = Eigen::Index(p);
      const Eigen::RowVectorXd z = quadratic(zm[p], tr[p]);
      const Eigen::ArrayXd zr = z.transpose().array();
      const Eigen::ArrayXd v2 = vx.row(pi).transpose().array().square();
      const Eigen::ArrayXd x = psi[p] * (zr.abs() * dpv[p] + zr.sign() * (q - 2.0) * v2);
      out.row(pi + 1) = x.abs().pow(q / 3.0).matrix().transpose();
    }
    return out;
  };
  const auto vals = sample_blocks(gp, body, P + 1, paths, seed, 128, workers);

  // Delta method on linearized per-path values.
  const double e = 3.0 / q;
  const auto mean_of = [](const std::vector<double>& v) { return pairwise_sum(v) / double(v.size()); };
  const auto grad = [e](double m) { return m > 0.0 ? e * std::pow(m, e - 1.0) : 0.0; };
  MomentBound out;
  const double m0 = mean_of(vals[0]);
  {
    const McEstimate s = summarize(vals[0], seed);
    out.lhs = {std::pow(m0, e), grad(m0) * s.std_error, paths, seed};
  }
  const double scale = 3.0 * (q - 1.0) * cr;
  std::vector<double> lin(paths, 0.0);
  double rhs = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    const double tau = g.width(g.first_time() + p);
    const double mp = mean_of(vals[p + 1]);
    rhs += tau * std::pow(mp, e);
    const double gp_ = tau * grad(mp);
    for (std::size_t i = 0; i < paths; ++i) lin[i] += gp_ * vals[p + 1][i];
  }
  const McEstimate sl = summarize(lin, seed);
  out.rhs = {scale * rhs, scale * sl.std_error, paths, seed};
  return out;
}

}  // namespace rosen
