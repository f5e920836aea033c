#include "rosen/integrators.hpp"

#include "rosen/kernels.hpp"
#include "rosen/report.hpp"
#include "rosen/sym_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rosen {

namespace {

Eigen::Map<const Eigen::VectorXd> weights_of(const Grid& g) {
  return {g.widths().data(), Eigen::Index(g.size())};
}

SymKernel vector_kernel(const GridPtr& g, const Eigen::VectorXd& v) {
  return SymKernel::vector(g, std::vector<double>(v.data(), v.data() + v.size()));
}

void check_interval(const Grid& g, double a, double b) {
  if (!(a >= 0.0) || !(b > a) || b > g.t_max() * (1.0 + 1e-12))
    throw std::invalid_argument("integration interval must satisfy 0 <= a < b <= t_max");
}

// Tracks how much of an integral is determined when members are clipped or too high.
struct Budget {
  int valid = 4;
  bool complete = true;

  // Member of order `top` (valid up to `member_valid` if clipped) gains `lift` orders.
  void member(const ChaosElement& e, int lift, Overflow policy) {
    if (!e.complete()) {
      complete = false;
      valid = std::min(valid, e.valid_order() + lift);
    }
    if (e.max_order() + lift > 4) {
      if (policy == Overflow::error) throw std::invalid_argument("order overflow: integral would exceed chaos order 4");
      complete = false;
    }
  }
  void apply(ChaosElement& out) const {
    if (!complete) out.clip(valid);
  }
};

}  // namespace

// ---------------------------------------------------------------- Wiener Skorokhod integrals

ChaosElement skorokhod_wiener(const FreeSlotField& u) {
  const GridPtr& g = u.grid();
  const std::size_t n = g->size();
  const Eigen::Index N = Eigen::Index(n);
  ChaosElement out(g);
  if (u.slots() == 1) {
    if (u.has(0)) out.add(vector_kernel(g, u.component(0).col(0)));
    if (u.has(1)) out.add(SymKernel::matrix(g, u.component(1).transpose()));
    if (u.has(2)) {
      const Eigen::MatrixXd& c = u.component(2);
      std::vector<double> raw(n * n * n);
      for (std::size_t a = 0; a < n * n; ++a)
        for (std::size_t x = 0; x < n; ++x) raw[a * n + x] = c(Eigen::Index(x), Eigen::Index(a));
      out.add(symmetrize(g, 3, raw));
    }
    if (u.has(3)) {
      const Eigen::MatrixXd& c = u.component(3);
      if (double(n) * double(n) * double(n) * double(n) > 6e7)
        throw std::length_error("skorokhod_wiener: grid too large for a dense order-4 result");
      SymKernel k(g, 4);
      auto d = k.data();
      const auto f = [&](std::size_t x, std::size_t a, std::size_t b, std::size_t cc) {
        std::array<std::size_t, 3> s{a, b, cc};
        std::sort(s.begin(), s.end());
        return c(Eigen::Index(x), Eigen::Index(sorted3(s[0], s[1], s[2])));
      };
      for (std::size_t l = 0; l < n; ++l)
        for (std::size_t kk = 0; kk <= l; ++kk)
          for (std::size_t j = 0; j <= kk; ++j)
            for (std::size_t i = 0; i <= j; ++i)
              d[sorted4(i, j, kk, l)] = 0.25 * (f(i, j, kk, l) + f(j, i, kk, l) + f(kk, i, j, l) + f(l, i, j, kk));
      out.add(k);
    }
    return out;
  }
  // two slots: row x*n + y
  if (u.has(0)) {
    const Eigen::Map<const Eigen::MatrixXd> m(u.component(0).data(), N, N);
    out.add(SymKernel::matrix(g, m));
  }
  if (u.has(1)) {
    const Eigen::MatrixXd& c = u.component(1);
    std::vector<double> raw(n * n * n);
    for (std::size_t xy = 0; xy < n * n; ++xy)
      for (std::size_t a = 0; a < n; ++a) raw[xy * n + a] = c(Eigen::Index(xy), Eigen::Index(a));
    out.add(symmetrize(g, 3, raw));
  }
  if (u.has(2)) {
    if (double(n) * double(n) * double(n) * double(n) > 6e7)
      throw std::length_error("skorokhod_wiener: grid too large for a dense order-4 result");
    const Eigen::MatrixXd& c = u.component(2);
    std::vector<double> raw(n * n * n * n);
    for (std::size_t xy = 0; xy < n * n; ++xy)
      for (std::size_t ab = 0; ab < n * n; ++ab) raw[xy * n * n + ab] = c(Eigen::Index(xy), Eigen::Index(ab));
    out.add(symmetrize(g, 4, raw));
  }
  if (u.has(3)) throw std::invalid_argument("order overflow: double integral would exceed chaos order 4");
  return out;
}

ChaosElement skorokhod_wiener(const ChaosProcess& u, double a, double b, Overflow policy) {
  const GridPtr& g = u.grid;
  const Grid& gr = *g;
  check_interval(gr, a, b);
  const Eigen::Index N = Eigen::Index(gr.size());
  ChaosElement out(g);
  Budget budget;
  Eigen::VectorXd v0 = Eigen::VectorXd::Zero(N);
  Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(N, N);
  bool has0 = false, has1 = false;
  std::vector<SymKernel> dense3;
  std::vector<Eigen::Index> dense3_cells;
  for (std::size_t x : time_cells(gr, a, b)) {
    const ChaosElement& e = u.at_cell(x);
    budget.member(e, 1, policy);
    const double rho = gr.overlap(x, a, b) / gr.width(x);
    const Eigen::Index X = Eigen::Index(x);
    Eigen::VectorXd ex = Eigen::VectorXd::Zero(N);
    ex(X) = rho;
    has0 = has0 || e.dense(0).has_value();
    has1 = has1 || e.dense(1).has_value();
    if (e.dense(0)) v0(X) += rho * e.dense(0)->data()[0];
    if (e.dense(1)) m1.row(X) += rho * e.dense(1)->vec().transpose();
    if (e.dense(2)) out.add_factored3(Eigen::MatrixXd(e.dense(2)->mat()), ex);
    const Factored3& f3 = e.factored3();
    for (std::size_t q = 0; q < f3.terms(); ++q) out.add_factored(f3.a(q), ex * f3.v(q).transpose());
    if (e.dense(3)) {
      dense3.push_back(*e.dense(3));
      dense3_cells.push_back(X);
    }
  }
  if (has0) out.add(vector_kernel(g, v0));
  if (has1) out.add(SymKernel::matrix(g, m1));
  if (!dense3.empty()) {
    Eigen::MatrixXd vecs = Eigen::MatrixXd::Zero(N, Eigen::Index(dense3.size()));
    for (std::size_t k = 0; k < dense3.size(); ++k) {
      const std::size_t x = std::size_t(dense3_cells[k]);
      vecs(dense3_cells[k], Eigen::Index(k)) = gr.overlap(x, a, b) / gr.width(x);
    }
    out.add(sym4_from_vec3(g, vecs, dense3));
  }
  budget.apply(out);
  return out;
}

// ---------------------------------------------------------------- fBm and Rosenblatt integrals

ChaosElement integral_fbm(Hurst h, const ChaosProcess& g, double a, double b, Overflow policy) {
  const GridPtr& gp = g.grid;
  const Grid& gr = *gp;
  check_interval(gr, a, b);
  const double cb = derived_constants(h).cSmallB;
  const Eigen::MatrixXd L = fbm_transfer(gr, h.value() - 0.5, a, b);
  const auto cells = time_cells(gr, a, b);
  const Eigen::Index N = Eigen::Index(gr.size());
  ChaosElement out(gp);
  Budget budget;
  Eigen::VectorXd v0 = Eigen::VectorXd::Zero(N);
  Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(N, N);
  bool has0 = false, has1 = false;
  std::vector<SymKernel> dense3;
  std::vector<Eigen::Index> dense3_cols;
  for (std::size_t p = 0; p < cells.size(); ++p) {
    const ChaosElement& e = g.at_cell(cells[p]);
    budget.member(e, 1, policy);
    const auto lp = L.col(Eigen::Index(p));
    has0 = has0 || e.dense(0).has_value();
    has1 = has1 || e.dense(1).has_value();
    if (e.dense(0)) v0 += e.dense(0)->data()[0] * lp;
    if (e.dense(1)) m1 += lp * e.dense(1)->vec().transpose();
    if (e.dense(2)) out.add_factored3(Eigen::MatrixXd(e.dense(2)->mat()), lp, cb);
    // Sym(l (x) Sym(A (x) u)) = Sym(A (x) sym(l u^T))
    const Factored3& f3 = e.factored3();
    for (std::size_t q = 0; q < f3.terms(); ++q) out.add_factored(f3.a(q), lp * f3.v(q).transpose(), cb);
    if (e.dense(3)) {
      dense3.push_back(*e.dense(3));
      dense3_cols.push_back(Eigen::Index(p));
    }
  }
  if (has0) out.add(vector_kernel(gp, cb * v0));
  if (has1) out.add(SymKernel::matrix(gp, cb * m1));
  if (!dense3.empty()) {
    Eigen::MatrixXd vecs(N, Eigen::Index(dense3.size()));
    for (std::size_t k = 0; k < dense3.size(); ++k) vecs.col(Eigen::Index(k)) = cb * L.col(dense3_cols[k]);
    out.add(sym4_from_vec3(gp, vecs, dense3));
  }
  budget.apply(out);
  return out;
}

namespace {

std::shared_ptr<const TransferTensor> transfer_for(const Grid& g, double alpha, double a, double b) {
  if (a == 0.0 && b == g.t_max()) return g.transfer(alpha);
  return std::make_shared<const TransferTensor>(g, alpha, a, b);
}

}  // namespace

ChaosElement integral_rosenblatt(Hurst h, const ChaosProcess& g, double a, double b, Overflow policy) {
  const GridPtr& gp = g.grid;
  const Grid& gr = *gp;
  check_interval(gr, a, b);
  const double cr = derived_constants(h).cSmallR;
  const auto tt = transfer_for(gr, 0.5 * h.value(), a, b);
  const std::size_t P = tt->time_cells();
  ChaosElement out(gp);
  Budget budget;
  std::vector<double> c0(P, 0.0);
  bool has0 = false;
  for (std::size_t p = 0; p < P; ++p) {
    const ChaosElement& e = g.at_cell(tt->cell(p));
    budget.member(e, 2, policy);
    has0 = has0 || e.dense(0).has_value();
    if (e.dense(0)) c0[p] = e.dense(0)->data()[0];
    if (!e.dense(1) && !e.dense(2)) continue;
    const Eigen::MatrixXd mp = tt->block(p);
    if (e.dense(1)) out.add_factored3(mp, e.dense(1)->vec(), cr);
    if (e.dense(2)) out.add_factored(mp, Eigen::MatrixXd(e.dense(2)->mat()), cr);
  }
  if (has0) out.add(SymKernel::matrix(gp, cr * tt->combine(c0)));
  budget.apply(out);
  return out;
}

ChaosProcess fbm_process(Hurst h, const GridPtr& g) {
  const Grid& gr = *g;
  const double beta = h.value() - 0.5, cb = derived_constants(h).cSmallB;
  const Eigen::MatrixXd L = fbm_transfer(gr, beta, 0.0, gr.t_max());
  const Eigen::MatrixXd Lh = fbm_transfer_half(gr, beta, 0.0, gr.t_max());
  std::vector<ChaosElement> v;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(L.rows());
  for (Eigen::Index p = 0; p < L.cols(); ++p) {
    v.push_back(ChaosElement::from_kernel(vector_kernel(g, cb * (acc + Lh.col(p)))));
    acc += L.col(p);
  }
  return ChaosProcess(g, std::move(v));
}

ChaosProcess rosenblatt_process(Hurst h, const GridPtr& g) {
  const Grid& gr = *g;
  const double cr = derived_constants(h).cSmallR;
  const auto tt = gr.transfer(0.5 * h.value());
  std::vector<ChaosElement> v;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(Eigen::Index(gr.size()), Eigen::Index(gr.size()));
  for (std::size_t p = 0; p < tt->time_cells(); ++p) {
    v.push_back(ChaosElement::from_kernel(SymKernel::matrix(g, cr * (acc + tt->half_block(p)))));
    acc += tt->block(p);
  }
  return ChaosProcess(g, std::move(v));
}

// ---------------------------------------------------------------- forward integrals

namespace {

double uniform_step(const Grid& g) {
  if (!g.zero_is_edge() || !(g.core_step() > 0.0))
    throw std::invalid_argument("forward integrals need uniform time cells starting at 0");
  return g.core_step();
}

std::size_t steps_of(const Grid& g, double epsilon) {
  const double d = uniform_step(g);
  const double m = std::round(epsilon / d);
  if (!(epsilon > 0.0) || m < 1.0 || std::abs(m * d - epsilon) > 1e-9 * epsilon)
    throw std::invalid_argument("epsilon must be a positive multiple of the time step");
  return std::size_t(m);
}

}  // namespace

double forward_integral_estimate(const Grid& g, std::span<const double> g_path, std::span<const double> h_path,
                                 double epsilon, std::size_t horizon) {
  const std::size_t m = steps_of(g, epsilon), P = g.time_count();
  if (g_path.size() != P || h_path.size() != P) throw std::invalid_argument("paths need one value per time cell");
  if (m >= P) throw std::invalid_argument("epsilon exceeds the time horizon");
  if (horizon == 0) horizon = P - m;
  if (horizon + m > P) throw std::invalid_argument("forward horizon plus epsilon exceeds the grid");
  std::vector<double> terms(horizon);
  for (std::size_t k = 0; k < horizon; ++k) terms[k] = g_path[k] * (h_path[k + m] - h_path[k]);
  return pairwise_sum(terms) / double(m);
}

Integrand parse_integrand(const std::string& s) {
  if (s == "deterministic") return Integrand::deterministic;
  if (s == "wiener" || s == "W") return Integrand::wiener;
  throw std::invalid_argument("unsupported integrand class: " + s);
}

std::string to_string(Integrand i) { return i == Integrand::deterministic ? "deterministic" : "wiener"; }

// ---------------------------------------------------------------- relationship reports

bool RelationshipReport::residual_vanishes(double k) const {
  if (rows.empty()) return false;
  const auto& r = rows.back().residual;
  return std::abs(r.mean) <= k * r.std_error;
}

bool RelationshipReport::residual_decreases(double k) const {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double slack = k * std::hypot(rows[i].residual_rms_se, rows[i - 1].residual_rms_se);
    if (rows[i].residual_rms > rows[i - 1].residual_rms + slack) return false;
  }
  return !rows.empty();
}

std::string RelationshipReport::to_csv() const {
  std::ostringstream os;
  os << "epsilon,forward_mean,forward_se,skorokhod_mean,corr1,corr2,residual,residual_se,residual_rms,"
        "residual_rms_se\n";
  for (const auto& r : rows)
    os << format_number(r.epsilon) << ',' << format_number(r.forward.mean) << ',' << format_number(r.forward.std_error)
       << ',' << format_number(r.skorokhod.mean) << ',' << format_number(r.corr1.mean) << ','
       << format_number(r.corr2.mean) << ',' << format_number(r.residual.mean) << ','
       << format_number(r.residual.std_error) << ',' << format_number(r.residual_rms) << ','
       << format_number(r.residual_rms_se) << '\n';
  return os.str();
}

namespace {

struct Ladder {
  double delta = 0.0;
  std::size_t P = 0, K = 0;
  std::vector<std::size_t> steps;
};

Ladder make_ladder(const Grid& g, const RelationshipConfig& cfg) {
  Ladder l;
  l.delta = uniform_step(g);
  l.P = g.time_count();
  if (cfg.eps_steps.empty()) throw std::invalid_argument("empty epsilon ladder");
  l.steps = cfg.eps_steps;
  const std::size_t mmax = *std::max_element(l.steps.begin(), l.steps.end());
  if (*std::min_element(l.steps.begin(), l.steps.end()) == 0) throw std::invalid_argument("epsilon must be positive");
  if (mmax >= l.P) throw std::invalid_argument("largest epsilon exceeds the time horizon");
  l.K = l.P - mmax;
  if (cfg.paths < 2) throw std::invalid_argument("relationship checks need at least two paths");
  return l;
}

// Kernel matrix of the time-cell averages of W (one column per time cell).
Eigen::MatrixXd wiener_kernels(const GridPtr& g) {
  const ChaosProcess w = wiener_process(g);
  Eigen::MatrixXd k(Eigen::Index(g->size()), Eigen::Index(w.size()));
  for (std::size_t p = 0; p < w.size(); ++p) k.col(Eigen::Index(p)) = w.values[p].dense(1)->vec();
  return k;
}

Eigen::MatrixXd process_kernels(const ChaosProcess& proc) {
  Eigen::MatrixXd k(Eigen::Index(proc.grid->size()), Eigen::Index(proc.size()));
  for (std::size_t p = 0; p < proc.size(); ++p) k.col(Eigen::Index(p)) = proc.values[p].dense(1)->vec();
  return k;
}

// Rows: forward per epsilon, Skorokhod, corr1, corr2.
RelationshipReport assemble(const Ladder& l, const std::vector<std::vector<double>>& v, std::uint64_t seed) {
  RelationshipReport rep;
  const std::size_t E = l.steps.size(), paths = v[0].size();
  const McEstimate sk = summarize(v[E], seed), c1 = summarize(v[E + 1], seed), c2 = summarize(v[E + 2], seed);
  for (std::size_t e = 0; e < E; ++e) {
    RelationshipRow row;
    row.epsilon = double(l.steps[e]) * l.delta;
    row.forward = summarize(v[e], seed);
    row.skorokhod = sk;
    row.corr1 = c1;
    row.corr2 = c2;
    std::vector<double> r(paths), r2(paths);
    for (std::size_t i = 0; i < paths; ++i) {
      r[i] = v[e][i] - (v[E][i] + v[E + 1][i] + v[E + 2][i]);
      r2[i] = r[i] * r[i];
    }
    row.residual = summarize(r, seed);
    const McEstimate ms = summarize(r2, seed);
    row.residual_rms = std::sqrt(ms.mean);
    row.residual_rms_se = row.residual_rms > 0.0 ? ms.std_error / (2.0 * row.residual_rms) : 0.0;
    rep.rows.push_back(row);
  }
  return rep;
}

// Forward sums for all epsilons from per-cell integrand values gv (P x b) and integrator values hv.
void forward_rows(const Ladder& l, const Eigen::MatrixXd& gv, const Eigen::MatrixXd& hv, Eigen::MatrixXd& out) {
  const Eigen::Index K = Eigen::Index(l.K);
  for (std::size_t e = 0; e < l.steps.size(); ++e) {
    const Eigen::Index m = Eigen::Index(l.steps[e]);
    const Eigen::MatrixXd diff = hv.middleRows(m, K) - hv.topRows(K);
    out.row(Eigen::Index(e)) = (gv.topRows(K).cwiseProduct(diff)).colwise().sum() / double(m);
  }
}

}  // namespace

namespace {

BlockFunctional fbm_body(Hurst h, const GridPtr& g, const RelationshipConfig& cfg, const Ladder& l) {
  const Grid& gr = *g;
  const ConstantSet cs = derived_constants(h);
  const double beta = h.value() - 0.5, T = double(l.K) * l.delta;
  const Eigen::Index K = Eigen::Index(l.K), E = Eigen::Index(l.steps.size());
  const Eigen::MatrixXd Kb = process_kernels(fbm_process(h, g));
  const Eigen::MatrixXd L = cs.cSmallB * fbm_transfer(gr, beta, 0.0, gr.t_max()).leftCols(K);
  const Eigen::VectorXd w = weights_of(gr);
  const bool det = cfg.integrand == Integrand::deterministic;

  Eigen::VectorXd gdet, sdet;
  Eigen::MatrixXd Kw;
  double corr = 0.0, sk_const = 0.0;
  if (det) {
    const auto avg = cell_averages(gr, cfg.g);
    gdet = Eigen::Map<const Eigen::VectorXd>(avg.data(), Eigen::Index(avg.size()));
    sdet = L * gdet.head(K);
  } else {
    Kw = wiener_kernels(g);
    // delta(sum_p L_p (x) k_p) = sum_p I1(L_p) I1(k_p) - <L_p, k_p>
    sk_const = (L.cwiseProduct(Kw.leftCols(K)).transpose() * w).sum();
    // c_B int_0^T (nabla^{beta} W_s)(s) ds with (nabla W_s)(s) = s^beta / Gamma(beta + 1)
    corr = cs.cSmallB * std::pow(T, beta + 1.0) / gamma_fn(beta + 2.0);
  }

  return [=](const Eigen::MatrixXd& xi) {
    const Eigen::Index b = xi.cols();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(E + 3, b);
    const Eigen::MatrixXd bv = Kb.transpose() * xi;
    if (det) {
      const Eigen::MatrixXd gv = gdet.replicate(1, b);
      forward_rows(l, gv, bv, out);
      out.row(E) = sdet.transpose() * xi;
    } else {
      const Eigen::MatrixXd wv = Kw.transpose() * xi;
      forward_rows(l, wv, bv, out);
      const Eigen::MatrixXd lx = L.transpose() * xi;
      out.row(E) = lx.cwiseProduct(wv.topRows(K)).colwise().sum().array() - sk_const;
      out.row(E + 1).setConstant(corr);
    }
    return out;
  };
}

BlockFunctional rosenblatt_body(Hurst h, const GridPtr& g, const RelationshipConfig& cfg, const Ladder& l) {
  const Grid& gr = *g;
  const ConstantSet cs = derived_constants(h);
  const double T = double(l.K) * l.delta;
  const Eigen::Index K = Eigen::Index(l.K), E = Eigen::Index(l.steps.size()), P = Eigen::Index(l.P);
  const auto tt = gr.transfer(0.5 * h.value());
  const Eigen::Index Q = Eigen::Index(tt->nodes_per_cell());
  const Eigen::MatrixXd F = tt->factors();
  const Eigen::VectorXd w = weights_of(gr);
  // Wick diagonal of each node: I2(M_p) = sum_m omega_m (y_m^2 - d_m)
  const Eigen::VectorXd dm = (F.array().square().colwise() * w.array()).colwise().sum().transpose();
  const Eigen::VectorXd om = tt->weights();
  const Eigen::VectorXd hom = tt->half_weights();
  const bool det = cfg.integrand == Integrand::deterministic;

  Eigen::VectorXd gdet;
  Eigen::MatrixXd Kw;
  Eigen::VectorXd zeta, c1vec;
  if (det) {
    const auto avg = cell_averages(gr, cfg.g);
    gdet = Eigen::Map<const Eigen::VectorXd>(avg.data(), Eigen::Index(avg.size()));
  } else {
    Kw = wiener_kernels(g);
    // I1(M_p W k_p) = sum_m omega_m z_m y_m with z_m = F_m^T (w o k_p)
    zeta = Eigen::VectorXd::Zero(F.cols());
    for (Eigen::Index p = 0; p < K; ++p) {
      const Eigen::VectorXd wk = w.cwiseProduct(Kw.col(p));
      for (Eigen::Index m = 0; m < Q; ++m) {
        const Eigen::Index c = p * Q + m;
        zeta(c) = om(c) * F.col(c).dot(wk);
      }
    }
    // 2 c_BR int (nabla^{H/2} W_s)(s) dB^{(H+1)/2}_s with (nabla W_s)(s) = s^{H/2} / Gamma(1 + H/2)
    const double a = 0.5 * h.value();
    const double ga = gamma_fn(1.0 + a);
    const ChaosProcess phi = deterministic_process(g, [&](double s) { return std::pow(s, a) / ga; });
    const ChaosElement c1 = integral_fbm(h.companion(), phi, 0.0, T);
    c1vec = 2.0 * cs.cBR * Eigen::VectorXd(c1.dense(1)->vec());
  }

  return [=](const Eigen::MatrixXd& xi) {
    const Eigen::Index b = xi.cols();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(E + 3, b);
    const Eigen::MatrixXd y = F.transpose() * xi;
    const Eigen::MatrixXd z = y.array().square().colwise() - dm.array();
    Eigen::MatrixXd full(P, b), half(P, b);
    for (Eigen::Index p = 0; p < P; ++p) {
      full.row(p) = om.segment(p * Q, Q).transpose() * z.middleRows(p * Q, Q);
      half.row(p) = hom.segment(p * Q, Q).transpose() * z.middleRows(p * Q, Q);
    }
    Eigen::MatrixXd rv(P, b);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(b);
    for (Eigen::Index p = 0; p < P; ++p) {
      rv.row(p) = cs.cSmallR * (acc + half.row(p));
      acc += full.row(p);
    }
    if (det) {
      forward_rows(l, gdet.replicate(1, b), rv, out);
      out.row(E) = cs.cSmallR * (gdet.head(K).transpose() * full.topRows(K));
    } else {
      const Eigen::MatrixXd wv = Kw.transpose() * xi;
      forward_rows(l, wv, rv, out);
      out.row(E) = cs.cSmallR * (full.topRows(K).cwiseProduct(wv.topRows(K)).colwise().sum() -
                                 2.0 * zeta.transpose() * y);
      out.row(E + 1) = c1vec.transpose() * xi;
    }
    return out;
  };
}

RelationshipReport run_relationship(Integrator which, Hurst h, const GridPtr& g, const RelationshipConfig& cfg) {
  const RelationshipSampler sampler(which, h, g, cfg);
  const BlockFunctional body = [&sampler](const Eigen::MatrixXd& xi) { return sampler(xi); };
  const auto v = sample_blocks(g, body, sampler.outputs(), cfg.paths, cfg.seed, 128, cfg.workers);
  Ladder l;
  l.delta = sampler.delta();
  l.steps = sampler.steps();
  RelationshipReport rep = assemble(l, v, cfg.seed);
  rep.integrator = which == Integrator::fbm ? "fbm" : "rosenblatt";
  rep.integrand = to_string(cfg.integrand);
  rep.hurst = h.value();
  rep.horizon = sampler.horizon();
  return rep;
}

}  // namespace

RelationshipSampler::RelationshipSampler(Integrator which, Hurst h, GridPtr g, const RelationshipConfig& cfg) {
  const Ladder l = make_ladder(*g, cfg);
  steps_ = l.steps;
  delta_ = l.delta;
  horizon_ = double(l.K) * l.delta;
  body_ = which == Integrator::fbm ? fbm_body(h, g, cfg, l) : rosenblatt_body(h, g, cfg, l);
}

RelationshipReport relationship_fbm(Hurst h, const GridPtr& g, const RelationshipConfig& cfg) {
  return run_relationship(Integrator::fbm, h, g, cfg);
}

RelationshipReport relationship_rosenblatt(Hurst h, const GridPtr& g, const RelationshipConfig& cfg) {
  return run_relationship(Integrator::rosenblatt, h, g, cfg);
}

// ---------------------------------------------------------------- duality

double DualityResult::gap() const { return std::abs(lhs - rhs); }

double DualityResult::relative_gap() const { return scale > 0.0 ? gap() / scale : gap(); }

DualityResult duality_gap(Hurst h, DualityKind which, const ChaosProcess& g, const ChaosElement& G, double a,
                          double b) {
  require_same_grid(g.grid, G.grid());
  const Grid& gr = *g.grid;
  check_interval(gr, a, b);
  const ConstantSet cs = derived_constants(h);
  DualityResult r;
  std::vector<double> terms;
  if (which == DualityKind::fbm) {
    const ChaosElement I = integral_fbm(h, g, a, b);
    r.lhs = expectation_inner(G, I);
    r.scale = std::sqrt(std::max(0.0, expectation_inner(G, G)) * std::max(0.0, expectation_inner(I, I)));
    const double beta = h.value() - 0.5;
    for (std::size_t x : time_cells(gr, a, b))
      terms.push_back(gr.overlap(x, a, b) * expectation_inner(nabla_at(beta, G, x), g.at_cell(x)));
    r.rhs = cs.cSmallB * pairwise_sum(terms);
  } else {
    const ChaosElement I = integral_rosenblatt(h, g, a, b);
    r.lhs = expectation_inner(G, I);
    r.scale = std::sqrt(std::max(0.0, expectation_inner(G, G)) * std::max(0.0, expectation_inner(I, I)));
    const auto tt = transfer_for(gr, 0.5 * h.value(), a, b);
    for (std::size_t p = 0; p < tt->time_cells(); ++p)
      terms.push_back(tt->tau(p) * expectation_inner(nabla2_diagonal_at(*tt, G, p), g.at_cell(tt->cell(p))));
    r.rhs = cs.cSmallR * pairwise_sum(terms);
  }
  return r;
}

}  // namespace rosen
