#include "rosen/chaos.hpp"
#include "rosen/integrators.hpp"
#include "rosen/kernels.hpp"
#include "rosen/mc.hpp"
#include "rosen/quadrature.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace rosen;

namespace {

GridPtr graded(std::size_t n, std::size_t tail = 0) {
  GridSpec s;
  s.t_min = -4;
  s.t_max = 1;
  s.n = n;
  s.layout = Layout::graded;
  s.tail_cells = tail;
  s.tail_factor = tail ? 1e6 : 1e20;
  return make_grid(s);
}

Eigen::VectorXd randvec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd v{Eigen::Index(n)};
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = nd(rng);
  return v;
}

ChaosElement random_element(const GridPtr& g, int top, std::mt19937_64& rng) {
  ChaosElement e(g);
  const std::size_t n = g->size();
  std::normal_distribution<double> nd;
  e.add(SymKernel::scalar(g, nd(rng)));
  if (top >= 1) {
    const Eigen::VectorXd v = randvec(n, rng);
    e.add(SymKernel::vector(g, std::vector<double>(v.data(), v.data() + v.size())));
  }
  if (top >= 2) {
    Eigen::MatrixXd m{Eigen::Index(n), Eigen::Index(n)};
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    e.add(SymKernel::matrix(g, m));
  }
  if (top >= 3) {
    SymKernel k(g, 3);
    for (auto& x : k.data()) x = nd(rng);
    e.add(k);
  }
  return e;
}

ChaosProcess random_process(const GridPtr& g, int top, std::mt19937_64& rng) {
  std::vector<ChaosElement> v;
  for (std::size_t p = 0; p < g->time_count(); ++p) v.push_back(random_element(g, top, rng));
  return ChaosProcess(g, std::move(v));
}

double dense_norm2(const ChaosElement& e) {
  double s = 0.0, f = 1.0;
  for (int k = 0; k <= 4; ++k) {
    if (k > 0) f *= k;
    if (e.has(k)) s += f * weighted_norm2(e.kernel(k));
  }
  return s;
}

double rel_gap(const ChaosElement& a, const ChaosElement& b) {
  return std::sqrt(dense_norm2(a - b) / dense_norm2(b));
}

}  // namespace

TEST_CASE("skorokhod_wiener: indicator gives W_t and results have zero mean") {
  auto g = graded(16);
  const double t = 0.5;
  const auto one = deterministic_process(g, [](double) { return 1.0; });
  const auto w = skorokhod_wiener(one, 0.0, t);
  CHECK(!w.has(0));
  CHECK(w.max_order() == 1);
  const auto k = w.dense(1)->vec();
  for (std::size_t i = 0; i < g->size(); ++i)
    CHECK(k(Eigen::Index(i)) == doctest::Approx(g->overlap(i, 0.0, t) / g->width(i)).epsilon(1e-14));
  std::mt19937_64 rng(3);
  const auto u = random_process(g, 2, rng);
  const auto d = skorokhod_wiener(u, 0.0, 1.0);
  CHECK(d.mean() == 0.0);
  CHECK(d.max_order() == 3);
}

TEST_CASE("skorokhod_wiener: duality with the Malliavin derivative") {
  auto g = graded(8);
  std::mt19937_64 rng(5);
  const auto w = g->widths();
  for (int trial = 0; trial < 20; ++trial) {
    const int top = trial % 4;
    const auto G = random_element(g, 4 - (trial % 2), rng);
    // one-slot field of base order `top` (<= 3)
    FreeSlotField u(g, 1);
    std::normal_distribution<double> nd;
    for (int k = 0; k <= std::min(top, 3); ++k) {
      auto& c = u.ensure(k);
      for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = nd(rng);
      if (k == 2) {  // keep each base kernel symmetric
        const Eigen::Index n = Eigen::Index(g->size());
        for (Eigen::Index x = 0; x < c.rows(); ++x) {
          Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(Eigen::RowVectorXd(c.row(x)).data(), n, n);
          m = (0.5 * (m + m.transpose())).eval();
          c.row(x) = Eigen::Map<const Eigen::RowVectorXd>(m.data(), n * n);
        }
      }
    }
    const auto d = skorokhod_wiener(u);
    const double lhs = expectation_inner(G, d);
    const auto DG = malliavin_derivative(G, 1);
    double rhs = 0.0, scale = 0.0;
    for (std::size_t x = 0; x < g->size(); ++x) {
      rhs += w[x] * expectation_inner(DG.at(x), u.at(x));
      scale += w[x] * std::sqrt(expectation_inner(DG.at(x), DG.at(x)) * expectation_inner(u.at(x), u.at(x)));
    }
    CHECK(std::abs(lhs - rhs) <= 1e-10 * (1.0 + scale));
  }
}

TEST_CASE("skorokhod_wiener: double integral is the adjoint of D^2") {
  auto g = graded(6);
  std::mt19937_64 rng(9);
  const auto w = g->widths();
  const std::size_t n = g->size();
  for (int trial = 0; trial < 6; ++trial) {
    const auto G = random_element(g, 4, rng);
    FreeSlotField u(g, 2);
    std::normal_distribution<double> nd;
    for (int k = 0; k <= trial % 3; ++k) {
      auto& c = u.ensure(k);
      for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = nd(rng);
    }
    const auto d = skorokhod_wiener(u);
    const auto D2 = malliavin_derivative(G, 2);
    double rhs = 0.0;
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y) rhs += w[x] * w[y] * expectation_inner(D2.at(x, y), u.at(x, y));
    // D^2 G is symmetric in (x, y), so only the symmetric part of u contributes: both sides agree
    CHECK(expectation_inner(G, d) == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("integral_fbm: structured assembly equals c_B delta(I_- g)") {
  auto g = graded(8, 2);
  std::mt19937_64 rng(11);
  const Hurst h(0.7);
  const auto proc = random_process(g, 2, rng);
  const double a = 0.25, b = 1.0;
  const auto I = integral_fbm(h, proc, a, b);
  const Eigen::MatrixXd L = fbm_transfer(*g, h.value() - 0.5, a, b);
  const auto cells = time_cells(*g, a, b);
  FreeSlotField u(g, 1);
  for (int k = 0; k <= 2; ++k) {
    auto& c = u.ensure(k);
    for (std::size_t p = 0; p < cells.size(); ++p) {
      const SymKernel ker = proc.at_cell(cells[p]).kernel(k);
      const Eigen::Map<const Eigen::RowVectorXd> row(ker.data().data(), Eigen::Index(ker.storage_size()));
      for (Eigen::Index x = 0; x < L.rows(); ++x) c.row(x) += L(x, Eigen::Index(p)) * row;
    }
  }
  const auto ref = derived_constants(h).cSmallB * skorokhod_wiener(u);
  CHECK(rel_gap(I, ref) < 1e-12);
}

TEST_CASE("integral_rosenblatt: structured assembly equals c_R delta^2(sum_p g_p M_p)") {
  auto g = graded(8, 2);
  std::mt19937_64 rng(13);
  const Hurst h(0.8);
  const auto proc = random_process(g, 2, rng);
  const double a = 0.0, b = 0.75;
  const auto I = integral_rosenblatt(h, proc, a, b);
  const TransferTensor tt(*g, 0.5 * h.value(), a, b);
  const std::size_t n = g->size();
  FreeSlotField u(g, 2);
  for (int k = 0; k <= 2; ++k) {
    auto& c = u.ensure(k);
    for (std::size_t p = 0; p < tt.time_cells(); ++p) {
      const SymKernel ker = proc.at_cell(tt.cell(p)).kernel(k);
      const Eigen::Map<const Eigen::RowVectorXd> row(ker.data().data(), Eigen::Index(ker.storage_size()));
      const Eigen::MatrixXd M = tt.block(p);
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t y = 0; y < n; ++y)
          c.row(Eigen::Index(x * n + y)) += M(Eigen::Index(x), Eigen::Index(y)) * row;
    }
  }
  const auto ref = derived_constants(h).cSmallR * skorokhod_wiener(u);
  CHECK(rel_gap(I, ref) < 1e-12);
  // order overflow is an error unless clipping is requested
  const auto hi = random_process(g, 3, rng);
  CHECK_THROWS_AS(integral_rosenblatt(h, hi, a, b), std::invalid_argument);
  const auto clipped = integral_rosenblatt(h, hi, a, b, Overflow::clip);
  CHECK(!clipped.complete());
  CHECK(clipped.valid_order() == 4);
}

TEST_CASE("integral_fbm: indicator reproduces the fBm kernel; variance of int s dB") {
  GridSpec s;
  s.t_min = -20;
  s.t_max = 1;
  s.n = 512;
  s.layout = Layout::graded;
  s.tail_cells = 128;
  s.tail_factor = 1e24;
  auto g = make_grid(s);
  for (double hv : {0.6, 0.75, 0.9}) {
    const Hurst h(hv);
    const double t = 0.75;
    const auto one = deterministic_process(g, [](double) { return 1.0; });
    const auto I = integral_fbm(h, one, 0.0, t);
    const GridFn1 ref = fbm_kernel(h, t, g);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double d = I.dense(1)->vec()(Eigen::Index(i)) - ref[i];
      num += g->width(i) * d * d;
      den += g->width(i) * ref[i] * ref[i];
    }
    CHECK(std::sqrt(num / den) < 0.01);
    // E (int_0^1 s dB_s)^2 = H(2H-1) int int s r |s-r|^{2H-2} = 1 / (2H + 2)
    const auto lin = deterministic_process(g, [](double u) { return u; });
    const auto J = integral_fbm(h, lin, 0.0, 1.0);
    CHECK(variance(J) == doctest::Approx(1.0 / (2.0 * hv + 2.0)).epsilon(0.02));
  }
}

TEST_CASE("integral_rosenblatt: indicator reproduces the Rosenblatt kernel") {
  auto g = graded(48, 12);
  const Hurst h(0.75);
  const double t = 0.5;
  const auto one = deterministic_process(g, [](double) { return 1.0; });
  const auto I = integral_rosenblatt(h, one, 0.0, t);
  const SymKernel ref = rosenblatt_kernel(h, t, g);
  SymKernel diff = I.kernel(2);
  diff += (-1.0) * ref;
  CHECK(std::sqrt(weighted_norm2(diff) / weighted_norm2(ref)) < 0.02);
  CHECK(I.mean() == 0.0);
}

TEST_CASE("integrals are linear") {
  auto g = graded(12, 3);
  std::mt19937_64 rng(21);
  const Hurst h(0.65);
  const auto p1 = random_process(g, 1, rng), p2 = random_process(g, 1, rng);
  std::vector<ChaosElement> sum;
  for (std::size_t i = 0; i < p1.size(); ++i) sum.push_back(2.0 * p1.values[i] + (-3.0) * p2.values[i]);
  const ChaosProcess ps(g, sum);
  const auto lf = 2.0 * integral_fbm(h, p1, 0, 1) + (-3.0) * integral_fbm(h, p2, 0, 1);
  CHECK(rel_gap(integral_fbm(h, ps, 0, 1), lf) < 1e-12);
  const auto lr = 2.0 * integral_rosenblatt(h, p1, 0, 1) + (-3.0) * integral_rosenblatt(h, p2, 0, 1);
  CHECK(rel_gap(integral_rosenblatt(h, ps, 0, 1), lr) < 1e-12);
  const auto zero = deterministic_process(g, [](double) { return 0.0; });
  CHECK(dense_norm2(integral_fbm(h, zero, 0, 1)) == 0.0);
}

TEST_CASE("processes are time averages of the kernels") {
  auto g = graded(16, 4);
  const Hurst h(0.7);
  const auto B = fbm_process(h, g);
  const auto R = rosenblatt_process(h, g);
  const quad::Rule& r = quad::gauss_legendre(48);
  for (std::size_t p : {std::size_t(0), std::size_t(3), B.size() - 1}) {
    const std::size_t cell = g->first_time() + p;
    std::vector<double> avg(g->size(), 0.0);
    SymKernel ravg(g, 2);
    for (std::size_t m = 0; m < r.x.size(); ++m) {
      const double t = g->left(cell) + g->width(cell) * r.x[m];
      const GridFn1 k = fbm_kernel(h, t, g);
      for (std::size_t i = 0; i < g->size(); ++i) avg[i] += r.w[m] * k[i];
      ravg += r.w[m] * rosenblatt_kernel(h, t, g);
    }
    const auto v = B.values[p].dense(1)->vec();
    for (std::size_t i = 0; i < g->size(); ++i) CHECK(v(Eigen::Index(i)) == doctest::Approx(avg[i]).epsilon(1e-4));
    SymKernel diff = R.values[p].kernel(2);
    diff += (-1.0) * ravg;
    CHECK(std::sqrt(weighted_norm2(diff) / weighted_norm2(ravg)) < 0.02);
  }
}

TEST_CASE("forward_integral_estimate") {
  auto g = graded(64);
  const std::size_t P = g->time_count();
  const double d = g->core_step();
  std::vector<double> one(P, 1.0), lin(P);
  for (std::size_t k = 0; k < P; ++k) lin[k] = 3.0 * (double(k) + 0.5) * d;
  const std::size_t m = 4;
  CHECK(forward_integral_estimate(*g, one, lin, m * d) == doctest::Approx(3.0 * double(P - m) * d).epsilon(1e-13));
  CHECK_THROWS_AS(forward_integral_estimate(*g, one, lin, 1.5 * d), std::invalid_argument);
  CHECK_THROWS_AS(forward_integral_estimate(*g, one, lin, double(P) * d), std::invalid_argument);
  // telescoping: (1/m) (sum of the last m values - sum of the first m)
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  std::vector<double> h(P);
  for (auto& x : h) x = nd(rng);
  double tele = 0.0;
  for (std::size_t k = 0; k < m; ++k) tele += h[P - m + k] - h[k];
  CHECK(forward_integral_estimate(*g, one, h, m * d) == doctest::Approx(tele / m).epsilon(1e-12));
}

TEST_CASE("relationship sampler rows match chaos evaluation path by path") {
  auto g = graded(32, 8);
  const Hurst h(0.75);
  const std::size_t paths = 5;
  for (Integrand in : {Integrand::deterministic, Integrand::wiener}) {
    RelationshipConfig cfg;
    cfg.integrand = in;
    cfg.eps_steps = {4, 2};
    cfg.g = [](double s) { return std::cos(2.0 * s); };
    for (Integrator which : {Integrator::fbm, Integrator::rosenblatt}) {
      const RelationshipSampler sampler(which, h, g, cfg);
      const double T = sampler.horizon();
      const ChaosProcess gp = in == Integrand::wiener ? wiener_process(g) : deterministic_process(g, cfg.g);
      const ChaosProcess hp = which == Integrator::fbm ? fbm_process(h, g) : rosenblatt_process(h, g);
      const ChaosElement sk =
          which == Integrator::fbm ? integral_fbm(h, gp, 0.0, T) : integral_rosenblatt(h, gp, 0.0, T);
      Eigen::MatrixXd xi(Eigen::Index(g->size()), Eigen::Index(paths));
      for (std::size_t j = 0; j < paths; ++j) {
        const auto w = sample_noise(g, 99, j);
        xi.col(Eigen::Index(j)) = Eigen::Map<const Eigen::VectorXd>(w.increments.data(), xi.rows());
      }
      const Eigen::MatrixXd rows = sampler(xi);
      const Evaluator ev(sk);
      for (std::size_t j = 0; j < paths; ++j) {
        const auto w = sample_noise(g, 99, j);
        std::vector<double> gv, hv;
        for (std::size_t p = 0; p < gp.size(); ++p) {
          gv.push_back(evaluate(gp.values[p], w));
          hv.push_back(evaluate(hp.values[p], w));
        }
        const std::size_t K = g->time_count() - 4;
        for (std::size_t e = 0; e < 2; ++e) {
          const double eps = double(cfg.eps_steps[e]) * sampler.delta();
          CHECK(rows(Eigen::Index(e), Eigen::Index(j)) ==
                doctest::Approx(forward_integral_estimate(*g, gv, hv, eps, K)).epsilon(1e-9));
        }
        CHECK(rows(2, Eigen::Index(j)) == doctest::Approx(ev(w)).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("relationship: deterministic integrands have no correction and a vanishing residual") {
  auto g = graded(64, 16);
  RelationshipConfig cfg;
  cfg.paths = 2000;
  cfg.seed = 5;
  const Hurst h(0.75);
  for (const auto& rep : {relationship_fbm(h, g, cfg), relationship_rosenblatt(h, g, cfg)}) {
    REQUIRE(rep.rows.size() == 4);
    for (const auto& r : rep.rows) {
      CHECK(r.corr1.mean == 0.0);
      CHECK(r.corr2.mean == 0.0);
      CHECK(std::abs(r.residual.mean) <= 4.0 * r.residual.std_error);
    }
    CHECK(rep.residual_decreases(2.0));
    CHECK(rep.to_csv().rfind("epsilon,forward_mean,forward_se,skorokhod_mean,corr1,corr2,residual,residual_se", 0) ==
          0);
  }
}

TEST_CASE("duality lemma on random finite-chaos inputs") {
  auto g = graded(10, 3);
  std::mt19937_64 rng(31);
  const Hurst h(0.7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto G = random_element(g, 3, rng);
    const auto gp = random_process(g, 1, rng);
    const auto f = duality_gap(h, DualityKind::fbm, gp, G, 0.0, 1.0);
    CHECK(f.relative_gap() < 1e-10);
    const auto r = duality_gap(h, DualityKind::rosenblatt, gp, G, 0.0, 1.0);
    CHECK(r.relative_gap() < 1e-10);
  }
  const auto c = duality_gap(h, DualityKind::fbm, random_process(g, 1, rng), ChaosElement::constant(g, 2.0), 0, 1);
  CHECK(c.lhs == 0.0);
  CHECK(c.rhs == 0.0);
}
