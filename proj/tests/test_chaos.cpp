#include "rosen/chaos.hpp"
#include "rosen/kernels.hpp"
#include "rosen/sym_kernel.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace rosen;

namespace {

GridPtr small_grid(std::size_t n = 12) {
  GridSpec s;
  s.t_min = -2;
  s.t_max = 1;
  s.n = n;
  s.layout = Layout::graded;
  s.tail_cells = 3;
  s.tail_factor = 10;
  return make_grid(s);
}

SymKernel random_kernel(const GridPtr& g, int order, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  SymKernel k(g, order);
  for (auto& v : k.data()) v = nd(rng);
  if (order == 2) k = SymKernel::matrix(g, k.mat());
  return k;
}

NoiseSample random_noise(const GridPtr& g, std::mt19937_64& rng) {
  NoiseSample w{g, std::vector<double>(g->size())};
  std::normal_distribution<double> nd;
  for (std::size_t i = 0; i < g->size(); ++i) w.increments[i] = nd(rng) * std::sqrt(g->width(i));
  return w;
}

Eigen::MatrixXd random_sym(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m{Eigen::Index(n), Eigen::Index(n)};
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return 0.5 * (m + m.transpose());
}

ChaosElement random_element(const GridPtr& g, int top, std::mt19937_64& rng) {
  ChaosElement e(g);
  for (int k = 0; k <= top; ++k) e.add(random_kernel(g, k, rng));
  return e;
}

// E[F^2] from materialized kernels, free of cancellation between representations.
double dense_norm2(const ChaosElement& e) {
  double s = 0.0, f = 1.0;
  for (int k = 0; k <= 4; ++k) {
    if (k > 0) f *= k;
    if (e.has(k)) s += f * weighted_norm2(e.kernel(k));
  }
  return s;
}

}  // namespace

TEST_CASE("symmetrize") {
  auto g = make_grid(-1, 1, 4);
  std::vector<double> raw(16, 0.0);
  raw[1 * 4 + 2] = 1.0;
  const auto s = symmetrize(g, 2, raw);
  CHECK(s.mat()(1, 2) == doctest::Approx(0.5));
  CHECK(s.mat()(2, 1) == doctest::Approx(0.5));
  const auto full = s.full();
  const auto s2 = symmetrize(g, 2, full);
  for (std::size_t i = 0; i < 16; ++i) CHECK(s2.full()[i] == doctest::Approx(full[i]));
}

TEST_CASE("evaluate basics") {
  auto g = small_grid();
  std::mt19937_64 rng(3);
  const auto w = random_noise(g, rng);
  CHECK(evaluate(ChaosElement::constant(g, 2.5), w) == 2.5);
  const auto wp = wiener_process(g);
  // the last time member is the average of W over the last cell; a step kernel reproduces sums
  std::vector<double> ind(g->size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = g->first_time(); i < g->size(); ++i) {
    ind[i] = 1.0;
    sum += w.increments[i];
  }
  CHECK(evaluate(ChaosElement::from_kernel(SymKernel::vector(g, ind)), w) == doctest::Approx(sum));
}

TEST_CASE("product matches pathwise multiplication") {
  auto g = small_grid(10);
  std::mt19937_64 rng(11);
  for (int ka = 0; ka <= 2; ++ka)
    for (int kb = 0; kb <= 2; ++kb) {
      const auto a = random_element(g, ka, rng), b = random_element(g, kb, rng);
      const auto p = product(a, b);
      for (int s = 0; s < 5; ++s) {
        const auto w = random_noise(g, rng);
        const double ref = evaluate(a, w) * evaluate(b, w);
        CHECK(evaluate(p, w) == doctest::Approx(ref).epsilon(1e-10));
      }
    }
  // orders 1 x 3 and the factored order-4 part times orders 0..2 within budget
  const ChaosElement a1 = ChaosElement::from_kernel(random_kernel(g, 1, rng));
  const ChaosElement a3 = ChaosElement::from_kernel(random_kernel(g, 3, rng));
  const auto p13 = product(a1, a3);
  CHECK(p13.complete());
  for (int s = 0; s < 3; ++s) {
    const auto w = random_noise(g, rng);
    CHECK(evaluate(p13, w) == doctest::Approx(evaluate(a1, w) * evaluate(a3, w)).epsilon(1e-10));
  }
}

TEST_CASE("square of a first-order integral") {
  auto g = small_grid();
  std::vector<double> f(g->size());
  double norm = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] = std::cos(double(i));
    norm += g->width(i) * f[i] * f[i];
  }
  for (auto& v : f) v /= std::sqrt(norm);
  const auto e = ChaosElement::from_kernel(SymKernel::vector(g, f));
  const auto sq = product(e, e);
  CHECK(sq.mean() == doctest::Approx(1.0));
  std::mt19937_64 rng(5);
  for (int s = 0; s < 1000; ++s) {
    const auto w = random_noise(g, rng);
    const double x = evaluate(e, w);
    CHECK(std::abs(evaluate(sq, w) - x * x) < 1e-10 * (1 + x * x));
  }
}

TEST_CASE("factored order-4 norms and evaluation") {
  auto g = small_grid(8);
  const std::size_t n = g->size();
  std::mt19937_64 rng(21);
  Factored4 f(n);
  for (int q = 0; q < 3; ++q) f.add(random_sym(n, rng), random_sym(n, rng), 0.7 + q);
  const auto dense = f.materialize(g);
  const auto w = g->widths();
  CHECK(factored_norm2(f, w) == doctest::Approx(weighted_norm2(dense)).epsilon(1e-11));
  Factored4 h(n);
  h.add(random_sym(n, rng), random_sym(n, rng));
  CHECK(factored_inner(f, h, w) == doctest::Approx(weighted_inner(dense, h.materialize(g))).epsilon(1e-10));

  ChaosElement ef(g), ed(g);
  ef.add_factored(f);
  ed.add(dense);
  for (int s = 0; s < 3; ++s) {
    const auto ws = random_noise(g, rng);
    CHECK(evaluate(ef, ws) == doctest::Approx(evaluate(ed, ws)).epsilon(1e-10));
  }
  // I_2(A) I_2(B) through the factored path against the pathwise product
  const auto A = ChaosElement::from_kernel(SymKernel::matrix(g, random_sym(n, rng)));
  const auto B = ChaosElement::from_kernel(SymKernel::matrix(g, random_sym(n, rng)));
  const auto AB = product(A, B);
  CHECK(AB.factored().terms() == 1);
  for (int s = 0; s < 3; ++s) {
    const auto ws = random_noise(g, rng);
    CHECK(evaluate(AB, ws) == doctest::Approx(evaluate(A, ws) * evaluate(B, ws)).epsilon(1e-10));
  }
  // clipped products: factored x first / second order, checked order by order against dense
  const auto v = ChaosElement::from_kernel(random_kernel(g, 1, rng));
  const auto pf = product(v, ef, 3), pd = product(v, ed, 3);
  for (int k = 0; k <= 3; ++k)
    if (pd.has(k)) CHECK(weighted_norm2(pf.kernel(k) + (-1.0) * pd.kernel(k)) < 1e-20 * (1 + weighted_norm2(pd.kernel(k))));
  const auto pf2 = product(A, ef, 2), pd2 = product(A, ed, 2);
  for (int k = 0; k <= 2; ++k)
    if (pd2.has(k))
      CHECK(weighted_norm2(pf2.kernel(k) + (-1.0) * pd2.kernel(k)) < 1e-20 * (1 + weighted_norm2(pd2.kernel(k))));
  CHECK(expectation_inner(ef, ef) == doctest::Approx(24.0 * weighted_norm2(dense)).epsilon(1e-11));
}

TEST_CASE("validity tracking of clipped products") {
  auto g = small_grid(6);
  std::mt19937_64 rng(2);
  const auto a = random_element(g, 2, rng);
  const auto sq = product(a, a, 4);
  CHECK(sq.complete());
  const auto cube = product(sq, a, 4);
  CHECK_FALSE(cube.complete());
  CHECK(cube.valid_order() == 4);
  CHECK_THROWS(evaluate(cube, random_noise(g, rng)));
  CHECK_THROWS_AS(product(cube, cube), std::invalid_argument);
  const auto cube2 = product(sq.truncated(2), a, 4);
  CHECK(cube2.valid_order() == 0);
}

TEST_CASE("isometry and orthogonality") {
  auto g = small_grid(6);
  std::mt19937_64 rng(8);
  const auto e1 = ChaosElement::from_kernel(random_kernel(g, 1, rng));
  const auto e2 = ChaosElement::from_kernel(random_kernel(g, 2, rng));
  CHECK(expectation_inner(e1, e2) == 0.0);
  const auto e = random_element(g, 3, rng);
  CHECK(expectation_inner(e, ChaosElement::constant(g, 1.0)) == doctest::Approx(e.mean()));
  // Monte Carlo variance
  const int paths = 100000;
  double s1 = 0, s2 = 0;
  const Evaluator ev(e);
  for (int p = 0; p < paths; ++p) {
    const double x = ev(random_noise(g, rng));
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / paths, var = s2 / paths - mean * mean;
  CHECK(std::abs(mean - e.mean()) < 4 * std::sqrt(var / paths));
  CHECK(var == doctest::Approx(variance(e)).epsilon(0.03));
}

TEST_CASE("Malliavin derivative against finite differences") {
  auto g = small_grid(8);
  std::mt19937_64 rng(13);
  const auto e = random_element(g, 3, rng);
  const auto d = malliavin_derivative(e, 1);
  const auto w = random_noise(g, rng);
  const double eps = 1e-4;
  for (std::size_t x = 0; x < g->size(); x += 3) {
    auto wp = w, wm = w;
    wp.increments[x] += eps * g->width(x);
    wm.increments[x] -= eps * g->width(x);
    const double fd = (evaluate(e, wp) - evaluate(e, wm)) / (2 * eps * g->width(x));
    CHECK(evaluate(d.at(x), w) == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK(malliavin_derivative(ChaosElement::constant(g, 3), 1).is_zero());
  const auto d2 = malliavin_derivative(e, 2);
  const auto dd = malliavin_derivative(d.at(2), 1);
  for (std::size_t y = 0; y < g->size(); ++y)
    CHECK(evaluate(d2.at(2, y), w) == doctest::Approx(evaluate(dd.at(y), w)).epsilon(1e-10));
}

TEST_CASE("nabla: product and chain rules") {
  auto g = small_grid(10);
  std::mt19937_64 rng(17);
  const double alpha = 0.3;
  const auto F = random_element(g, 1, rng), G = random_element(g, 1, rng);
  const auto lhs = nabla(alpha, product(F, G));
  const auto nf = nabla(alpha, F), ng = nabla(alpha, G);
  for (std::size_t x = 0; x < g->size(); ++x) {
    const auto rhs = product(nf.at(x), G) + product(F, ng.at(x));
    const auto diff = lhs.at(x) - rhs;
    CHECK(expectation_inner(diff, diff) < 1e-20 * (1 + expectation_inner(rhs, rhs)));
  }
  const auto H = random_element(g, 2, rng);
  const std::vector<double> sq{0, 0, 1};
  const auto lhs2 = nabla(alpha, poly_apply(sq, H));
  const auto nh = nabla(alpha, H);
  for (std::size_t x = 0; x < g->size(); ++x) {
    const auto rhs = 2.0 * product(H, nh.at(x));
    const auto diff = lhs2.at(x) - rhs;
    CHECK(dense_norm2(diff) < 1e-20 * (1 + expectation_inner(rhs, rhs)));
    const auto single = nabla_at(alpha, H, x) - nh.at(x);
    CHECK(expectation_inner(single, single) < 1e-24 * (1 + expectation_inner(rhs, rhs)));
  }
  CHECK(nabla(alpha, ChaosElement::constant(g, 1)).is_zero());
  CHECK(nabla2(alpha, F).is_zero());
}

TEST_CASE("nabla2 is symmetric and matches the diagonal average") {
  auto g = small_grid(10);
  std::mt19937_64 rng(19);
  const auto F = random_element(g, 3, rng);
  const auto n2 = nabla2(0.35, F);
  const std::size_t n = g->size();
  for (int k = 0; k <= 1; ++k)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y)
        CHECK(n2.component(k).row(Eigen::Index(x * n + y)).isApprox(n2.component(k).row(Eigen::Index(y * n + x)),
                                                                    1e-12));
  const TransferTensor tt(*g, 0.35, 0.0, 1.0);
  const auto diag = nabla2_diagonal(tt, F);
  CHECK(diag.size() == g->time_count());
  // summed over time against the full field paired with the transfer blocks
  const Eigen::MatrixXd& K = g->frac_operator(0.35)->left_matrix();
  (void)K;
  for (const auto& e : diag) CHECK(e.max_order() <= 1);
}

TEST_CASE("Wiener process kernel") {
  auto g = small_grid(8);
  const auto W = wiener_process(g);
  CHECK(W.size() == g->time_count());
  const double t = g->right(g->size() - 1);
  const auto& last = W.values.back().kernel(1);
  double var = expectation_inner(W.values.back(), W.values.back());
  // average over the last cell of W_s has variance between W at its ends
  CHECK(var < t);
  CHECK(var > g->left(g->size() - 1));
  CHECK(last.n() == g->size());
}

namespace {

// Same element with every factored part replaced by its dense kernel.
ChaosElement densified(const ChaosElement& e) {
  ChaosElement out(e.grid());
  for (int k = 0; k <= 4; ++k)
    if (e.has(k)) out.add(e.kernel(k));
  return out;
}

ChaosElement random_factored(const GridPtr& g, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  ChaosElement e = random_element(g, 2, rng);
  const std::size_t n = g->size();
  for (int q = 0; q < 2; ++q) {
    Eigen::VectorXd v{Eigen::Index(n)};
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = nd(rng);
    e.add_factored3(random_sym(n, rng), v);
    e.add_factored(random_sym(n, rng), random_sym(n, rng), 0.5);
  }
  return e;
}

}  // namespace

TEST_CASE("factored order-3 parts agree with their dense kernels") {
  auto g = small_grid(8);
  std::mt19937_64 rng(41);
  const auto F = random_factored(g, rng);
  const auto Fd = densified(F);
  const auto G = random_element(g, 2, rng);
  const double scale = 1.0 + dense_norm2(Fd) * (1.0 + dense_norm2(G));
  CHECK(std::abs(expectation_inner(F, F) - expectation_inner(Fd, Fd)) < 1e-10 * scale);
  CHECK(std::abs(expectation_inner(F, Fd) - expectation_inner(Fd, Fd)) < 1e-10 * scale);

  auto w = random_noise(g, rng);
  CHECK(evaluate(F, w) == doctest::Approx(evaluate(Fd, w)).epsilon(1e-10));

  for (int top = 1; top <= 2; ++top) {
    const auto H = random_element(g, top, rng);
    const auto p1 = product(H, F), p2 = product(H, Fd);
    CHECK(p1.valid_order() == p2.valid_order());
    const auto diff = densified(p1) - densified(p2);
    CHECK(dense_norm2(diff) < 1e-20 * scale * (1 + dense_norm2(H)));
  }
  for (std::size_t x : {std::size_t(0), std::size_t(5), g->size() - 1}) {
    const auto d = densified(nabla_at(0.3, F, x)) - nabla_at(0.3, Fd, x);
    CHECK(dense_norm2(d) < 1e-20 * scale);
  }
  const TransferTensor tt(*g, 0.3, 0.0, 1.0);
  for (std::size_t p = 0; p < tt.time_cells(); ++p) {
    const auto d = nabla2_diagonal_at(tt, F, p) - nabla2_diagonal_at(tt, Fd, p);
    CHECK(dense_norm2(d) < 1e-20 * scale);
  }
}
