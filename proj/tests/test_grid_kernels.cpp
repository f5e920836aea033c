#include "rosen/constants.hpp"
#include "rosen/grid.hpp"
#include "rosen/kernels.hpp"
#include "rosen/quadrature.hpp"
#include "rosen/sym_kernel.hpp"

#include <doctest.h>

#include <cmath>
#include <stdexcept>

using namespace rosen;

TEST_CASE("make_grid") {
  auto g = make_grid(-8, 1, 9);
  CHECK(g->delta() == doctest::Approx(1.0));
  CHECK(g->size() == 9);
  CHECK(make_grid(-8, 1, 900)->delta() == doctest::Approx(0.01));
  CHECK_THROWS_AS(make_grid(0, -1, 10), std::invalid_argument);
  CHECK_THROWS_AS(make_grid(-1, 1, 1), std::invalid_argument);
}

TEST_CASE("graded grid with tail covers [0, t_max] uniformly") {
  GridSpec s;
  s.t_min = -20;
  s.n = 64;
  s.layout = Layout::graded;
  s.tail_cells = 16;
  s.tail_factor = 1e10;
  auto g = make_grid(s);
  CHECK(g->size() == 80);
  CHECK(g->zero_is_edge());
  CHECK(g->left(g->first_time()) == doctest::Approx(0.0));
  CHECK(g->core_step() == doctest::Approx(1.0 / 32));
  CHECK(g->left(0) == doctest::Approx(-20e10));
}

TEST_CASE("pair integral matches its definition") {
  // int_0^1 int_2^3 (u - x)^{b-1} du dx against Gauss-Legendre
  const double beta = 0.4;
  const auto& r = quad::gauss_legendre(48);
  double ref = 0.0;
  for (std::size_t i = 0; i < r.x.size(); ++i)
    for (std::size_t j = 0; j < r.x.size(); ++j)
      ref += r.w[i] * r.w[j] * std::pow(2.0 + r.x[j] - r.x[i], beta - 1.0);
  CHECK(quad::pair_integral(beta, 0, 1, 2, 3) == doctest::Approx(ref).epsilon(1e-12));
  // far separated cells stay accurate
  const double far = quad::pair_integral(beta, 0, 1e-3, 1e6, 1e6 + 1e-3);
  CHECK(far == doctest::Approx(1e-6 * std::pow(1e6, beta - 1.0)).epsilon(1e-8));
}

TEST_CASE("frac_integral of an indicator matches the closed form") {
  const double alpha = 0.3, s = 0.5;
  auto g = make_grid(-1, 1, 1024);
  GridFn1 f(g);
  for (std::size_t i = 0; i < g->size(); ++i) f[i] = g->overlap(i, 0, s) / g->width(i);
  const auto out = frac_integral(Side::left, alpha, f);
  double err = 0.0;
  for (std::size_t i = 0; i < g->size(); ++i) {
    // cell average of (u_+^a - (u - s)_+^a) / Gamma(a + 1)
    const auto G = [&](double u) {
      return (std::pow(std::max(u, 0.0), alpha + 1) - std::pow(std::max(u - s, 0.0), alpha + 1)) /
             ((alpha + 1) * std::tgamma(alpha + 1));
    };
    const double exact = (G(g->right(i)) - G(g->left(i))) / g->width(i);
    err = std::max(err, std::abs(out[i] - exact));
  }
  CHECK(err < 1e-12);
  for (double v : out.values) CHECK(v >= -1e-15);
}

TEST_CASE("frac_integral semigroup and linearity") {
  auto g = make_grid(-3, 1, 400);
  GridFn1 f(g), h(g);
  for (std::size_t i = 0; i < g->size(); ++i) {
    const double x = g->mid(i);
    f[i] = std::abs(x + 1) < 1 ? std::exp(-1.0 / (1 - (x + 1) * (x + 1))) : 0.0;
    h[i] = std::sin(3 * x);
  }
  const auto a = frac_integral(Side::left, 0.2, frac_integral(Side::left, 0.3, f));
  const auto b = frac_integral(Side::left, 0.5, f);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < g->size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  CHECK(std::sqrt(num / den) < 0.01);
  GridFn1 comb(g);
  for (std::size_t i = 0; i < g->size(); ++i) comb[i] = 2 * f[i] - 3 * h[i];
  const auto lf = frac_integral(Side::right, 0.4, f), lh = frac_integral(Side::right, 0.4, h),
             lc = frac_integral(Side::right, 0.4, comb);
  for (std::size_t i = 0; i < g->size(); ++i) CHECK(lc[i] == doctest::Approx(2 * lf[i] - 3 * lh[i]).epsilon(1e-12));
  CHECK_THROWS_AS(frac_integral(Side::left, 1.2, f), std::invalid_argument);
}

TEST_CASE("frac_integral_2d is separable and symmetric") {
  auto g = make_grid(-1, 1, 40);
  const std::size_t n = g->size();
  GridFn1 a(g), b(g);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = std::cos(g->mid(i));
    b[i] = g->mid(i) * g->mid(i);
  }
  GridFn2 f(g);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) f(i, j) = a[i] * b[j];
  const auto out = frac_integral_2d(0.35, f);
  const auto ia = frac_integral(Side::left, 0.35, a), ib = frac_integral(Side::left, 0.35, b);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) CHECK(out(i, j) == doctest::Approx(ia[i] * ib[j]).epsilon(1e-12));
  GridFn2 s(g);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = a[i] * b[j] + a[j] * b[i];
  const auto os = frac_integral_2d(0.35, s);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) CHECK(os(i, j) == doctest::Approx(os(j, i)).epsilon(1e-12));
}

TEST_CASE("fbm and Rosenblatt kernels: support and symmetry") {
  const Hurst h(0.75);
  auto g = make_grid(-4, 1, 50);
  const auto k0 = fbm_kernel(h, 0.0, g);
  for (double v : k0.values) CHECK(v == 0.0);
  const auto k = fbm_kernel(h, 0.5, g);
  for (std::size_t i = 0; i < g->size(); ++i)
    if (g->left(i) >= 0.5) CHECK(k[i] == 0.0);
  const auto r = rosenblatt_kernel(h, 0.5, g);
  const auto m = r.mat();
  CHECK((m - m.transpose()).norm() == 0.0);
  CHECK(rosenblatt_kernel(h, 0.0, g).is_zero());
}

TEST_CASE("transfer of an indicator reproduces the Rosenblatt kernel") {
  const Hurst h(0.75);
  auto g = make_grid(-4, 1, 60);
  const auto ref = rosenblatt_kernel(h, 1.0, g);
  GridFn1 one(g, std::vector<double>(g->size(), 1.0));
  const auto tr = transfer_rosenblatt(h, one, 0.0, 1.0);
  const double cr = derived_constants(h).cSmallR;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < g->size(); ++i)
    for (std::size_t j = 0; j < g->size(); ++j) {
      const double a = cr * tr(i, j), b = ref.mat()(Eigen::Index(i), Eigen::Index(j));
      num += (a - b) * (a - b);
      den += b * b;
    }
  CHECK(std::sqrt(num / den) < 0.02);
  GridFn1 zero(g);
  for (double v : transfer_rosenblatt(h, zero, 0.0, 1.0).values) CHECK(v == 0.0);
}

TEST_CASE("Beta identity reference values") {
  const auto a = beta_kernel_identity(0.25, 0.0, 1.0, 1024);
  CHECK(a.second == doctest::Approx(std::tgamma(0.25) * std::tgamma(0.5) / std::tgamma(0.75)));
  const auto b = beta_kernel_identity(0.25, 0.0, 2.0, 1024);
  CHECK(b.second == doctest::Approx(a.second / std::sqrt(2.0)));
  CHECK(a.first / a.second == doctest::Approx(1.0).epsilon(0.01));
  CHECK_THROWS_AS(beta_kernel_identity(0.25, 1.0, 1.0), std::invalid_argument);
}
