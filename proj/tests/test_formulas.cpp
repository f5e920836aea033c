#include "rosen/formulas.hpp"
#include "rosen/integrators.hpp"
#include "rosen/kernels.hpp"

#include <doctest.h>

#include <cmath>

using namespace rosen;

namespace {

GridPtr small(std::size_t n) {
  GridSpec s = standard_spec(n, -4.0, 1.0);
  s.tail_factor = 1e8;
  return make_grid(s);
}

double order_gap(const ChaosElement& a, const ChaosElement& b, int k) {
  const ChaosElement d = order_part(a, k) - order_part(b, k);
  return std::sqrt(std::max(0.0, expectation_inner(d, d)));
}

std::vector<double> mids(const Grid& g) {
  std::vector<double> v(g.time_count());
  for (std::size_t p = 0; p < v.size(); ++p) v[p] = g.mid(g.first_time() + p);
  return v;
}

}  // namespace

TEST_CASE("lemma constant and polynomial helpers") {
  const Hurst h(0.7);
  const double g = gamma_fn(0.35);
  CHECK(lemma_constant(h) * g * g == doctest::Approx(beta_fn(0.35, 0.3)).epsilon(1e-14));
  CHECK(derivative({1.0, 2.0, 3.0, 4.0}) == Polynomial{2.0, 6.0, 12.0});
  CHECK(derivative({5.0}).empty());
  CHECK(parse_polynomial("x^3") == Polynomial{0.0, 0.0, 0.0, 1.0});
  CHECK(parse_polynomial("1, -2,0.5") == Polynomial{1.0, -2.0, 0.5});
  CHECK_THROWS_AS(parse_polynomial("x^4"), std::invalid_argument);
  CHECK_THROWS_AS(parse_polynomial("1,2,3,4,5"), std::invalid_argument);
}

TEST_CASE("abs_power_average of gamma = 1 is one") {
  auto g = small(32);
  const Eigen::MatrixXd a = abs_power_average(*g, 1.0, 0.0, 1.0);
  CHECK((a.array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("derivative lemmas agree with the chaos pipeline on a coarse grid") {
  auto g = small(128);
  for (double hv : {0.65, 0.85}) {
    for (const auto& r : derivative_lemma_gaps(Hurst(hv), g, 1.0)) {
      INFO(r.lemma << " " << r.integrand << " H=" << hv);
      CHECK(r.gap < 0.08);
    }
  }
}

TEST_CASE("Ito formula with f(x) = x is the plain integral") {
  auto g = small(48);
  const Hurst h(0.75);
  const auto psi = mids(*g);
  const ChaosElement z = rosenblatt_wiener_integral(h, g, psi, 1.0);
  const ChaosElement rhs = ito_rhs_wiener_integrand(h, g, psi, {0.0, 1.0}, 1.0);
  const double scale = std::sqrt(variance(z));
  for (int k = 0; k <= 4; ++k) CHECK(order_gap(z, rhs, k) <= 1e-12 * scale);
  const std::vector<double> one(g->time_count(), 1.0);
  const ChaosElement r1 = ito_rhs_rosenblatt(h, g, {0.0, 1.0}, 1.0);
  const ChaosElement z1 = rosenblatt_wiener_integral(h, g, one, 1.0);
  for (int k = 0; k <= 4; ++k) CHECK(order_gap(z1, r1, k) <= 1e-12);
}

TEST_CASE("Ito corollary for x^2 and x^3 on a coarse grid") {
  auto g = small(64);
  const Hurst h(0.8);
  const std::vector<double> one(g->time_count(), 1.0);
  const ChaosElement z = rosenblatt_wiener_integral(h, g, one, 1.0);
  for (const char* fs : {"x^2", "x^3"}) {
    const Polynomial f = parse_polynomial(fs);
    const ChaosElement lhs = poly_apply(f, z);
    const ChaosElement rhs = ito_rhs_wiener_integrand(h, g, one, f, 1.0);
    const ChaosElement closed = ito_rhs_rosenblatt(h, g, f, 1.0);
    const int orders[] = {0, 2, 4};
    const auto rep = compare_orderwise(fs, h, 1.0, lhs, rhs, orders);
    INFO(rep.to_csv());
    CHECK(rep.max_gap() < 0.08);
    CHECK(compare_orderwise(fs, h, 1.0, lhs, closed, orders).max_gap() < 0.08);
    // The mean-only build keeps the order-0 part.
    const ChaosElement mean_only = ito_rhs_wiener_integrand(h, g, one, f, 1.0, 0);
    CHECK(mean_only.mean() == doctest::Approx(rhs.mean()).epsilon(1e-12));
  }
}

TEST_CASE("order-0 part of the x^3 formula is the third cumulant") {
  auto g = small(128);
  const Hurst h(0.75);
  const std::vector<double> one(g->time_count(), 1.0);
  const ChaosElement r = ito_rhs_wiener_integrand(h, g, one, {0.0, 0.0, 0.0, 1.0}, 1.0, 0);
  CHECK(r.mean() == doctest::Approx(derived_constants(h).kappa3).epsilon(0.02));
}

TEST_CASE("square identity report on a coarse grid") {
  auto g = small(64);
  const auto rep = square_identity_report(Hurst(0.8), g, 1.0);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.at(2).gap_rel < 0.05);
  CHECK(rep.at(4).gap_rel < 0.05);
  CHECK(rep.to_csv().rfind("order,lhs_norm,rhs_norm,gap_rel\n", 0) == 0);
  CHECK_THROWS_AS(rep.at(1), std::invalid_argument);
}

TEST_CASE("state process and tilde coefficients") {
  auto g = small(48);
  const Hurst h(0.75);
  SecondOrderDifferential d(h, g);
  d.psi = deterministic_process(g, [](double) { return 1.0; });
  // x = R^H: the state process is the Rosenblatt process.
  const ChaosProcess x = state_process(d);
  const ChaosProcess r = rosenblatt_process(h, g);
  for (std::size_t p = 0; p < x.size(); ++p) CHECK(order_gap(x.values[p], r.values[p], 2) < 1e-12);

  // y = x^2 through the tilde triple against the chaos square.
  const Polynomial f{0.0, 0.0, 1.0};
  const SecondOrderDifferential y = ito_tilde(d, f);
  const ChaosElement lhs = poly_apply(f, reconstruct(d, 1.0));
  const ChaosElement rhs = reconstruct(y, 1.0, Overflow::clip);
  const int orders[] = {0, 2, 4};
  const auto rep = compare_orderwise("tilde", h, 1.0, lhs, rhs, orders);
  INFO(rep.to_csv());
  CHECK(rep.max_gap() < 0.08);

  // Mixed coefficients reconstruct the same element as the separate integrals.
  SecondOrderDifferential m(h, g);
  m.x0 = 0.5;
  m.theta = deterministic_process(g, [](double s) { return s; });
  m.phi = deterministic_process(g, [](double) { return 2.0; });
  const ChaosElement e = reconstruct(m, 1.0);
  CHECK(e.mean() == doctest::Approx(1.0).epsilon(1e-12));
  const double cbr = derived_constants(h).cBR;
  const ChaosElement ref = (2.0 * cbr) * integral_fbm(h.companion(), m.phi, 0.0, 1.0);
  CHECK(order_gap(e, ref, 1) < 1e-12);
  CHECK_THROWS_AS(reconstruct(m, 0.3333), std::invalid_argument);
}

TEST_CASE("second moment: psi = 1, scaling, sign and psi = W") {
  auto g = small(64);
  for (double hv : {0.6, 0.9}) {
    const Hurst h(hv);
    const auto one = deterministic_process(g, [](double) { return 1.0; });
    const SecondMoment m = second_moment(h, one, 1.0);
    CHECK(m.total() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(m.term2 == 0.0);
    const auto w = wiener_process(g);
    const std::vector<double> c(g->time_count(), -1.7);
    const SecondMoment mw = second_moment(h, w, 1.0);
    const SecondMoment ms = second_moment(h, scale_process(w, c), 1.0);
    CHECK(ms.total() == doctest::Approx(1.7 * 1.7 * mw.total()).epsilon(1e-12));
    CHECK(mw.term2 > 0.0);
  }
  // Against the chaos isometry; the discrete variance converges slowly for small H.
  auto gs = make_grid(standard_spec(128));
  const Hurst h(0.8);
  const auto w = wiener_process(gs);
  const double v = variance(integral_rosenblatt(h, w, 0.0, 1.0));
  CHECK(second_moment(h, w, 1.0).total() == doctest::Approx(v).epsilon(0.03));
}

TEST_CASE("moment bound: zero integrand and determinism") {
  auto g = small(32);
  const Hurst h(0.75);
  const std::vector<double> zero(g->time_count(), 0.0), one(g->time_count(), 1.0);
  const MomentBound z = moment_bound_gap(h, g, 3.0, zero, 1.0, 200, 5);
  CHECK(z.lhs.mean == 0.0);
  CHECK(z.rhs.mean == 0.0);
  CHECK(z.holds(2.0));
  const MomentBound a = moment_bound_gap(h, g, 4.0, one, 1.0, 600, 9, 1);
  const MomentBound b = moment_bound_gap(h, g, 4.0, one, 1.0, 600, 9, 3);
  CHECK(a.lhs.mean == b.lhs.mean);
  CHECK(a.rhs.mean == b.rhs.mean);
  CHECK(a.lhs.mean > 0.0);
  CHECK_THROWS_AS(moment_bound_gap(h, g, 2.0, one, 1.0, 10, 1), std::invalid_argument);
}
