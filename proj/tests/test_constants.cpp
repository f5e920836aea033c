#include "rosen/constants.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

using namespace rosen;
using Big = boost::multiprecision::cpp_bin_float_50;

namespace {

Big big_gamma(double x) { return boost::math::tgamma(Big(x)); }

double oracle_cbr(double h) {
  const Big hb(h);
  Big v = (2 * hb - 1) / (hb + 1) * big_gamma(1 - h / 2) * big_gamma(h / 2) / big_gamma(1 - h);
  return static_cast<double>(sqrt(v));
}

double oracle_kappa3(double h) {
  const Big hb(h), a = 2 * hb - 1;
  const Big beta = big_gamma(h) * big_gamma(h) / big_gamma(2 * h);
  return static_cast<double>(4 * sqrt(2 * hb * a * a * a) / (3 * hb - 1) * beta);
}

}  // namespace

TEST_CASE("Hurst rejects values outside (1/2, 1)") {
  CHECK_THROWS_AS(Hurst(0.5), std::invalid_argument);
  CHECK_THROWS_AS(Hurst(1.0), std::invalid_argument);
  CHECK_THROWS_AS(Hurst(0.3), std::invalid_argument);
  CHECK_NOTHROW(Hurst(0.75));
}

TEST_CASE("constant set closed forms") {
  const auto c = derived_constants(Hurst(0.75));
  CHECK(c.c1 == doctest::Approx(8.0 / 7.0).epsilon(1e-15));
  CHECK(c.c2 == doctest::Approx(8.0 / 7.0 * std::sqrt(0.75)).epsilon(1e-14));
  CHECK(c.kappa3 == doctest::Approx(4.0 * std::sqrt(0.1875) / 1.25 * std::tgamma(0.75) * std::tgamma(0.75) /
                                    std::tgamma(1.5))
                        .epsilon(1e-13));
}

TEST_CASE("constants agree with a 50-digit Gamma oracle") {
  for (int k = 0; k <= 8; ++k) {
    const double h = 0.55 + 0.05 * k;
    const auto c = derived_constants(Hurst(h));
    CHECK(std::abs(c.cBR - c.cBR_closed) <= 1e-12 * c.cBR);
    CHECK(std::abs(c.cBR_closed - oracle_cbr(h)) <= 1e-13 * c.cBR);
    CHECK(std::abs(c.c2 - c.c1 * std::sqrt(2 * h * (2 * h - 1))) <= 1e-12 * c.c2);
    CHECK(std::abs(c.kappa3 - oracle_kappa3(h)) <= 1e-13 * c.kappa3);
    for (double v : {c.cBigB, c.cBigR, c.cSmallB, c.cSmallR, c.cBR, c.c1, c.c2, c.c3, c.kappa3}) {
      CHECK(std::isfinite(v));
      CHECK(v > 0.0);
    }
  }
}

TEST_CASE("fbm covariance") {
  const Hurst h(0.7);
  CHECK(fbm_covariance(h, 1, 1) == doctest::Approx(1.0));
  CHECK(fbm_covariance(h, 0.4, 0.4) == doctest::Approx(std::pow(0.4, 1.4)));
  CHECK(fbm_covariance(h, 0, 0.8) == 0.0);
  CHECK(fbm_covariance(h, 0.3, 0.9) == fbm_covariance(h, 0.9, 0.3));
  Eigen::MatrixXd c(32, 32);
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) c(i, j) = fbm_covariance(h, (i + 1) / 32.0, (j + 1) / 32.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}
