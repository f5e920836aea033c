#include "rosen/constants.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace rosen {

namespace {

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v) || v <= 0.0)
    throw std::domain_error(std::string("non-finite or non-positive constant: ") + what);
  return v;
}

double small_b(double h) {
  const double big = std::sqrt(h * (2.0 * h - 1.0) / beta_fn(2.0 - 2.0 * h, h - 0.5));
  return big * gamma_fn(h - 0.5);
}

}  // namespace

Hurst::Hurst(double h) : h_(h) {
  if (!(h > 0.5 && h < 1.0))
    throw std::invalid_argument("Hurst index must lie in (1/2, 1), got " + std::to_string(h));
}

double gamma_fn(double x) { return boost::math::tgamma(x); }

double beta_fn(double a, double b) { return boost::math::beta(a, b); }

ConstantSet derived_constants(Hurst hurst) {
  const double h = hurst.value();
  ConstantSet c;
  c.h = h;
  c.cBigB = finite_or_throw(std::sqrt(h * (2.0 * h - 1.0) / beta_fn(2.0 - 2.0 * h, h - 0.5)), "C_B");
  c.cBigR = finite_or_throw(std::sqrt(2.0 * h * (2.0 * h - 1.0)) / (2.0 * beta_fn(1.0 - h, h / 2.0)), "C_R");
  c.cSmallB = finite_or_throw(c.cBigB * gamma_fn(h - 0.5), "c_B");
  const double gh2 = gamma_fn(h / 2.0);
  c.cSmallR = finite_or_throw(c.cBigR * gh2 * gh2, "c_R");
  c.cBR = finite_or_throw(c.cSmallR / small_b((h + 1.0) / 2.0), "c_BR");
  c.cBR_closed = finite_or_throw(
      std::sqrt((2.0 * h - 1.0) / (h + 1.0) * gamma_fn(1.0 - h / 2.0) * gh2 / gamma_fn(1.0 - h)),
      "c_BR closed form");
  if (std::abs(c.cBR - c.cBR_closed) > 1e-10 * c.cBR)
    throw std::domain_error("c_BR cross-check failed");
  c.c1 = 4.0 * (2.0 * h - 1.0) / (h + 1.0);
  c.c2 = 8.0 * (2.0 * h - 1.0) / (h + 1.0) * std::sqrt(h * (2.0 * h - 1.0) / 2.0);
  c.c3 = finite_or_throw(gh2 * gamma_fn(1.0 - h / 2.0) / gamma_fn(1.0 - h), "c3");
  c.kappa3 = finite_or_throw(third_cumulant_target(hurst), "kappa3");
  return c;
}

double fbm_covariance(Hurst hurst, double s, double t) {
  const double p = 2.0 * hurst.value();
  return 0.5 * (std::pow(std::abs(s), p) + std::pow(std::abs(t), p) - std::pow(std::abs(s - t), p));
}

double third_cumulant_target(Hurst hurst) {
  const double h = hurst.value();
  const double a = 2.0 * h - 1.0;
  return 4.0 * std::sqrt(2.0 * h * a * a * a) / (3.0 * h - 1.0) * beta_fn(h, h);
}

}  // namespace rosen
