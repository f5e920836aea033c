#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace rosen::quad {

// (z + w)^a - z^a for z, w >= 0 without cancellation when w << z.
double pow_diff(double z, double w, double a);

// Integral over x in [xa, xb], u in [ua, ub] of (u - x)_+^(beta - 1), beta > 0.
double pair_integral(double beta, double xa, double xb, double ua, double ub);

// Same with the two-sided weight |u - x|^(gamma - 1).
double abs_pair_integral(double gamma, double xa, double xb, double ua, double ub);

// Integral over y in [a, b] of (u - y)_+^(alpha - 1).
double cell_power(double alpha, double a, double b, double u);

struct Rule {
  std::vector<double> x;  // nodes on [0, 1]
  std::vector<double> w;  // weights summing to 1
};

// Gauss-Legendre on [0, 1]; n in {8, 16, 24, 32, 48}.
const Rule& gauss_legendre(std::size_t n);
// GL after u = t^3: clusters toward 0 for integrands with (u)^a endpoint behaviour.
const Rule& left_graded(std::size_t n);
// GL after the smoothstep map: clusters toward both ends.
const Rule& both_graded(std::size_t n);

// Integral of f over [z0, z1], 0 < z0 < z1, by Gauss-Legendre panels of unit length in ln z.
template <class F>
double log_panels(F&& f, double z0, double z1) {
  const Rule& r = gauss_legendre(16);
  const double s0 = std::log(z0), s1 = std::log(z1);
  const double span = s1 - s0;
  const std::size_t panels = span <= 1.0 ? 1 : std::size_t(span) + 1;
  const double h = span / double(panels);
  double total = 0.0;
  for (std::size_t k = 0; k < panels; ++k) {
    const double lo = s0 + double(k) * h;
    for (std::size_t m = 0; m < r.x.size(); ++m) {
      const double z = std::exp(lo + h * r.x[m]);
      total += r.w[m] * h * z * f(z);
    }
  }
  return total;
}

}  // namespace rosen::quad
