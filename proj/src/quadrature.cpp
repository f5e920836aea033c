#include "rosen/quadrature.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace rosen::quad {

double pow_diff(double z, double w, double a) {
  if (w <= 0.0) return 0.0;
  if (z <= 0.0) return std::pow(w, a);
  return std::pow(z, a) * std::expm1(a * std::log1p(w / z));
}

namespace {

double phi(double z, double beta) {
  return z > 0.0 ? std::pow(z, beta + 1.0) / (beta * (beta + 1.0)) : 0.0;
}

// Separated cells, U right of X: integrate over x, using z = ua - x, which
// leaves the inner u-integral as a power difference.
double separated(double beta, double xa, double xb, double ua, double ub) {
  const double wu = ub - ua;
  auto f = [&](double z) { return pow_diff(z, wu, beta) / beta; };
  return log_panels(f, ua - xb, ua - xa);
}

template <std::size_t N>
Rule make_gauss() {
  using G = boost::math::quadrature::gauss<double, N>;
  const auto& abs = G::abscissa();
  const auto& wts = G::weights();
  Rule r;
  // boost stores the non-negative half of the symmetric rule on [-1, 1]
  for (std::size_t k = 0; k < abs.size(); ++k) {
    const double x = abs[k], w = wts[k];
    if (x == 0.0) {
      r.x.push_back(0.5);
      r.w.push_back(0.5 * w);
    } else {
      r.x.push_back(0.5 * (1.0 - x));
      r.w.push_back(0.5 * w);
      r.x.push_back(0.5 * (1.0 + x));
      r.w.push_back(0.5 * w);
    }
  }
  return r;
}

Rule build_gauss(std::size_t n) {
  switch (n) {
    case 8: return make_gauss<8>();
    case 16: return make_gauss<16>();
    case 24: return make_gauss<24>();
    case 32: return make_gauss<32>();
    case 48: return make_gauss<48>();
    default: throw std::invalid_argument("unsupported Gauss-Legendre order");
  }
}

template <class Map>
const Rule& cached(std::map<std::size_t, Rule>& cache, std::size_t n, Map&& map) {
  static std::mutex m;
  std::lock_guard lock(m);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  return cache.emplace(n, map(build_gauss(n))).first->second;
}

}  // namespace

double pair_integral(double beta, double xa, double xb, double ua, double ub) {
  if (!(xb > xa) || !(ub > ua) || ub <= xa) return 0.0;
  const double wx = xb - xa, wu = ub - ua;
  const double gap = ua - xb;
  if (gap >= 0.0) {
    const double spread = gap + wx + wu;
    if (spread * spread / (wx * wu) > 1e4) {
      if (gap > 0.0) return separated(beta, xa, xb, ua, ub);
      // adjacent cells of very different width: peel off a comparable piece of the wider one
      if (wx > wu) return pair_integral(beta, xb - wu, xb, ua, ub) + pair_integral(beta, xa, xb - wu, ua, ub);
      return pair_integral(beta, xa, xb, ua, ua + wx) + pair_integral(beta, xa, xb, ua + wx, ub);
    }
  }
  return phi(ub - xa, beta) - phi(ub - xb, beta) - phi(ua - xa, beta) + phi(ua - xb, beta);
}

double abs_pair_integral(double gamma, double xa, double xb, double ua, double ub) {
  return pair_integral(gamma, xa, xb, ua, ub) + pair_integral(gamma, ua, ub, xa, xb);
}

double cell_power(double alpha, double a, double b, double u) {
  if (u <= a) return 0.0;
  if (u <= b) return std::pow(u - a, alpha) / alpha;
  return pow_diff(u - b, b - a, alpha) / alpha;
}

const Rule& gauss_legendre(std::size_t n) {
  static std::map<std::size_t, Rule> cache;
  return cached(cache, n, [](Rule r) { return r; });
}

const Rule& left_graded(std::size_t n) {
  static std::map<std::size_t, Rule> cache;
  return cached(cache, n, [](Rule r) {
    for (std::size_t k = 0; k < r.x.size(); ++k) {
      const double t = r.x[k];
      r.w[k] *= 3.0 * t * t;
      r.x[k] = t * t * t;
    }
    return r;
  });
}

const Rule& both_graded(std::size_t n) {
  static std::map<std::size_t, Rule> cache;
  return cached(cache, n, [](Rule r) {
    for (std::size_t k = 0; k < r.x.size(); ++k) {
      const double t = r.x[k];
      r.w[k] *= 6.0 * t * (1.0 - t);
      r.x[k] = t * t * (3.0 - 2.0 * t);
    }
    return r;
  });
}

}  // namespace rosen::quad
