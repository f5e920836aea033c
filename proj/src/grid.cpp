#include "rosen/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rosen {

namespace {

// Ratio r with d * (r^m - 1) / (r - 1) = span, i.e. m geometric cells starting at width d.
double geometric_ratio(double d, std::size_t m, double span) {
  const auto total = [&](double r) {
    if (std::abs(r - 1.0) < 1e-12) return d * double(m);
    return d * std::expm1(double(m) * std::log(r)) / (r - 1.0);
  };
  double lo = 1e-6, hi = 2.0;
  while (total(hi) < span) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (total(mid) < span ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

Layout parse_layout(const std::string& s) {
  if (s == "uniform") return Layout::uniform;
  if (s == "graded") return Layout::graded;
  throw std::invalid_argument("unknown grid layout: " + s);
}

std::string to_string(Layout l) { return l == Layout::uniform ? "uniform" : "graded"; }

Grid::Grid(const GridSpec& spec) : spec_(spec) {
  if (!(spec.t_max > 0.0) || !(spec.t_min <= 0.0) || !std::isfinite(spec.t_min))
    throw std::invalid_argument("grid needs t_min <= 0 < t_max");
  if (spec.n < 2) throw std::invalid_argument("grid needs at least 2 cells");
  if (spec.tail_cells > 0 && (spec.t_min >= 0.0 || !(spec.tail_factor > 1.0)))
    throw std::invalid_argument("a far-past tail needs t_min < 0 and tail_factor > 1");

  std::vector<double> e;
  if (spec.layout == Layout::uniform) {
    const double d = delta();
    e.resize(spec.n + 1);
    for (std::size_t i = 0; i <= spec.n; ++i) e[i] = spec.t_min + double(i) * d;
    e[spec.n] = spec.t_max;
    core_step_ = d;
  } else {
    if (spec.t_min >= 0.0) throw std::invalid_argument("graded layout needs t_min < 0");
    const std::size_t nc = spec.n / 2;
    const std::size_t np = spec.n - nc;
    const double d = spec.t_max / double(nc);
    const double r = geometric_ratio(d, np, -spec.t_min);
    std::vector<double> past(np + 1);
    past[0] = 0.0;
    double w = d;
    for (std::size_t k = 1; k <= np; ++k) {
      past[k] = past[k - 1] - w;
      w *= r;
    }
    past[np] = spec.t_min;
    e.assign(past.rbegin(), past.rend());
    for (std::size_t k = 1; k <= nc; ++k) e.push_back(double(k) * d);
    e.back() = spec.t_max;
    core_step_ = d;
  }
  if (spec.tail_cells > 0) {
    const double rho = std::pow(spec.tail_factor, 1.0 / double(spec.tail_cells));
    std::vector<double> tail(spec.tail_cells);
    for (std::size_t k = 0; k < spec.tail_cells; ++k)
      tail[k] = spec.t_min * std::pow(rho, double(spec.tail_cells - k));
    e.insert(e.begin(), tail.begin(), tail.end());
  }
  edges_ = std::move(e);
  widths_.resize(edges_.size() - 1);
  for (std::size_t i = 0; i + 1 < edges_.size(); ++i) {
    widths_[i] = edges_[i + 1] - edges_[i];
    if (!(widths_[i] > 0.0)) throw std::invalid_argument("grid cells must have positive width");
  }
  first_time_ = 0;
  while (first_time_ < size() && right(first_time_) <= 0.0) ++first_time_;
  zero_edge_ = std::abs(left(first_time_)) <= 1e-12 * core_step_;
}

double Grid::overlap(std::size_t i, double a, double b) const {
  return std::max(0.0, std::min(b, right(i)) - std::max(a, left(i)));
}

std::size_t Grid::cell_of(double t) const {
  if (t < edges_.front() || t > edges_.back()) throw std::out_of_range("time outside the grid");
  auto it = std::upper_bound(edges_.begin(), edges_.end(), t);
  std::size_t i = std::size_t(it - edges_.begin());
  return i == 0 ? 0 : std::min(i - 1, size() - 1);
}

GridPtr make_grid(double t_min, double t_max, std::size_t n) {
  GridSpec s;
  s.t_min = t_min;
  s.t_max = t_max;
  s.n = n;
  return std::make_shared<const Grid>(s);
}

GridPtr make_grid(const GridSpec& spec) { return std::make_shared<const Grid>(spec); }

GridSpec standard_spec(std::size_t n, double t_min, double t_max) {
  GridSpec s;
  s.t_min = t_min;
  s.t_max = t_max;
  s.n = n;
  s.layout = Layout::graded;
  s.tail_cells = n / 2;
  s.tail_factor = 1e24;
  return s;
}

void require_same_grid(const GridPtr& a, const GridPtr& b) {
  if (!a || !b) throw std::invalid_argument("missing grid");
  if (a == b) return;
  if (a->size() != b->size() || !std::equal(a->edges().begin(), a->edges().end(), b->edges().begin()))
    throw std::invalid_argument("grid mismatch");
}

GridFn1::GridFn1(GridPtr g) : grid(std::move(g)), values(grid->size(), 0.0) {}
GridFn1::GridFn1(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
  if (values.size() != grid->size()) throw std::invalid_argument("GridFn1 size mismatch");
}

GridFn2::GridFn2(GridPtr g) : grid(std::move(g)), values(grid->size() * grid->size(), 0.0) {}
GridFn2::GridFn2(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
  if (values.size() != grid->size() * grid->size()) throw std::invalid_argument("GridFn2 size mismatch");
}

}  // namespace rosen
