#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace rosen {

enum class Layout { uniform, graded };

Layout parse_layout(const std::string& s);
std::string to_string(Layout l);

struct GridSpec {
  double t_min = -20.0;
  double t_max = 1.0;
  std::size_t n = 256;       // cells on [t_min, t_max]
  Layout layout = Layout::uniform;
  std::size_t tail_cells = 0;  // geometric cells beyond t_min
  double tail_factor = 1e20;   // tail reaches t_min * tail_factor
};

class FracOperator;
class TransferTensor;

// Cell partition of a truncated past plus [0, t_max]. Cells are
// [left(i), right(i)); the white-noise increment on cell i has variance width(i).
class Grid {
 public:
  explicit Grid(const GridSpec& spec);

  const GridSpec& spec() const noexcept { return spec_; }
  double t_min() const noexcept { return spec_.t_min; }
  double t_max() const noexcept { return spec_.t_max; }
  std::size_t n() const noexcept { return spec_.n; }
  // Nominal uniform step (t_max - t_min) / n.
  double delta() const noexcept { return (spec_.t_max - spec_.t_min) / double(spec_.n); }

  std::size_t size() const noexcept { return edges_.size() - 1; }
  std::span<const double> edges() const noexcept { return edges_; }
  std::span<const double> widths() const noexcept { return widths_; }
  double left(std::size_t i) const { return edges_[i]; }
  double right(std::size_t i) const { return edges_[i + 1]; }
  double width(std::size_t i) const { return widths_[i]; }
  double mid(std::size_t i) const { return 0.5 * (edges_[i] + edges_[i + 1]); }

  // Cells meeting (0, t_max]: indices [first_time(), size()).
  std::size_t first_time() const noexcept { return first_time_; }
  std::size_t time_count() const noexcept { return size() - first_time_; }
  // |C_i intersected with [a, b]|.
  double overlap(std::size_t i, double a, double b) const;
  // Uniform spacing of the cells covering [0, t_max] (0 when 0 is not an edge).
  double core_step() const noexcept { return core_step_; }
  bool zero_is_edge() const noexcept { return zero_edge_; }
  std::size_t cell_of(double t) const;

  // Operator caches tied to the grid's lifetime.
  std::shared_ptr<const FracOperator> frac_operator(double alpha) const;
  std::shared_ptr<const TransferTensor> transfer(double alpha) const;

 private:
  GridSpec spec_;
  std::vector<double> edges_;
  std::vector<double> widths_;
  std::size_t first_time_ = 0;
  double core_step_ = 0.0;
  bool zero_edge_ = false;

  mutable std::mutex cache_mutex_;
  mutable std::map<double, std::shared_ptr<const FracOperator>> frac_cache_;
  mutable std::map<double, std::shared_ptr<const TransferTensor>> transfer_cache_;
};

using GridPtr = std::shared_ptr<const Grid>;

GridPtr make_grid(double t_min, double t_max, std::size_t n);
GridPtr make_grid(const GridSpec& spec);
// Graded layout on [t_min, t_max] with n/2 far-past tail cells reaching 1e24 |t_min|.
GridSpec standard_spec(std::size_t n, double t_min = -20.0, double t_max = 1.0);

void require_same_grid(const GridPtr& a, const GridPtr& b);

// Piecewise-constant function on the cells (cell averages).
struct GridFn1 {
  GridPtr grid;
  std::vector<double> values;

  explicit GridFn1(GridPtr g);
  GridFn1(GridPtr g, std::vector<double> v);
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
};

// Piecewise-constant function on cell pairs, row-major.
struct GridFn2 {
  GridPtr grid;
  std::vector<double> values;

  explicit GridFn2(GridPtr g);
  GridFn2(GridPtr g, std::vector<double> v);
  std::size_t n() const { return grid->size(); }
  double operator()(std::size_t i, std::size_t j) const { return values[i * n() + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * n() + j]; }
};

}  // namespace rosen
