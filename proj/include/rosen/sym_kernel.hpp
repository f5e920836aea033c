#pragma once

#include "rosen/grid.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace rosen {

// Offsets of sorted multi-indices i <= j <= k <= l in canonical storage.
inline std::size_t choose2(std::size_t m) { return m * (m - 1) / 2; }
inline std::size_t choose3(std::size_t m) { return m * (m - 1) * (m - 2) / 6; }
inline std::size_t choose4(std::size_t m) { return m * (m - 1) * (m - 2) * (m - 3) / 24; }
inline std::size_t sorted3(std::size_t i, std::size_t j, std::size_t k) {
  return choose3(k + 2) + choose2(j + 1) + i;
}
inline std::size_t sorted4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
  return choose4(l + 3) + choose3(k + 2) + choose2(j + 1) + i;
}
// Number of distinct orderings of a sorted multi-index (k! / prod multiplicities!).
std::size_t permutations(std::span<const std::size_t> sorted_index);

// Symmetric kernel of order 0..4 on a grid. Orders 0-2 are stored densely
// (order 2 as a full symmetric n x n matrix), orders 3-4 by sorted multi-index.
class SymKernel {
 public:
  SymKernel(GridPtr g, int order);

  static SymKernel scalar(GridPtr g, double c);
  static SymKernel vector(GridPtr g, std::vector<double> v);
  // Symmetrizes the input.
  static SymKernel matrix(GridPtr g, const Eigen::MatrixXd& m);

  int order() const noexcept { return order_; }
  const GridPtr& grid() const noexcept { return grid_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t storage_size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  // Any index order is accepted.
  double at(std::span<const std::size_t> idx) const;
  double scalar_value() const;
  Eigen::Map<const Eigen::MatrixXd> mat() const;
  Eigen::Map<Eigen::MatrixXd> mat();
  Eigen::Map<const Eigen::VectorXd> vec() const;
  Eigen::Map<Eigen::VectorXd> vec();

  // Raw row-major n^k tensor of all entries.
  std::vector<double> full() const;

  SymKernel& operator+=(const SymKernel& o);
  SymKernel& operator*=(double c);
  bool is_zero() const;

 private:
  GridPtr grid_;
  int order_;
  std::size_t n_;
  std::vector<double> data_;
};

SymKernel operator+(SymKernel a, const SymKernel& b);
SymKernel operator*(double c, SymKernel a);

// Averages a raw row-major n^k tensor over all index permutations.
SymKernel symmetrize(GridPtr g, int order, std::span<const double> raw);

// Weighted inner product sum over all multi-indices of f g prod w.
double weighted_inner(const SymKernel& f, const SymKernel& g);
double weighted_norm2(const SymKernel& f);

// Sym(sum_p A_p (x) v_p) of order 3 for symmetric n x n matrices A_p (flattened columns
// of `mats`) and vectors v_p (columns of `vecs`).
SymKernel sym3_from_pairs(GridPtr g, const Eigen::MatrixXd& mats, const Eigen::MatrixXd& vecs);

// Sym(sum_p v_p (x) c_p) of order 4 from vectors and order-3 kernels (small grids).
SymKernel sym4_from_vec3(GridPtr g, const Eigen::MatrixXd& vecs, std::span<const SymKernel> c);

// Full contraction f (x)_r g over r index pairs, symmetrized (generic, O(n^(k+l-r))).
SymKernel contract(const SymKernel& f, const SymKernel& g, int r);

}  // namespace rosen
