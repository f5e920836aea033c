#pragma once

#include "rosen/grid.hpp"
#include "rosen/sym_kernel.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace rosen {

class TransferTensor;

// One white-noise draw: increment on cell i ~ N(0, width(i)).
struct NoiseSample {
  GridPtr grid;
  std::vector<double> increments;
};

// Order-4 kernel kept as Sym(sum_q a_q (x) b_q) with symmetric n x n factors.
// This is the only order-4 representation that stays affordable on large grids.
class Factored4 {
 public:
  Factored4() = default;
  explicit Factored4(std::size_t n) : n_(n) {}

  std::size_t n() const noexcept { return n_; }
  std::size_t terms() const noexcept { return a_.size(); }
  bool empty() const noexcept { return a_.empty(); }
  const Eigen::MatrixXd& a(std::size_t q) const { return a_[q]; }
  const Eigen::MatrixXd& b(std::size_t q) const { return b_[q]; }

  // Adds scale * Sym(a (x) b); a and b are symmetrized.
  void add(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double scale = 1.0);
  void append(const Factored4& o, double scale = 1.0);
  void scale(double c);

  SymKernel materialize(const GridPtr& g) const;

 private:
  std::size_t n_ = 0;
  std::vector<Eigen::MatrixXd> a_, b_;
};

// Order-3 kernel kept as Sym(sum_q A_q (x) v_q), A_q symmetric n x n.
class Factored3 {
 public:
  Factored3() = default;
  explicit Factored3(std::size_t n) : n_(n) {}

  std::size_t n() const noexcept { return n_; }
  std::size_t terms() const noexcept { return a_.size(); }
  bool empty() const noexcept { return a_.empty(); }
  const Eigen::MatrixXd& a(std::size_t q) const { return a_[q]; }
  const Eigen::VectorXd& v(std::size_t q) const { return v_[q]; }

  void add(const Eigen::MatrixXd& a, const Eigen::VectorXd& v, double scale = 1.0);
  void append(const Factored3& o, double scale = 1.0);
  void scale(double c);

  SymKernel materialize(const GridPtr& g) const;

 private:
  std::size_t n_ = 0;
  std::vector<Eigen::MatrixXd> a_;
  std::vector<Eigen::VectorXd> v_;
};

// Weighted squared norm of the symmetrized order-4 kernel (sum over all indices),
// by blocked streaming without materializing the tensor.
double factored_norm2(const Factored4& f, std::span<const double> w);
// Same for dense + factored parts combined.
double factored_inner(const Factored4& f, const Factored4& g, std::span<const double> w);

// Finite Wiener-chaos element sum_k I_k(f_k), k <= 4.
// A product may be clipped: orders above valid_order() are then unknown and
// not stored, and complete() is false.
class ChaosElement {
 public:
  explicit ChaosElement(GridPtr g);
  static ChaosElement constant(GridPtr g, double c);
  static ChaosElement from_kernel(SymKernel k);

  const GridPtr& grid() const noexcept { return grid_; }
  std::size_t n() const noexcept { return grid_->size(); }

  bool complete() const noexcept { return complete_; }
  int valid_order() const noexcept { return valid_; }
  // Highest order with a stored nonzero part (-1 if the element is zero).
  int max_order() const;

  bool has(int order) const;
  // Dense kernel of the given order; orders 3 and 4 include the materialized factored parts.
  SymKernel kernel(int order) const;
  const std::optional<SymKernel>& dense(int order) const { return k_.at(std::size_t(order)); }
  const Factored4& factored() const noexcept { return f4_; }
  const Factored3& factored3() const noexcept { return f3_; }
  double mean() const;

  void add(const SymKernel& k, double scale = 1.0);
  void add_factored(const Factored4& f, double scale = 1.0);
  void add_factored(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double scale = 1.0);
  void add_factored3(const Factored3& f, double scale = 1.0);
  void add_factored3(const Eigen::MatrixXd& a, const Eigen::VectorXd& v, double scale = 1.0);
  // Marks orders above `order` as unknown and drops them.
  void clip(int order);
  ChaosElement truncated(int order) const;

  ChaosElement& operator+=(const ChaosElement& o);
  ChaosElement& operator-=(const ChaosElement& o);
  ChaosElement& operator*=(double c);

 private:
  GridPtr grid_;
  std::array<std::optional<SymKernel>, 5> k_;
  Factored3 f3_;
  Factored4 f4_;
  int valid_ = 4;
  bool complete_ = true;
};

ChaosElement operator+(ChaosElement a, const ChaosElement& b);
ChaosElement operator-(ChaosElement a, const ChaosElement& b);
ChaosElement operator*(double c, ChaosElement a);

// Pathwise value with Wick (Hermite) diagonals.
double evaluate(const ChaosElement& f, const NoiseSample& w);

// Evaluator with the diagonal corrections precomputed, for repeated sampling.
class Evaluator {
 public:
  explicit Evaluator(const ChaosElement& f);
  double operator()(const NoiseSample& w) const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

// E[F G] = sum_k k! <f_k, g_k>.
double expectation_inner(const ChaosElement& f, const ChaosElement& g);
double variance(const ChaosElement& f);

// F G by the product formula; parts above max_order are clipped.
ChaosElement product(const ChaosElement& f, const ChaosElement& g, int max_order = 4);
// p(F) for p(x) = sum_i c_i x^i by Horner's scheme.
ChaosElement poly_apply(std::span<const double> coeffs, const ChaosElement& f, int max_order = 4);

// x -> G(x) (one free slot) or (x, y) -> G(x, y) (two), each value a chaos element.
// Component of base order k stores one row per slot index holding the base kernel storage.
class FreeSlotField {
 public:
  FreeSlotField(GridPtr g, int slots);

  const GridPtr& grid() const noexcept { return grid_; }
  int slots() const noexcept { return slots_; }
  std::size_t slot_count() const noexcept;
  bool has(int base_order) const { return comp_.at(std::size_t(base_order)).has_value(); }
  const Eigen::MatrixXd& component(int base_order) const;
  Eigen::MatrixXd& component(int base_order);
  // Creates a zero component if absent.
  Eigen::MatrixXd& ensure(int base_order);
  int max_base_order() const;
  bool is_zero() const;

  ChaosElement at(std::size_t x) const;
  ChaosElement at(std::size_t x, std::size_t y) const;

 private:
  GridPtr grid_;
  int slots_;
  std::array<std::optional<Eigen::MatrixXd>, 4> comp_;
};

// Relative sup-norm gap between two fields: max over slots of the L2 (isometry) norm of the
// difference, divided by the max over slots of the norm of `ref`.
double field_gap(const FreeSlotField& test, const FreeSlotField& ref);

FreeSlotField malliavin_derivative(const ChaosElement& f, int m);
// I_+^alpha applied to the free slot(s) of D F / D^2 F.
FreeSlotField nabla(double alpha, const ChaosElement& f);
FreeSlotField nabla2(double alpha, const ChaosElement& f);
// (nabla^alpha F)(u) on the single grid cell u, without forming the whole field.
ChaosElement nabla_at(double alpha, const ChaosElement& f, std::size_t cell);
// Exact diagonal averages of nabla2 over each time cell of the tensor's interval:
// (1/tau_p) int_{C_p} (nabla^{a,a} F)(u, u) du.
std::vector<ChaosElement> nabla2_diagonal(const TransferTensor& tt, const ChaosElement& f);
ChaosElement nabla2_diagonal_at(const TransferTensor& tt, const ChaosElement& f, std::size_t p);

// Process indexed by the time cells of [0, t_max]; member p is the average over
// grid cell first_time() + p.
struct ChaosProcess {
  GridPtr grid;
  std::vector<ChaosElement> values;

  explicit ChaosProcess(GridPtr g);
  ChaosProcess(GridPtr g, std::vector<ChaosElement> v);
  std::size_t size() const noexcept { return values.size(); }
  const ChaosElement& at_cell(std::size_t grid_cell) const;
};

// Deterministic process from per-time-cell values.
ChaosProcess deterministic_process(const GridPtr& g, std::span<const double> per_cell);
// Cell averages of a function of time.
ChaosProcess deterministic_process(const GridPtr& g, const std::function<double(double)>& fn);
std::vector<double> cell_averages(const Grid& g, const std::function<double(double)>& fn);
// Time-cell averages of W_s = I_1(1_{[0,s]}).
ChaosProcess wiener_process(const GridPtr& g);
ChaosProcess scale_process(const ChaosProcess& p, std::span<const double> per_cell);

}  // namespace rosen
