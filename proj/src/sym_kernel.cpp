#include "rosen/sym_kernel.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace rosen {

namespace {

std::size_t storage_for(int order, std::size_t n) {
  switch (order) {
    case 0: return 1;
    case 1: return n;
    case 2: return n * n;
    case 3: return choose3(n + 2);
    case 4: return choose4(n + 3);
    default: throw std::invalid_argument("kernel order must lie in 0..4");
  }
}

std::size_t ipow(std::size_t n, int k) {
  std::size_t r = 1;
  for (int i = 0; i < k; ++i) r *= n;
  return r;
}

const std::array<std::size_t, 5> factorial{1, 1, 2, 6, 24};

}  // namespace

std::size_t permutations(std::span<const std::size_t> s) {
  std::size_t denom = 1, run = 1;
  for (std::size_t a = 1; a < s.size(); ++a) {
    if (s[a] == s[a - 1]) {
      ++run;
      denom *= run;
    } else {
      run = 1;
    }
  }
  return factorial.at(s.size()) / denom;
}

SymKernel::SymKernel(GridPtr g, int order) : grid_(std::move(g)), order_(order) {
  if (!grid_) throw std::invalid_argument("SymKernel needs a grid");
  n_ = grid_->size();
  data_.assign(storage_for(order, n_), 0.0);
}

SymKernel SymKernel::scalar(GridPtr g, double c) {
  SymKernel k(std::move(g), 0);
  k.data_[0] = c;
  return k;
}

SymKernel SymKernel::vector(GridPtr g, std::vector<double> v) {
  SymKernel k(std::move(g), 1);
  if (v.size() != k.n_) throw std::invalid_argument("order-1 kernel size mismatch");
  k.data_ = std::move(v);
  return k;
}

SymKernel SymKernel::matrix(GridPtr g, const Eigen::MatrixXd& m) {
  SymKernel k(std::move(g), 2);
  if (m.rows() != Eigen::Index(k.n_) || m.cols() != Eigen::Index(k.n_))
    throw std::invalid_argument("order-2 kernel size mismatch");
  k.mat() = 0.5 * (m + m.transpose());
  return k;
}

double SymKernel::at(std::span<const std::size_t> idx) const {
  if (idx.size() != std::size_t(order_)) throw std::invalid_argument("index arity differs from kernel order");
  std::array<std::size_t, 4> s{};
  std::copy(idx.begin(), idx.end(), s.begin());
  std::sort(s.begin(), s.begin() + order_);
  for (int a = 0; a < order_; ++a)
    if (s[std::size_t(a)] >= n_) throw std::out_of_range("kernel index out of range");
  switch (order_) {
    case 0: return data_[0];
    case 1: return data_[s[0]];
    case 2: return data_[s[0] * n_ + s[1]];
    case 3: return data_[sorted3(s[0], s[1], s[2])];
    default: return data_[sorted4(s[0], s[1], s[2], s[3])];
  }
}

double SymKernel::scalar_value() const {
  if (order_ != 0) throw std::logic_error("not an order-0 kernel");
  return data_[0];
}

Eigen::Map<const Eigen::MatrixXd> SymKernel::mat() const {
  if (order_ != 2) throw std::logic_error("not an order-2 kernel");
  return {data_.data(), Eigen::Index(n_), Eigen::Index(n_)};
}

Eigen::Map<Eigen::MatrixXd> SymKernel::mat() {
  if (order_ != 2) throw std::logic_error("not an order-2 kernel");
  return {data_.data(), Eigen::Index(n_), Eigen::Index(n_)};
}

Eigen::Map<const Eigen::VectorXd> SymKernel::vec() const {
  if (order_ != 1) throw std::logic_error("not an order-1 kernel");
  return {data_.data(), Eigen::Index(n_)};
}

Eigen::Map<Eigen::VectorXd> SymKernel::vec() {
  if (order_ != 1) throw std::logic_error("not an order-1 kernel");
  return {data_.data(), Eigen::Index(n_)};
}

std::vector<double> SymKernel::full() const {
  const std::size_t total = ipow(n_, order_);
  std::vector<double> out(total);
  std::array<std::size_t, 4> idx{};
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t r = flat;
    for (int a = order_ - 1; a >= 0; --a) {
      idx[std::size_t(a)] = r % n_;
      r /= n_;
    }
    out[flat] = at(std::span<const std::size_t>(idx.data(), std::size_t(order_)));
  }
  return out;
}

SymKernel& SymKernel::operator+=(const SymKernel& o) {
  require_same_grid(grid_, o.grid_);
  if (o.order_ != order_) throw std::invalid_argument("adding kernels of different order");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

SymKernel& SymKernel::operator*=(double c) {
  for (double& v : data_) v *= c;
  return *this;
}

bool SymKernel::is_zero() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v == 0.0; });
}

SymKernel operator+(SymKernel a, const SymKernel& b) { return a += b; }
SymKernel operator*(double c, SymKernel a) { return a *= c; }

SymKernel symmetrize(GridPtr g, int order, std::span<const double> raw) {
  SymKernel out(g, order);
  const std::size_t n = out.n();
  if (raw.size() != ipow(n, order)) throw std::invalid_argument("raw tensor size mismatch");
  auto d = out.data();
  switch (order) {
    case 0:
      d[0] = raw[0];
      break;
    case 1:
      std::copy(raw.begin(), raw.end(), d.begin());
      break;
    case 2:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] = 0.5 * (raw[i * n + j] + raw[j * n + i]);
      break;
    default: {
      std::array<std::size_t, 4> idx{};
      const auto flat = [&](const std::array<std::size_t, 4>& p) {
        std::size_t f = 0;
        for (int a = 0; a < order; ++a) f = f * n + p[std::size_t(a)];
        return f;
      };
      const auto visit = [&](std::size_t off) {
        std::array<std::size_t, 4> p = idx;
        double s = 0.0;
        do s += raw[flat(p)];
        while (std::next_permutation(p.begin(), p.begin() + order));
        d[off] = s / double(permutations(std::span<const std::size_t>(idx.data(), std::size_t(order))));
      };
      if (order == 3) {
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t j = 0; j <= k; ++j)
            for (std::size_t i = 0; i <= j; ++i) {
              idx = {i, j, k, 0};
              visit(sorted3(i, j, k));
            }
      } else {
        for (std::size_t l = 0; l < n; ++l)
          for (std::size_t k = 0; k <= l; ++k)
            for (std::size_t j = 0; j <= k; ++j)
              for (std::size_t i = 0; i <= j; ++i) {
                idx = {i, j, k, l};
                visit(sorted4(i, j, k, l));
              }
      }
    }
  }
  return out;
}

double weighted_inner(const SymKernel& f, const SymKernel& g) {
  require_same_grid(f.grid(), g.grid());
  if (f.order() != g.order()) throw std::invalid_argument("inner product of kernels of different order");
  const auto w = f.grid()->widths();
  const std::size_t n = f.n();
  const auto a = f.data(), b = g.data();
  double s = 0.0;
  switch (f.order()) {
    case 0: return a[0] * b[0];
    case 1:
      for (std::size_t i = 0; i < n; ++i) s += w[i] * a[i] * b[i];
      return s;
    case 2:
      for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < n; ++j) r += w[j] * a[i * n + j] * b[i * n + j];
        s += w[i] * r;
      }
      return s;
    case 3:
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j <= k; ++j)
          for (std::size_t i = 0; i <= j; ++i) {
            const std::array<std::size_t, 3> id{i, j, k};
            const std::size_t o = sorted3(i, j, k);
            s += double(permutations(id)) * w[i] * w[j] * w[k] * a[o] * b[o];
          }
      return s;
    default:
      for (std::size_t l = 0; l < n; ++l)
        for (std::size_t k = 0; k <= l; ++k)
          for (std::size_t j = 0; j <= k; ++j)
            for (std::size_t i = 0; i <= j; ++i) {
              const std::array<std::size_t, 4> id{i, j, k, l};
              const std::size_t o = sorted4(i, j, k, l);
              s += double(permutations(id)) * w[i] * w[j] * w[k] * w[l] * a[o] * b[o];
            }
      return s;
  }
}

double weighted_norm2(const SymKernel& f) { return weighted_inner(f, f); }

SymKernel sym3_from_pairs(GridPtr g, const Eigen::MatrixXd& mats, const Eigen::MatrixXd& vecs) {
  SymKernel out(g, 3);
  const Eigen::Index n = Eigen::Index(out.n());
  if (mats.rows() != n * n || vecs.rows() != n || mats.cols() != vecs.cols())
    throw std::invalid_argument("sym3_from_pairs: shape mismatch");
  auto d = out.data();
  Eigen::MatrixXd wi(n, n);
  Eigen::VectorXd vi(n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    // W_i(j,k) = T(i,j,k), V_i(j,k) = T(j,k,i) with T(a,b,c) = sum_p A_p(a,b) v_p(c)
    wi.noalias() = mats.middleRows(i * n, n) * vecs.transpose();
    vi.noalias() = mats * vecs.row(i).transpose();
    for (Eigen::Index k = i; k < n; ++k)
      for (Eigen::Index j = i; j <= k; ++j)
        d[sorted3(std::size_t(i), std::size_t(j), std::size_t(k))] =
            (wi(j, k) + wi(k, j) + vi(j * n + k)) / 3.0;
  }
  return out;
}

SymKernel sym4_from_vec3(GridPtr g, const Eigen::MatrixXd& vecs, std::span<const SymKernel> c) {
  SymKernel out(g, 4);
  const std::size_t n = out.n();
  if (vecs.rows() != Eigen::Index(n) || vecs.cols() != Eigen::Index(c.size()))
    throw std::invalid_argument("sym4_from_vec3: shape mismatch");
  auto d = out.data();
  for (std::size_t p = 0; p < c.size(); ++p) {
    if (c[p].order() != 3) throw std::invalid_argument("sym4_from_vec3 expects order-3 kernels");
    const auto v = vecs.col(Eigen::Index(p));
    const auto cd = c[p].data();
    for (std::size_t l = 0; l < n; ++l)
      for (std::size_t k = 0; k <= l; ++k)
        for (std::size_t j = 0; j <= k; ++j)
          for (std::size_t i = 0; i <= j; ++i)
            d[sorted4(i, j, k, l)] +=
                0.25 * (v(Eigen::Index(i)) * cd[sorted3(j, k, l)] + v(Eigen::Index(j)) * cd[sorted3(i, k, l)] +
                        v(Eigen::Index(k)) * cd[sorted3(i, j, l)] + v(Eigen::Index(l)) * cd[sorted3(i, j, k)]);
  }
  return out;
}

SymKernel contract(const SymKernel& f, const SymKernel& g, int r) {
  require_same_grid(f.grid(), g.grid());
  const int k = f.order(), l = g.order();
  if (r < 0 || r > std::min(k, l)) throw std::invalid_argument("contraction index out of range");
  const int m = k + l - 2 * r;
  if (m > 4) throw std::invalid_argument("order overflow: contraction result above order 4");
  const std::size_t n = f.n();
  const auto w = f.grid()->widths();
  const std::vector<double> fr = f.full(), gr = g.full();
  const Eigen::Index rows = Eigen::Index(ipow(n, k - r)), mid = Eigen::Index(ipow(n, r)),
                     cols = Eigen::Index(ipow(n, l - r));
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> fm(fr.data(), rows, mid);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gm(gr.data(), mid, cols);
  Eigen::VectorXd wm(mid);
  for (Eigen::Index c = 0; c < mid; ++c) {
    double p = 1.0;
    std::size_t rem = std::size_t(c);
    for (int a = 0; a < r; ++a) {
      p *= w[rem % n];
      rem /= n;
    }
    wm(c) = p;
  }
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> prod = fm * wm.asDiagonal() * gm;
  return symmetrize(f.grid(), m, std::span<const double>(prod.data(), std::size_t(prod.size())));
}

}  // namespace rosen
