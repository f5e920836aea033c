#include "rosen/chaos.hpp"

#include "rosen/kernels.hpp"
#include "rosen/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rosen {

namespace {

constexpr std::array<double, 5> kFact{1.0, 1.0, 2.0, 6.0, 24.0};

double binom(int n, int k) { return kFact[std::size_t(n)] / (kFact[std::size_t(k)] * kFact[std::size_t(n - k)]); }

// Largest dense tensor (entries) a generic operation may expand.
constexpr std::size_t kDenseLimit = 60'000'000;

std::size_t ipow(std::size_t n, int k) {
  std::size_t r = 1;
  for (int i = 0; i < k; ++i) r *= n;
  return r;
}

void guard_dense(std::size_t n, int order, const char* what) {
  if (ipow(n, order) > kDenseLimit)
    throw std::length_error(std::string(what) + ": grid too large for a dense order-" + std::to_string(order) +
                            " tensor");
}

Eigen::Map<const Eigen::VectorXd> weights_of(const Grid& g) {
  return {g.widths().data(), Eigen::Index(g.size())};
}

Eigen::MatrixXd sym(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

double inner2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::VectorXd& w) {
  return (w.asDiagonal() * a.cwiseProduct(b) * w.asDiagonal()).sum();
}

// Sym(sum_z w_z v_z t(z, ...)) for a dense order-k kernel t, giving order k-1.
SymKernel contract_vector(const Eigen::VectorXd& wv, const SymKernel& t) {
  const GridPtr& g = t.grid();
  const std::size_t n = t.n();
  SymKernel out(g, t.order() - 1);
  auto d = out.data();
  if (t.order() == 3) {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        double s = 0.0;
        for (std::size_t z = 0; z < n; ++z) {
          const std::array<std::size_t, 3> id{z, a, b};
          s += wv(Eigen::Index(z)) * t.at(id);
        }
        d[a * n + b] = s;
      }
  } else {
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t b = 0; b <= c; ++b)
        for (std::size_t a = 0; a <= b; ++a) {
          double s = 0.0;
          for (std::size_t z = 0; z < n; ++z) {
            const std::array<std::size_t, 4> id{z, a, b, c};
            s += wv(Eigen::Index(z)) * t.at(id);
          }
          d[sorted3(a, b, c)] = s;
        }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- Factored3/4

void Factored3::add(const Eigen::MatrixXd& a, const Eigen::VectorXd& v, double scale) {
  if (n_ == 0) n_ = std::size_t(a.rows());
  if (a.rows() != Eigen::Index(n_) || a.cols() != Eigen::Index(n_) || v.size() != Eigen::Index(n_))
    throw std::invalid_argument("factored order-3 term: shape mismatch");
  a_.push_back(sym(a));
  v_.push_back(scale * v);
}

void Factored3::append(const Factored3& o, double scale) {
  for (std::size_t q = 0; q < o.terms(); ++q) {
    if (n_ == 0) n_ = o.n_;
    if (o.n_ != n_) throw std::invalid_argument("factored order-3 append: size mismatch");
    a_.push_back(o.a_[q]);
    v_.push_back(scale * o.v_[q]);
  }
}

void Factored3::scale(double c) {
  for (auto& v : v_) v *= c;
}

SymKernel Factored3::materialize(const GridPtr& g) const {
  const std::size_t n = g->size();
  guard_dense(n, 3, "materialize");
  if (empty()) return SymKernel(g, 3);
  if (n != n_) throw std::invalid_argument("materialize: grid mismatch");
  const Eigen::Index nn = Eigen::Index(n), Q = Eigen::Index(a_.size());
  Eigen::MatrixXd mats(nn * nn, Q), vecs(nn, Q);
  for (Eigen::Index q = 0; q < Q; ++q) {
    mats.col(q) = Eigen::Map<const Eigen::VectorXd>(a_[std::size_t(q)].data(), nn * nn);
    vecs.col(q) = v_[std::size_t(q)];
  }
  return sym3_from_pairs(g, mats, vecs);
}


void Factored4::add(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double scale) {
  if (n_ == 0) n_ = std::size_t(a.rows());
  if (a.rows() != Eigen::Index(n_) || a.cols() != Eigen::Index(n_) || b.rows() != Eigen::Index(n_) ||
      b.cols() != Eigen::Index(n_))
    throw std::invalid_argument("factored order-4 term: shape mismatch");
  a_.push_back(scale * sym(a));
  b_.push_back(sym(b));
}

void Factored4::append(const Factored4& o, double scale) {
  for (std::size_t q = 0; q < o.terms(); ++q) {
    if (n_ == 0) n_ = o.n_;
    if (o.n_ != n_) throw std::invalid_argument("factored order-4 append: size mismatch");
    a_.push_back(scale * o.a_[q]);
    b_.push_back(o.b_[q]);
  }
}

void Factored4::scale(double c) {
  for (auto& a : a_) a *= c;
}

SymKernel Factored4::materialize(const GridPtr& g) const {
  SymKernel out(g, 4);
  const std::size_t n = out.n();
  guard_dense(n, 4, "materialize");
  if (empty()) return out;
  if (n != n_) throw std::invalid_argument("materialize: grid mismatch");
  auto d = out.data();
  const auto Y = [&](std::size_t q, std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    const Eigen::Index I = Eigen::Index(i), J = Eigen::Index(j), K = Eigen::Index(k), L = Eigen::Index(l);
    return 0.5 * (a_[q](I, J) * b_[q](K, L) + b_[q](I, J) * a_[q](K, L));
  };
  for (std::size_t l = 0; l < n; ++l)
    for (std::size_t k = 0; k <= l; ++k)
      for (std::size_t j = 0; j <= k; ++j)
        for (std::size_t i = 0; i <= j; ++i) {
          double s = 0.0;
          for (std::size_t q = 0; q < a_.size(); ++q) s += Y(q, i, j, k, l) + Y(q, i, k, j, l) + Y(q, i, l, j, k);
          d[sorted4(i, j, k, l)] = s / 3.0;
        }
  return out;
}

namespace {

// One term Sym(a (x) b) in weighted coordinates, with a = F diag(c) F^T kept at its numerical rank.
struct LowRankTerm {
  Eigen::MatrixXd f, b;
  Eigen::VectorXd c;
};

LowRankTerm eigen_factor(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double tol = 1e-14 * std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (std::abs(lam(i)) > tol) keep.push_back(i);
  LowRankTerm t;
  t.f.resize(a.rows(), Eigen::Index(keep.size()));
  t.c.resize(Eigen::Index(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    t.f.col(Eigen::Index(k)) = es.eigenvectors().col(keep[k]);
    t.c(Eigen::Index(k)) = lam(keep[k]);
  }
  return t;
}

std::vector<LowRankTerm> low_rank_terms(const Factored4& f, std::span<const double> w) {
  const Eigen::Index n = Eigen::Index(f.n());
  if (Eigen::Index(w.size()) != n) throw std::invalid_argument("factored order-4: weight size mismatch");
  const Eigen::VectorXd sw = Eigen::Map<const Eigen::VectorXd>(w.data(), n).cwiseSqrt();
  std::vector<LowRankTerm> out;
  for (std::size_t q = 0; q < f.terms(); ++q) {
    const Eigen::MatrixXd a = sw.asDiagonal() * f.a(q) * sw.asDiagonal();
    const Eigen::MatrixXd b = sw.asDiagonal() * f.b(q) * sw.asDiagonal();
    // Sym(a (x) b) = Sym(b (x) a): factor whichever side has the lower rank.
    LowRankTerm t = eigen_factor(a);
    t.b = b;
    if (3 * t.c.size() > n) {
      LowRankTerm s = eigen_factor(b);
      if (s.c.size() < t.c.size()) {
        s.b = a;
        t = std::move(s);
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

// <Sym(A_q (x) B_q), Sym(A_r (x) B_r)> over all pairs, unweighted after the change of coordinates:
// (1/3)(1/2 [<A_q,A_r><B_q,B_r> + <A_q,B_r><B_q,A_r>] + 2 tr(A_q B_r B_q A_r)).
double low_rank_gram(const std::vector<LowRankTerm>& f, const std::vector<LowRankTerm>& g, bool same) {
  double total = 0.0;
  Eigen::MatrixXd xqr, xrq, gqr, y;
  for (std::size_t q = 0; q < f.size(); ++q) {
    const LowRankTerm& tq = f[q];
    const std::size_t r_end = same ? q + 1 : g.size();
    for (std::size_t r = 0; r < r_end; ++r) {
      const LowRankTerm& tr = g[r];
      xqr.noalias() = tq.f.transpose() * tr.b;  // F_q^T B_r
      xrq.noalias() = tr.f.transpose() * tq.b;  // F_r^T B_q
      gqr.noalias() = tq.f.transpose() * tr.f;
      y.noalias() = xqr * xrq.transpose();
      const double aa = (tq.c.asDiagonal() * gqr.cwiseAbs2() * tr.c.asDiagonal()).sum();
      const double bb = tq.b.cwiseProduct(tr.b).sum();
      const double ab = (tq.c.transpose() * xqr.cwiseProduct(tq.f.transpose()).rowwise().sum())(0);
      const double ba = (tr.c.transpose() * xrq.cwiseProduct(tr.f.transpose()).rowwise().sum())(0);
      const double t1 = (tq.c.asDiagonal() * y.cwiseProduct(gqr) * tr.c.asDiagonal()).sum();
      const double k = (0.5 * (aa * bb + ab * ba) + 2.0 * t1) / 3.0;
      total += (same && r != q) ? 2.0 * k : k;
    }
  }
  return total;
}

}  // namespace

double factored_norm2(const Factored4& f, std::span<const double> w) {
  if (f.empty()) return 0.0;
  const auto t = low_rank_terms(f, w);
  return low_rank_gram(t, t, true);
}

double factored_inner(const Factored4& f, const Factored4& g, std::span<const double> w) {
  if (f.empty() || g.empty()) return 0.0;
  if (f.n() != g.n()) throw std::invalid_argument("factored_inner: size mismatch");
  return low_rank_gram(low_rank_terms(f, w), low_rank_terms(g, w), false);
}

// ---------------------------------------------------------------- ChaosElement

ChaosElement::ChaosElement(GridPtr g) : grid_(std::move(g)) {
  if (!grid_) throw std::invalid_argument("ChaosElement needs a grid");
  f3_ = Factored3(grid_->size());
  f4_ = Factored4(grid_->size());
}

ChaosElement ChaosElement::constant(GridPtr g, double c) {
  ChaosElement e(g);
  e.add(SymKernel::scalar(g, c));
  return e;
}

ChaosElement ChaosElement::from_kernel(SymKernel k) {
  ChaosElement e(k.grid());
  e.add(k);
  return e;
}

int ChaosElement::max_order() const {
  for (int k = 4; k >= 0; --k)
    if (has(k)) return k;
  return -1;
}

bool ChaosElement::has(int order) const {
  if (order < 0 || order > 4) return false;
  if (k_[std::size_t(order)]) return true;
  return (order == 4 && !f4_.empty()) || (order == 3 && !f3_.empty());
}

SymKernel ChaosElement::kernel(int order) const {
  if (order < 0 || order > 4) throw std::invalid_argument("chaos order must lie in 0..4");
  if (order > valid_) throw std::logic_error("requested chaos order was clipped");
  SymKernel out = k_[std::size_t(order)] ? *k_[std::size_t(order)] : SymKernel(grid_, order);
  if (order == 4 && !f4_.empty()) out += f4_.materialize(grid_);
  if (order == 3 && !f3_.empty()) out += f3_.materialize(grid_);
  return out;
}

double ChaosElement::mean() const { return k_[0] ? k_[0]->data()[0] : 0.0; }

void ChaosElement::add(const SymKernel& k, double scale) {
  require_same_grid(grid_, k.grid());
  const std::size_t o = std::size_t(k.order());
  if (int(o) > valid_) return;
  if (k_[o]) {
    auto d = k_[o]->data();
    const auto s = k.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
  } else {
    k_[o] = k;
    if (scale != 1.0) *k_[o] *= scale;
  }
}

void ChaosElement::add_factored(const Factored4& f, double scale) {
  if (valid_ < 4 || f.empty()) return;
  if (f.n() != n()) throw std::invalid_argument("factored part: grid mismatch");
  f4_.append(f, scale);
}

void ChaosElement::add_factored(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double scale) {
  if (valid_ < 4) return;
  f4_.add(a, b, scale);
}

void ChaosElement::add_factored3(const Factored3& f, double scale) {
  if (valid_ < 3 || f.empty()) return;
  if (f.n() != n()) throw std::invalid_argument("factored part: grid mismatch");
  f3_.append(f, scale);
}

void ChaosElement::add_factored3(const Eigen::MatrixXd& a, const Eigen::VectorXd& v, double scale) {
  if (valid_ < 3) return;
  f3_.add(a, v, scale);
}

void ChaosElement::clip(int order) {
  if (order < 0) throw std::invalid_argument("order overflow: nothing of the element is known");
  if (order < valid_) {
    for (int k = order + 1; k <= 4; ++k) k_[std::size_t(k)].reset();
    if (order < 4) f4_ = Factored4(n());
    if (order < 3) f3_ = Factored3(n());
    valid_ = order;
  }
  complete_ = false;
}

ChaosElement ChaosElement::truncated(int order) const {
  ChaosElement e = *this;
  e.clip(order);
  return e;
}

ChaosElement& ChaosElement::operator+=(const ChaosElement& o) {
  require_same_grid(grid_, o.grid_);
  const int v = std::min(o.complete_ ? 4 : o.valid_, complete_ ? 4 : valid_);
  const bool comp = complete_ && o.complete_;
  for (int k = 0; k <= 4; ++k)
    if (o.k_[std::size_t(k)]) add(*o.k_[std::size_t(k)]);
  add_factored(o.f4_);
  add_factored3(o.f3_);
  if (!comp) clip(v);
  complete_ = comp;
  return *this;
}

ChaosElement& ChaosElement::operator-=(const ChaosElement& o) { return *this += (-1.0) * o; }

ChaosElement& ChaosElement::operator*=(double c) {
  for (auto& k : k_)
    if (k) *k *= c;
  f4_.scale(c);
  f3_.scale(c);
  return *this;
}

ChaosElement operator+(ChaosElement a, const ChaosElement& b) { return a += b; }
ChaosElement operator-(ChaosElement a, const ChaosElement& b) { return a -= b; }
ChaosElement operator*(double c, ChaosElement a) { return a *= c; }

// ---------------------------------------------------------------- evaluation

struct Evaluator::Impl {
  GridPtr grid;
  double c0 = 0.0;
  std::optional<Eigen::VectorXd> v1;
  std::optional<Eigen::MatrixXd> m2;
  double diag2 = 0.0;
  std::optional<SymKernel> k3;
  Eigen::VectorXd t3;
  std::optional<SymKernel> k4;
  Eigen::MatrixXd g4;
  double c4 = 0.0;
  // factored: I2(a) I2(b) - 4 I2(sym(a W b)) - 2 <a, b>
  std::vector<Eigen::MatrixXd> fa, fb, fc;
  std::vector<double> fda, fdb, fdc;
  double fconst = 0.0;
  // order-3 factored: I2(A) I1(v) - 2 I1(A W v)
  std::vector<Eigen::MatrixXd> ta;
  std::vector<Eigen::VectorXd> tv, tu;
  std::vector<double> tda;
};

namespace {

double quad_form(const Eigen::MatrixXd& m, const Eigen::VectorXd& x) { return x.dot(m * x); }

}  // namespace

Evaluator::Evaluator(const ChaosElement& f) {
  if (!f.complete()) throw std::invalid_argument("cannot evaluate a clipped chaos element");
  auto impl = std::make_shared<Impl>();
  impl->grid = f.grid();
  const auto& g = *f.grid();
  const std::size_t n = g.size();
  const Eigen::VectorXd w = weights_of(g);
  if (f.dense(0)) impl->c0 = f.dense(0)->data()[0];
  if (f.dense(1)) impl->v1 = Eigen::VectorXd(f.dense(1)->vec());
  if (f.dense(2)) {
    impl->m2 = Eigen::MatrixXd(f.dense(2)->mat());
    impl->diag2 = impl->m2->diagonal().dot(w);
  }
  if (f.dense(3)) {
    impl->k3 = *f.dense(3);
    impl->t3 = Eigen::VectorXd::Zero(Eigen::Index(n));
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (std::size_t a = 0; a < n; ++a) {
        const std::array<std::size_t, 3> id{a, a, c};
        s += w(Eigen::Index(a)) * impl->k3->at(id);
      }
      impl->t3(Eigen::Index(c)) = s;
    }
  }
  if (f.dense(4)) {
    impl->k4 = *f.dense(4);
    impl->g4 = Eigen::MatrixXd::Zero(Eigen::Index(n), Eigen::Index(n));
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t d = 0; d < n; ++d) {
        double s = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
          const std::array<std::size_t, 4> id{a, a, c, d};
          s += w(Eigen::Index(a)) * impl->k4->at(id);
        }
        impl->g4(Eigen::Index(c), Eigen::Index(d)) = s;
      }
    impl->c4 = 3.0 * impl->g4.diagonal().dot(w);
  }
  const Factored4& fq = f.factored();
  for (std::size_t q = 0; q < fq.terms(); ++q) {
    const Eigen::MatrixXd& a = fq.a(q);
    const Eigen::MatrixXd& b = fq.b(q);
    Eigen::MatrixXd c = sym(a * w.asDiagonal() * b);
    impl->fda.push_back(a.diagonal().dot(w));
    impl->fdb.push_back(b.diagonal().dot(w));
    impl->fdc.push_back(c.diagonal().dot(w));
    impl->fconst -= 2.0 * inner2(a, b, w);
    impl->fa.push_back(a);
    impl->fb.push_back(b);
    impl->fc.push_back(std::move(c));
  }
  const Factored3& f3 = f.factored3();
  for (std::size_t q = 0; q < f3.terms(); ++q) {
    impl->ta.push_back(f3.a(q));
    impl->tv.push_back(f3.v(q));
    impl->tu.push_back(f3.a(q) * w.cwiseProduct(f3.v(q)));
    impl->tda.push_back(f3.a(q).diagonal().dot(w));
  }
  impl_ = std::move(impl);
}

double Evaluator::operator()(const NoiseSample& ws) const {
  const Impl& m = *impl_;
  require_same_grid(m.grid, ws.grid);
  const std::size_t n = m.grid->size();
  if (ws.increments.size() != n) throw std::invalid_argument("noise sample length mismatch");
  const Eigen::Map<const Eigen::VectorXd> x(ws.increments.data(), Eigen::Index(n));
  const Eigen::VectorXd xv = x;
  double v = m.c0;
  if (m.v1) v += m.v1->dot(xv);
  if (m.m2) v += quad_form(*m.m2, xv) - m.diag2;
  if (m.k3) {
    const auto d = m.k3->data();
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j <= k; ++j) {
        const double xjk = xv(Eigen::Index(j)) * xv(Eigen::Index(k));
        for (std::size_t i = 0; i <= j; ++i) {
          const std::array<std::size_t, 3> id{i, j, k};
          s += double(permutations(id)) * d[sorted3(i, j, k)] * xv(Eigen::Index(i)) * xjk;
        }
      }
    v += s - 3.0 * m.t3.dot(xv);
  }
  if (m.k4) {
    const auto d = m.k4->data();
    double s = 0.0;
    for (std::size_t l = 0; l < n; ++l)
      for (std::size_t k = 0; k <= l; ++k)
        for (std::size_t j = 0; j <= k; ++j)
          for (std::size_t i = 0; i <= j; ++i) {
            const std::array<std::size_t, 4> id{i, j, k, l};
            s += double(permutations(id)) * d[sorted4(i, j, k, l)] * xv(Eigen::Index(i)) * xv(Eigen::Index(j)) *
                 xv(Eigen::Index(k)) * xv(Eigen::Index(l));
          }
    v += s - 6.0 * quad_form(m.g4, xv) + m.c4;
  }
  for (std::size_t q = 0; q < m.fa.size(); ++q) {
    const double ia = quad_form(m.fa[q], xv) - m.fda[q];
    const double ib = quad_form(m.fb[q], xv) - m.fdb[q];
    const double ic = quad_form(m.fc[q], xv) - m.fdc[q];
    v += ia * ib - 4.0 * ic;
  }
  for (std::size_t q = 0; q < m.ta.size(); ++q)
    v += (quad_form(m.ta[q], xv) - m.tda[q]) * m.tv[q].dot(xv) - 2.0 * m.tu[q].dot(xv);
  return v + m.fconst;
}

double evaluate(const ChaosElement& f, const NoiseSample& w) { return Evaluator(f)(w); }

// ---------------------------------------------------------------- inner products

namespace {

// <f_3, g_3> over the terms involving at least one factored part.
double order3_inner(const ChaosElement& f, const ChaosElement& g) {
  const Eigen::VectorXd w = weights_of(*f.grid());
  const Factored3& a = f.factored3();
  const Factored3& b = g.factored3();
  double s = 0.0;
  for (std::size_t p = 0; p < a.terms(); ++p)
    for (std::size_t q = 0; q < b.terms(); ++q) {
      // cross pairing: (A W u) . W (B W v)
      const Eigen::VectorXd awu = a.a(p) * w.cwiseProduct(b.v(q));
      const Eigen::VectorXd bwv = b.a(q) * w.cwiseProduct(a.v(p));
      s += (inner2(a.a(p), b.a(q), w) * a.v(p).dot(w.cwiseProduct(b.v(q))) + 2.0 * awu.dot(w.cwiseProduct(bwv))) / 3.0;
    }
  const auto mixed = [&](const SymKernel& t, const Factored3& fb) {
    double r = 0.0;
    for (std::size_t q = 0; q < fb.terms(); ++q) {
      const Eigen::VectorXd wu = w.cwiseProduct(fb.v(q));
      const SymKernel m = contract_vector(wu, t);
      r += inner2(Eigen::MatrixXd(m.mat()), fb.a(q), w);
    }
    return r;
  };
  if (f.dense(3)) s += mixed(*f.dense(3), b);
  if (g.dense(3)) s += mixed(*g.dense(3), a);
  return s;
}

}  // namespace

double expectation_inner(const ChaosElement& f, const ChaosElement& g) {
  require_same_grid(f.grid(), g.grid());
  const int top = std::max(f.max_order(), g.max_order());
  if ((!f.complete() && top > f.valid_order()) || (!g.complete() && top > g.valid_order()))
    throw std::invalid_argument("expectation_inner needs the paired orders of both elements");
  double s = 0.0;
  for (int k = 0; k <= 3; ++k)
    if (f.dense(k) && g.dense(k)) s += kFact[std::size_t(k)] * weighted_inner(*f.dense(k), *g.dense(k));
  if (f.has(3) && g.has(3)) s += 6.0 * order3_inner(f, g);
  if (f.has(4) && g.has(4)) {
    const auto w = f.grid()->widths();
    const bool dense_f = f.dense(4).has_value(), dense_g = g.dense(4).has_value();
    if (!dense_f && !dense_g) {
      s += 24.0 * factored_inner(f.factored(), g.factored(), w);
    } else {
      s += 24.0 * weighted_inner(f.kernel(4), g.kernel(4));
    }
  }
  return s;
}

double variance(const ChaosElement& f) {
  const double m = f.mean();
  return expectation_inner(f, f) - m * m;
}

// ---------------------------------------------------------------- products

namespace {

struct Part {
  int order;
  const SymKernel* dense;  // null for factored parts
  const Factored4* fact;
  const Factored3* f3 = nullptr;
};

std::vector<Part> parts_of(const ChaosElement& e) {
  std::vector<Part> out;
  for (int k = 0; k <= 4; ++k)
    if (e.dense(k)) out.push_back({k, &*e.dense(k), nullptr});
  if (!e.factored3().empty()) out.push_back({3, nullptr, nullptr, &e.factored3()});
  if (!e.factored().empty()) out.push_back({4, nullptr, &e.factored()});
  return out;
}

SymKernel densify(const Part& p, const GridPtr& g) {
  if (p.dense) return *p.dense;
  return p.f3 ? p.f3->materialize(g) : p.fact->materialize(g);
}

void contribute(const Part& pa, const Part& pb, int r, double coeff, ChaosElement& out) {
  const GridPtr& g = out.grid();
  const Eigen::VectorXd w = weights_of(*g);
  const Part& a = pa.order <= pb.order ? pa : pb;
  const Part& b = pa.order <= pb.order ? pb : pa;
  const int k = a.order, l = b.order;
  if (k == 0) {
    const double c = coeff * a.dense->data()[0];
    if (b.dense) out.add(*b.dense, c);
    else if (b.f3) out.add_factored3(*b.f3, c);
    else out.add_factored(*b.fact, c);
    return;
  }
  if (k == 1) {
    const Eigen::VectorXd v = a.dense->vec();
    if (l == 1) {
      const Eigen::VectorXd u = b.dense->vec();
      if (r == 0) out.add(SymKernel::matrix(g, v * u.transpose()), coeff);
      else out.add(SymKernel::scalar(g, coeff * v.dot(w.cwiseProduct(u))));
      return;
    }
    if (l == 2) {
      const Eigen::MatrixXd m = b.dense->mat();
      if (r == 0) {
        out.add_factored3(m, v, coeff);
      } else {
        const Eigen::VectorXd u = m * w.cwiseProduct(v);
        out.add(SymKernel::vector(g, std::vector<double>(u.data(), u.data() + u.size())), coeff);
      }
      return;
    }
    if (b.f3) {
      const Factored3& f = *b.f3;
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(Eigen::Index(f.n()), Eigen::Index(f.n()));
      for (std::size_t q = 0; q < f.terms(); ++q) {
        if (r == 0) {
          out.add_factored(f.a(q), v * f.v(q).transpose(), coeff);
        } else {
          const Eigen::VectorXd awv = f.a(q) * w.cwiseProduct(v);
          s += (f.v(q).dot(w.cwiseProduct(v)) * f.a(q) + 2.0 * sym(awv * f.v(q).transpose())) / 3.0;
        }
      }
      if (r == 1) out.add(SymKernel::matrix(g, s), coeff);
      return;
    }
    if (l == 3 && r == 0) {
      const SymKernel c = *b.dense;
      out.add(sym4_from_vec3(g, v, std::span<const SymKernel>(&c, 1)), coeff);
      return;
    }
    if (r == 1) {
      const Eigen::VectorXd wv = w.cwiseProduct(v);
      if (b.fact) {
        const Factored4& f = *b.fact;
        Factored3 t(f.n());
        for (std::size_t q = 0; q < f.terms(); ++q) {
          t.add(f.b(q), f.a(q) * wv, 0.5);
          t.add(f.a(q), f.b(q) * wv, 0.5);
        }
        out.add_factored3(t, coeff);
      } else {
        out.add(contract_vector(wv, *b.dense), coeff);
      }
      return;
    }
  }
  if (k == 2 && b.f3 && r >= 1) {
    const Eigen::MatrixXd B = a.dense->mat();
    const Factored3& f = *b.f3;
    if (r == 1) {
      Factored3 t(f.n());
      for (std::size_t q = 0; q < f.terms(); ++q) {
        t.add(B * w.asDiagonal() * f.a(q), f.v(q), 2.0 / 3.0);
        t.add(f.a(q), B * w.cwiseProduct(f.v(q)), 1.0 / 3.0);
      }
      out.add_factored3(t, coeff);
    } else {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(B.rows());
      for (std::size_t q = 0; q < f.terms(); ++q) {
        const Eigen::VectorXd bwu = B * w.cwiseProduct(f.v(q));
        s += (inner2(f.a(q), B, w) * f.v(q) + 2.0 * f.a(q) * w.cwiseProduct(bwu)) / 3.0;
      }
      out.add(SymKernel::vector(g, std::vector<double>(s.data(), s.data() + s.size())), coeff);
    }
    return;
  }
  if (k == 2 && (l == 2 || b.fact)) {
    const Eigen::MatrixXd A = a.dense->mat();
    if (l == 2) {
      const Eigen::MatrixXd B = b.dense->mat();
      if (r == 0) out.add_factored(A, B, coeff);
      else if (r == 1) out.add(SymKernel::matrix(g, A * w.asDiagonal() * B), coeff);
      else out.add(SymKernel::scalar(g, coeff * inner2(A, B, w)));
      return;
    }
    const Factored4& f = *b.fact;
    if (r == 1) {
      Factored4 t(f.n());
      for (std::size_t q = 0; q < f.terms(); ++q) {
        t.add(A * w.asDiagonal() * f.a(q), f.b(q), 0.5);
        t.add(A * w.asDiagonal() * f.b(q), f.a(q), 0.5);
      }
      out.add_factored(t, coeff);
      return;
    }
    if (r == 2) {
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(A.rows(), A.cols());
      const Eigen::MatrixXd wAw = w.asDiagonal() * A * w.asDiagonal();
      for (std::size_t q = 0; q < f.terms(); ++q) {
        s += (inner2(A, f.a(q), w) * f.b(q) + inner2(A, f.b(q), w) * f.a(q)) / 6.0;
        const Eigen::MatrixXd t = f.a(q) * wAw * f.b(q);
        s += (t + t.transpose()) / 3.0;
      }
      out.add(SymKernel::matrix(g, s), coeff);
      return;
    }
  }
  if (k == 4 && l == 4 && r == 4 && a.fact && b.fact) {
    out.add(SymKernel::scalar(g, coeff * factored_inner(*a.fact, *b.fact, g->widths())));
    return;
  }
  // generic dense route
  const SymKernel da = densify(a, g), db = densify(b, g);
  guard_dense(g->size(), std::max(k, l), "product");
  guard_dense(g->size(), k + l - 2 * r, "product");
  out.add(contract(da, db, r), coeff);
}

}  // namespace

ChaosElement product(const ChaosElement& f, const ChaosElement& g, int max_order) {
  require_same_grid(f.grid(), g.grid());
  if (max_order < 0 || max_order > 4) throw std::invalid_argument("max_order must lie in 0..4");
  if (!f.complete() && !g.complete())
    throw std::invalid_argument("order overflow: product of two clipped elements is undetermined");
  const int lf = std::max(f.max_order(), 0), lg = std::max(g.max_order(), 0);
  int valid = max_order;
  if (!f.complete()) valid = std::min(valid, f.valid_order() - lg);
  if (!g.complete()) valid = std::min(valid, g.valid_order() - lf);
  if (valid < 0) throw std::invalid_argument("order overflow: no order of the product is determined");
  const bool complete = f.complete() && g.complete() && lf + lg <= max_order;

  ChaosElement out(f.grid());
  for (const Part& a : parts_of(f))
    for (const Part& b : parts_of(g))
      for (int r = 0; r <= std::min(a.order, b.order); ++r) {
        const int m = a.order + b.order - 2 * r;
        if (m > valid) continue;
        const double coeff = kFact[std::size_t(r)] * binom(a.order, r) * binom(b.order, r);
        contribute(a, b, r, coeff, out);
      }
  if (!complete) out.clip(valid);
  return out;
}

ChaosElement poly_apply(std::span<const double> coeffs, const ChaosElement& f, int max_order) {
  const GridPtr& g = f.grid();
  if (coeffs.empty()) return ChaosElement(g);
  ChaosElement r = ChaosElement::constant(g, coeffs.back());
  for (std::size_t i = coeffs.size() - 1; i-- > 0;) {
    r = product(r, f, max_order);
    r += ChaosElement::constant(g, coeffs[i]);
  }
  return r;
}

// ---------------------------------------------------------------- free-slot fields

namespace {

std::size_t base_storage(int order, std::size_t n) {
  switch (order) {
    case 0: return 1;
    case 1: return n;
    case 2: return n * n;
    default: return choose3(n + 2);
  }
}

// Weighted isometry norm squared of a base kernel stored in `row`.
double row_norm2(int order, const double* row, std::span<const double> w) {
  const std::size_t n = w.size();
  double s = 0.0;
  switch (order) {
    case 0: return row[0] * row[0];
    case 1:
      for (std::size_t i = 0; i < n; ++i) s += w[i] * row[i] * row[i];
      return s;
    case 2:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s += w[i] * w[j] * row[i * n + j] * row[i * n + j];
      return 2.0 * s;
    default:
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j <= k; ++j)
          for (std::size_t i = 0; i <= j; ++i) {
            const std::array<std::size_t, 3> id{i, j, k};
            const double v = row[sorted3(i, j, k)];
            s += double(permutations(id)) * w[i] * w[j] * w[k] * v * v;
          }
      return 6.0 * s;
  }
}

}  // namespace

FreeSlotField::FreeSlotField(GridPtr g, int slots) : grid_(std::move(g)), slots_(slots) {
  if (!grid_) throw std::invalid_argument("FreeSlotField needs a grid");
  if (slots != 1 && slots != 2) throw std::invalid_argument("free-slot count must be 1 or 2");
}

std::size_t FreeSlotField::slot_count() const noexcept {
  const std::size_t n = grid_->size();
  return slots_ == 1 ? n : n * n;
}

const Eigen::MatrixXd& FreeSlotField::component(int base_order) const {
  const auto& c = comp_.at(std::size_t(base_order));
  if (!c) throw std::logic_error("field has no component of that base order");
  return *c;
}

Eigen::MatrixXd& FreeSlotField::component(int base_order) {
  auto& c = comp_.at(std::size_t(base_order));
  if (!c) throw std::logic_error("field has no component of that base order");
  return *c;
}

Eigen::MatrixXd& FreeSlotField::ensure(int base_order) {
  auto& c = comp_.at(std::size_t(base_order));
  if (!c)
    c = Eigen::MatrixXd::Zero(Eigen::Index(slot_count()), Eigen::Index(base_storage(base_order, grid_->size())));
  return *c;
}

int FreeSlotField::max_base_order() const {
  for (int k = 3; k >= 0; --k)
    if (comp_[std::size_t(k)]) return k;
  return -1;
}

bool FreeSlotField::is_zero() const {
  for (const auto& c : comp_)
    if (c && !c->isZero(0.0)) return false;
  return true;
}

ChaosElement FreeSlotField::at(std::size_t x) const {
  if (slots_ != 1) throw std::logic_error("field has two free slots");
  ChaosElement e(grid_);
  for (int k = 0; k <= 3; ++k) {
    if (!comp_[std::size_t(k)]) continue;
    SymKernel ker(grid_, k);
    auto d = ker.data();
    const auto row = comp_[std::size_t(k)]->row(Eigen::Index(x));
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = row(Eigen::Index(i));
    e.add(ker);
  }
  return e;
}

ChaosElement FreeSlotField::at(std::size_t x, std::size_t y) const {
  if (slots_ != 2) throw std::logic_error("field has one free slot");
  ChaosElement e(grid_);
  const std::size_t idx = x * grid_->size() + y;
  for (int k = 0; k <= 3; ++k) {
    if (!comp_[std::size_t(k)]) continue;
    SymKernel ker(grid_, k);
    auto d = ker.data();
    const auto row = comp_[std::size_t(k)]->row(Eigen::Index(idx));
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = row(Eigen::Index(i));
    e.add(ker);
  }
  return e;
}

double field_gap(const FreeSlotField& test, const FreeSlotField& ref) {
  require_same_grid(test.grid(), ref.grid());
  if (test.slots() != ref.slots()) throw std::invalid_argument("field_gap: slot counts differ");
  const auto w = test.grid()->widths();
  const std::size_t S = test.slot_count();
  std::vector<double> diff(S, 0.0), base(S, 0.0);
  for (int k = 0; k <= 3; ++k) {
    const bool ht = test.has(k), hr = ref.has(k);
    if (!ht && !hr) continue;
    const std::size_t cols = base_storage(k, test.grid()->size());
    std::vector<double> row(cols);
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double t = ht ? test.component(k)(Eigen::Index(s), Eigen::Index(c)) : 0.0;
        const double r = hr ? ref.component(k)(Eigen::Index(s), Eigen::Index(c)) : 0.0;
        row[c] = t - r;
      }
      diff[s] += row_norm2(k, row.data(), w);
      if (hr) {
        for (std::size_t c = 0; c < cols; ++c) row[c] = ref.component(k)(Eigen::Index(s), Eigen::Index(c));
        base[s] += row_norm2(k, row.data(), w);
      }
    }
  }
  const double dmax = std::sqrt(*std::max_element(diff.begin(), diff.end()));
  const double bmax = std::sqrt(*std::max_element(base.begin(), base.end()));
  return bmax > 0.0 ? dmax / bmax : dmax;
}

FreeSlotField malliavin_derivative(const ChaosElement& f, int m) {
  if (m != 1 && m != 2) throw std::invalid_argument("derivative order must be 1 or 2");
  if (!f.complete()) throw std::invalid_argument("cannot differentiate a clipped chaos element");
  const GridPtr& g = f.grid();
  const std::size_t n = g->size();
  FreeSlotField out(g, m);
  for (int k = m; k <= 4; ++k) {
    if (!f.has(k)) continue;
    if (k >= 3) guard_dense(n, k + (m == 2 ? 0 : 0), "malliavin_derivative");
    const SymKernel ker = f.kernel(k);
    const int b = k - m;
    Eigen::MatrixXd& c = out.ensure(b);
    const double scale = m == 1 ? double(k) : double(k * (k - 1));
    if (m == 1) {
      switch (k) {
        case 1: c.col(0) = ker.vec(); break;
        case 2: c = scale * Eigen::MatrixXd(ker.mat()); break;
        case 3:
          for (std::size_t x = 0; x < n; ++x)
            for (std::size_t a = 0; a < n; ++a)
              for (std::size_t bb = 0; bb < n; ++bb) {
                const std::array<std::size_t, 3> id{a, bb, x};
                c(Eigen::Index(x), Eigen::Index(a * n + bb)) = scale * ker.at(id);
              }
          break;
        default:
          for (std::size_t x = 0; x < n; ++x)
            for (std::size_t cc = 0; cc < n; ++cc)
              for (std::size_t bb = 0; bb <= cc; ++bb)
                for (std::size_t a = 0; a <= bb; ++a) {
                  const std::array<std::size_t, 4> id{a, bb, cc, x};
                  c(Eigen::Index(x), Eigen::Index(sorted3(a, bb, cc))) = scale * ker.at(id);
                }
      }
    } else {
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t y = 0; y < n; ++y) {
          const Eigen::Index row = Eigen::Index(x * n + y);
          switch (k) {
            case 2: {
              const std::array<std::size_t, 2> id{x, y};
              c(row, 0) = scale * ker.at(id);
              break;
            }
            case 3:
              for (std::size_t a = 0; a < n; ++a) {
                const std::array<std::size_t, 3> id{a, x, y};
                c(row, Eigen::Index(a)) = scale * ker.at(id);
              }
              break;
            default:
              for (std::size_t a = 0; a < n; ++a)
                for (std::size_t bb = 0; bb < n; ++bb) {
                  const std::array<std::size_t, 4> id{a, bb, x, y};
                  c(row, Eigen::Index(a * n + bb)) = scale * ker.at(id);
                }
          }
        }
    }
  }
  return out;
}

FreeSlotField nabla(double alpha, const ChaosElement& f) {
  FreeSlotField d = malliavin_derivative(f, 1);
  const auto op = f.grid()->frac_operator(alpha);
  for (int k = 0; k <= 3; ++k)
    if (d.has(k)) d.component(k) = op->left_matrix() * d.component(k);
  return d;
}

FreeSlotField nabla2(double alpha, const ChaosElement& f) {
  FreeSlotField d = malliavin_derivative(f, 2);
  const auto op = f.grid()->frac_operator(alpha);
  const Eigen::MatrixXd& K = op->left_matrix();
  const Eigen::Index n = K.rows();
  for (int k = 0; k <= 2; ++k) {
    if (!d.has(k)) continue;
    Eigen::MatrixXd& c = d.component(k);
    for (Eigen::Index s = 0; s < c.cols(); ++s) {
      // slot index x*n + y; the column viewed column-major is M(y, x)
      Eigen::Map<Eigen::MatrixXd> m(c.col(s).data(), n, n);
      const Eigen::MatrixXd r = K * m * K.transpose();
      m = r;
    }
  }
  return d;
}

ChaosElement nabla_at(double alpha, const ChaosElement& f, std::size_t cell) {
  if (!f.complete()) throw std::invalid_argument("cannot differentiate a clipped chaos element");
  const GridPtr& g = f.grid();
  const std::size_t n = g->size();
  if (cell >= n) throw std::out_of_range("nabla_at: cell out of range");
  const auto op = g->frac_operator(alpha);
  const Eigen::VectorXd krow = op->left_matrix().row(Eigen::Index(cell)).transpose();
  ChaosElement out(g);
  if (f.dense(1)) out.add(SymKernel::scalar(g, krow.dot(f.dense(1)->vec())));
  if (f.dense(2)) {
    const Eigen::VectorXd v = 2.0 * (f.dense(2)->mat() * krow);
    out.add(SymKernel::vector(g, std::vector<double>(v.data(), v.data() + v.size())));
  }
  if (f.dense(3)) {
    const SymKernel& t = *f.dense(3);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(Eigen::Index(n), Eigen::Index(n));
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b <= a; ++b) {
        double s = 0.0;
        for (std::size_t x = 0; x < n; ++x) {
          const std::array<std::size_t, 3> id{a, b, x};
          s += krow(Eigen::Index(x)) * t.at(id);
        }
        m(Eigen::Index(a), Eigen::Index(b)) = m(Eigen::Index(b), Eigen::Index(a)) = 3.0 * s;
      }
    out.add(SymKernel::matrix(g, m));
  }
  const Factored3& f3 = f.factored3();
  if (!f3.empty()) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(Eigen::Index(n), Eigen::Index(n));
    for (std::size_t q = 0; q < f3.terms(); ++q) {
      const Eigen::VectorXd ak = f3.a(q) * krow;
      m += krow.dot(f3.v(q)) * f3.a(q) + 2.0 * sym(ak * f3.v(q).transpose());
    }
    out.add(SymKernel::matrix(g, m));
  }
  if (f.dense(4)) {
    guard_dense(n, 4, "nabla_at");
    out.add(contract_vector(krow, *f.dense(4)), 4.0);
  }
  const Factored4& f4 = f.factored();
  for (std::size_t q = 0; q < f4.terms(); ++q) {
    out.add_factored3(f4.a(q), f4.b(q) * krow, 2.0);
    out.add_factored3(f4.b(q), f4.a(q) * krow, 2.0);
  }
  return out;
}

ChaosElement nabla2_diagonal_at(const TransferTensor& tt, const ChaosElement& f, std::size_t p) {
  if (!f.complete()) throw std::invalid_argument("cannot differentiate a clipped chaos element");
  const GridPtr& g = f.grid();
  const std::size_t n = g->size();
  if (tt.size() != n) throw std::invalid_argument("transfer tensor built on another grid");
  const Eigen::VectorXd w = weights_of(*g);
  // weights of the exact diagonal average: M_p(x,y) w_x w_y / tau_p
  const Eigen::MatrixXd mt = w.asDiagonal() * tt.block(p) * w.asDiagonal() / tt.tau(p);
  ChaosElement out(g);
  if (f.dense(2)) out.add(SymKernel::scalar(g, 2.0 * mt.cwiseProduct(f.dense(2)->mat()).sum()));
  if (f.dense(3)) {
    const SymKernel& t = *f.dense(3);
    std::vector<double> v(n, 0.0);
    for (std::size_t z = 0; z < n; ++z) {
      double s = 0.0;
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t y = 0; y < n; ++y) {
          const std::array<std::size_t, 3> id{z, x, y};
          s += mt(Eigen::Index(x), Eigen::Index(y)) * t.at(id);
        }
      v[z] = 6.0 * s;
    }
    out.add(SymKernel::vector(g, std::move(v)));
  }
  const Factored3& f3 = f.factored3();
  if (!f3.empty()) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(Eigen::Index(n));
    for (std::size_t q = 0; q < f3.terms(); ++q)
      v += 2.0 * (f3.a(q).cwiseProduct(mt).sum() * f3.v(q) + 2.0 * f3.a(q) * (mt * f3.v(q)));
    out.add(SymKernel::vector(g, std::vector<double>(v.data(), v.data() + v.size())));
  }
  const Factored4& f4 = f.factored();
  if (!f4.empty()) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(Eigen::Index(n), Eigen::Index(n));
    for (std::size_t q = 0; q < f4.terms(); ++q) {
      const Eigen::MatrixXd& a = f4.a(q);
      const Eigen::MatrixXd& b = f4.b(q);
      m += 2.0 * (b.cwiseProduct(mt).sum() * a + a.cwiseProduct(mt).sum() * b);
      const Eigen::MatrixXd amb = a * mt * b;
      m += 4.0 * (amb + amb.transpose());
    }
    out.add(SymKernel::matrix(g, m));
  }
  if (f.dense(4)) {
    guard_dense(n, 4, "nabla2_diagonal");
    const SymKernel& t = *f.dense(4);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(Eigen::Index(n), Eigen::Index(n));
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        double s = 0.0;
        for (std::size_t x = 0; x < n; ++x)
          for (std::size_t y = 0; y < n; ++y) {
            const std::array<std::size_t, 4> id{a, b, x, y};
            s += mt(Eigen::Index(x), Eigen::Index(y)) * t.at(id);
          }
        m(Eigen::Index(a), Eigen::Index(b)) = 12.0 * s;
      }
    out.add(SymKernel::matrix(g, m));
  }
  return out;
}

std::vector<ChaosElement> nabla2_diagonal(const TransferTensor& tt, const ChaosElement& f) {
  std::vector<ChaosElement> out;
  out.reserve(tt.time_cells());
  for (std::size_t p = 0; p < tt.time_cells(); ++p) out.push_back(nabla2_diagonal_at(tt, f, p));
  return out;
}

// ---------------------------------------------------------------- processes

ChaosProcess::ChaosProcess(GridPtr g) : grid(std::move(g)) {
  if (!grid) throw std::invalid_argument("ChaosProcess needs a grid");
  values.assign(grid->time_count(), ChaosElement(grid));
}

ChaosProcess::ChaosProcess(GridPtr g, std::vector<ChaosElement> v) : grid(std::move(g)), values(std::move(v)) {
  if (!grid) throw std::invalid_argument("ChaosProcess needs a grid");
  if (values.size() != grid->time_count()) throw std::invalid_argument("ChaosProcess: one value per time cell");
  for (const auto& e : values) require_same_grid(grid, e.grid());
}

const ChaosElement& ChaosProcess::at_cell(std::size_t grid_cell) const {
  if (grid_cell < grid->first_time() || grid_cell >= grid->size())
    throw std::out_of_range("process queried outside [0, t_max]");
  return values[grid_cell - grid->first_time()];
}

ChaosProcess deterministic_process(const GridPtr& g, std::span<const double> per_cell) {
  if (per_cell.size() != g->time_count()) throw std::invalid_argument("one value per time cell expected");
  std::vector<ChaosElement> v;
  v.reserve(per_cell.size());
  for (double c : per_cell) v.push_back(ChaosElement::constant(g, c));
  return ChaosProcess(g, std::move(v));
}

std::vector<double> cell_averages(const Grid& g, const std::function<double(double)>& fn) {
  const quad::Rule& r = quad::gauss_legendre(16);
  std::vector<double> out;
  for (std::size_t i = g.first_time(); i < g.size(); ++i) {
    const double a = std::max(0.0, g.left(i)), b = g.right(i);
    double s = 0.0;
    for (std::size_t m = 0; m < r.x.size(); ++m) s += r.w[m] * fn(a + (b - a) * r.x[m]);
    out.push_back(s);
  }
  return out;
}

ChaosProcess deterministic_process(const GridPtr& g, const std::function<double(double)>& fn) {
  const auto v = cell_averages(*g, fn);
  return deterministic_process(g, std::span<const double>(v));
}

ChaosProcess wiener_process(const GridPtr& g) {
  const Grid& gr = *g;
  std::vector<ChaosElement> v;
  std::vector<double> k(gr.size(), 0.0);
  for (std::size_t p = gr.first_time(); p < gr.size(); ++p) {
    const double a = std::max(0.0, gr.left(p));
    std::vector<double> kp = k;
    kp[p] = 0.5 * (gr.right(p) - a) / gr.width(p);
    v.push_back(ChaosElement::from_kernel(SymKernel::vector(g, std::move(kp))));
    k[p] = (gr.right(p) - a) / gr.width(p);
  }
  return ChaosProcess(g, std::move(v));
}

ChaosProcess scale_process(const ChaosProcess& p, std::span<const double> per_cell) {
  if (per_cell.size() != p.size()) throw std::invalid_argument("one factor per time cell expected");
  ChaosProcess out = p;
  for (std::size_t i = 0; i < p.size(); ++i) out.values[i] *= per_cell[i];
  return out;
}

}  // namespace rosen
