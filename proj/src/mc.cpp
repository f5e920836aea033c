#include "rosen/mc.hpp"

#include "rosen/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>

namespace rosen {

NoiseSample sample_noise(const GridPtr& g, std::uint64_t seed, std::uint64_t path) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(path), std::uint32_t(path >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> nd;
  NoiseSample w{g, std::vector<double>(g->size())};
  for (std::size_t i = 0; i < g->size(); ++i) w.increments[i] = nd(rng) * std::sqrt(g->width(i));
  return w;
}

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

McEstimate summarize(std::span<const double> values, std::uint64_t seed) {
  const std::size_t n = values.size();
  if (n < 2) throw std::invalid_argument("an estimate needs at least two paths");
  const double mean = pairwise_sum(values) / double(n);
  std::vector<double> dev(n);
  for (std::size_t i = 0; i < n; ++i) dev[i] = (values[i] - mean) * (values[i] - mean);
  const double var = pairwise_sum(dev) / double(n - 1);
  return {mean, std::sqrt(var / double(n)), n, seed};
}

namespace {

std::size_t resolve_workers(std::size_t workers, std::size_t paths) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(workers, paths));
}

template <class Body>
void run_paths(std::size_t paths, std::size_t workers, Body&& body) {
  workers = resolve_workers(workers, paths);
  if (workers == 1) {
    for (std::size_t p = 0; p < paths; ++p) body(p);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < workers; ++k)
    pool.emplace_back([&, k] {
      try {
        for (std::size_t p = k; p < paths; p += workers) body(p);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void check_finite(double v, std::size_t path) {
  if (!std::isfinite(v)) throw std::runtime_error("functional returned a non-finite value on path " + std::to_string(path));
}

}  // namespace

std::vector<double> sample_values(const GridPtr& g, const Functional& f, std::size_t paths, std::uint64_t seed,
                                  std::size_t workers) {
  std::vector<double> out(paths);
  run_paths(paths, workers, [&](std::size_t p) {
    const double v = f(sample_noise(g, seed, p));
    check_finite(v, p);
    out[p] = v;
  });
  return out;
}

std::vector<std::vector<double>> sample_vectors(const GridPtr& g, const VectorFunctional& f, std::size_t outputs,
                                                std::size_t paths, std::uint64_t seed, std::size_t workers) {
  std::vector<std::vector<double>> out(outputs, std::vector<double>(paths));
  run_paths(paths, workers, [&](std::size_t p) {
    const auto v = f(sample_noise(g, seed, p));
    if (v.size() != outputs) throw std::logic_error("functional returned the wrong number of outputs");
    for (std::size_t k = 0; k < outputs; ++k) {
      check_finite(v[k], p);
      out[k][p] = v[k];
    }
  });
  return out;
}

std::vector<std::vector<double>> sample_blocks(const GridPtr& g, const BlockFunctional& f, std::size_t outputs,
                                               std::size_t paths, std::uint64_t seed, std::size_t block,
                                               std::size_t workers) {
  if (block == 0) throw std::invalid_argument("block width must be positive");
  std::vector<std::vector<double>> out(outputs, std::vector<double>(paths));
  const std::size_t n = g->size(), blocks = (paths + block - 1) / block;
  run_paths(blocks, workers, [&](std::size_t b) {
    const std::size_t first = b * block, width = std::min(block, paths - first);
    Eigen::MatrixXd noise{Eigen::Index(n), Eigen::Index(width)};
    for (std::size_t j = 0; j < width; ++j) {
      const auto w = sample_noise(g, seed, first + j);
      noise.col(Eigen::Index(j)) = Eigen::Map<const Eigen::VectorXd>(w.increments.data(), Eigen::Index(n));
    }
    const Eigen::MatrixXd v = f(noise);
    if (v.rows() != Eigen::Index(outputs) || v.cols() != Eigen::Index(width))
      throw std::logic_error("block functional returned the wrong shape");
    for (std::size_t k = 0; k < outputs; ++k)
      for (std::size_t j = 0; j < width; ++j) {
        check_finite(v(Eigen::Index(k), Eigen::Index(j)), first + j);
        out[k][first + j] = v(Eigen::Index(k), Eigen::Index(j));
      }
  });
  return out;
}

McEstimate estimate(const GridPtr& g, const Functional& f, std::size_t paths, std::uint64_t seed,
                    std::size_t workers) {
  if (paths < 2) throw std::invalid_argument("an estimate needs at least two paths");
  const auto v = sample_values(g, f, paths, seed, workers);
  return summarize(v, seed);
}

PathTable simulate_paths(Hurst h, const GridPtr& g, std::size_t paths, std::uint64_t seed, std::size_t workers) {
  const Grid& gr = *g;
  if (!gr.zero_is_edge()) throw std::invalid_argument("simulate_paths: 0 must be a cell edge");
  const ConstantSet cs = derived_constants(h);
  const Eigen::Index P = Eigen::Index(gr.time_count()), n = Eigen::Index(gr.size());
  const Eigen::Index first = Eigen::Index(gr.first_time());
  const Eigen::MatrixXd L = cs.cSmallB * fbm_transfer(gr, h.value() - 0.5, 0.0, gr.t_max());
  const auto tt = gr.transfer(0.5 * h.value());
  const Eigen::Index Q = Eigen::Index(tt->nodes_per_cell());
  const Eigen::MatrixXd& F = tt->factors();
  const Eigen::VectorXd& om = tt->weights();
  const Eigen::Map<const Eigen::VectorXd> wv(gr.widths().data(), n);
  const Eigen::VectorXd dm = (F.array().square().colwise() * wv.array()).colwise().sum().transpose();

  // Per block: increments of each process over every time cell, stacked as 3P rows.
  const BlockFunctional body = [&](const Eigen::MatrixXd& xi) {
    const Eigen::Index b = xi.cols();
    Eigen::MatrixXd out(3 * P, b);
    out.topRows(P) = xi.middleRows(first, P);
    out.middleRows(P, P) = L.transpose() * xi;
    const Eigen::MatrixXd z = (F.transpose() * xi).array().square().colwise() - dm.array();
    for (Eigen::Index p = 0; p < P; ++p)
      out.row(2 * P + p) = cs.cSmallR * (om.segment(p * Q, Q).transpose() * z.middleRows(p * Q, Q));
    return out;
  };
  const auto v = sample_blocks(g, body, std::size_t(3 * P), paths, seed, 128, workers);

  PathTable t;
  t.times.push_back(0.0);
  for (Eigen::Index p = 0; p < P; ++p) t.times.push_back(gr.right(std::size_t(first + p)));
  Eigen::MatrixXd* dst[] = {&t.w, &t.b, &t.r};
  for (Eigen::Index k = 0; k < 3; ++k) {
    Eigen::MatrixXd& m = *dst[k];
    m = Eigen::MatrixXd::Zero(P + 1, Eigen::Index(paths));
    for (Eigen::Index p = 0; p < P; ++p)
      for (std::size_t j = 0; j < paths; ++j)
        m(p + 1, Eigen::Index(j)) = m(p, Eigen::Index(j)) + v[std::size_t(k * P + p)][j];
  }
  return t;
}

double cumulant3_exact(const SymKernel& f) {
  if (f.order() != 2) throw std::invalid_argument("cumulant3_exact needs an order-2 kernel");
  const auto& w = f.grid()->widths();
  const Eigen::Map<const Eigen::VectorXd> wv(w.data(), Eigen::Index(w.size()));
  const Eigen::MatrixXd fw = f.mat() * wv.asDiagonal();
  const Eigen::MatrixXd sq = fw * fw;
  return 8.0 * (sq.array() * fw.transpose().array()).sum();
}

}  // namespace rosen
