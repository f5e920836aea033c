#include "rosen/cli.hpp"

#include "rosen/chaos.hpp"
#include "rosen/constants.hpp"
#include "rosen/formulas.hpp"
#include "rosen/integrators.hpp"
#include "rosen/kernels.hpp"
#include "rosen/mc.hpp"
#include "rosen/report.hpp"
#include "rosen/sym_kernel.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace rosen {

namespace {

using nlohmann::json;

constexpr std::size_t kBetaCells = 4096;     // Beta identity quadrature
constexpr std::size_t kDualityCells = 12;    // random finite-chaos inputs stay small
constexpr std::size_t kDualityTrials = 20;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

std::vector<std::size_t> parse_eps(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t pos = 0;
    const unsigned long v = std::stoul(item, &pos);
    if (pos != item.size()) throw std::invalid_argument("bad epsilon multiple: " + item);
    out.push_back(v);
  }
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw std::invalid_argument("bad boolean: " + s);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument("config key " + key + ": not a number: " + v);
  return d;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d < 0 || d != std::floor(d)) throw std::invalid_argument("config key " + key + ": not a count: " + v);
  return std::size_t(d);
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["hurst"] = c.hurst;
  j["grid_n"] = c.grid_n;
  j["t_min"] = c.t_min;
  j["t_max"] = c.t_max;
  j["paths"] = c.paths;
  j["seed"] = c.seed;
  j["epsilons"] = c.epsilons;
  j["tolerances"] = c.tolerances;
  j["output_dir"] = c.output_dir;
  j["refine"] = c.refine;
  // workers is omitted on purpose: artifacts must not depend on it
  return j;
}

// Collects checks and files for one subcommand.
class Run {
 public:
  Run(std::string name, const ExperimentConfig& cfg) : name_(std::move(name)), cfg_(cfg) {}

  const ExperimentConfig& cfg() const { return cfg_; }
  Hurst hurst() const { return Hurst(cfg_.hurst); }
  GridPtr grid(std::size_t n) const { return make_grid(standard_spec(n, cfg_.t_min, cfg_.t_max)); }
  double tol(const std::string& check) const { return cfg_.tolerances.at(check); }
  json& data() { return data_; }

  void add(CheckResult c) { checks_.push_back(std::move(c)); }
  void add_strict_decrease(const std::string& name, double before, double after) {
    add({name, after - before, 0.0, 0.0, after < before});
  }
  void csv(const std::string& file, std::string body) { files_.emplace_back(file, std::move(body)); }

  int finish() const {
    namespace fs = std::filesystem;
    const fs::path dir(cfg_.output_dir);
    fs::create_directories(dir);
    std::string header;
    const json conf = config_json(cfg_);
    for (const auto& el : conf.items()) header += "# " + el.key() + "=" + el.value().dump() + "\n";
    header += "# subcommand=" + name_ + "\n";
    const auto write = [&](const std::string& file, const std::string& body) {
      std::ofstream os(dir / file, std::ios::binary | std::ios::trunc);
      if (!os) throw std::runtime_error("cannot write " + (dir / file).string());
      os << body;
    };
    for (const auto& [file, body] : files_) write(file, header + body);

    bool pass = true;
    std::string table = csv_line({"check", "value", "target", "tol", "pass"});
    json arr = json::array();
    for (const auto& c : checks_) {
      pass = pass && c.pass;
      table += csv_line({c.check, format_number(c.value), format_number(c.target), format_number(c.tol),
                         c.pass ? "true" : "false"});
      arr.push_back({{"check", c.check}, {"value", c.value}, {"target", c.target}, {"tol", c.tol}, {"pass", c.pass}});
    }
    write(name_ + "_checks.csv", header + table);
    json j;
    j["subcommand"] = name_;
    j["config"] = config_json(cfg_);
    j["checks"] = arr;
    j["pass"] = pass;
    if (!data_.is_null()) j["data"] = data_;
    write(name_ + ".json", j.dump(2) + "\n");

    for (const auto& c : checks_)
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.check << " value=" << format_number(c.value)
                << " target=" << format_number(c.target) << " tol=" << format_number(c.tol) << "\n";
    std::cout << name_ << ": " << (pass ? "pass" : "FAIL") << " (" << (dir / (name_ + ".json")).string() << ")\n";
    return pass ? 0 : 1;
  }

 private:
  std::string name_;
  ExperimentConfig cfg_;
  std::vector<CheckResult> checks_;
  std::vector<std::pair<std::string, std::string>> files_;
  json data_;
};

// ---------------------------------------------------------------- subcommands

void cmd_constants(Run& run) {
  const double hv = run.cfg().hurst;
  std::string table = csv_line({"hurst", "cBigB", "cBigR", "cSmallB", "cSmallR", "cBR", "cBR_closed", "c1", "c2",
                                "c3", "kappa3"});
  double worst_br = 0.0, worst_c2 = 0.0;
  const auto row = [&](const ConstantSet& c) {
    table += csv_line({format_number(c.h), format_number(c.cBigB), format_number(c.cBigR), format_number(c.cSmallB),
                       format_number(c.cSmallR), format_number(c.cBR), format_number(c.cBR_closed),
                       format_number(c.c1), format_number(c.c2), format_number(c.c3), format_number(c.kappa3)});
  };
  const auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  for (int k = 0; k <= 8; ++k) {
    const ConstantSet c = derived_constants(Hurst(0.55 + 0.05 * k));
    row(c);
    worst_br = std::max(worst_br, rel(c.cBR, c.cBR_closed));
    worst_c2 = std::max(worst_c2, rel(c.c2, c.c1 * std::sqrt(2.0 * c.h * (2.0 * c.h - 1.0))));
  }
  const ConstantSet c = derived_constants(Hurst(hv));
  run.data() = {{"h", c.h},         {"cBigB", c.cBigB},   {"cBigR", c.cBigR},        {"cSmallB", c.cSmallB},
                {"cSmallR", c.cSmallR}, {"cBR", c.cBR},   {"cBR_closed", c.cBR_closed}, {"c1", c.c1},
                {"c2", c.c2},       {"c3", c.c3},         {"kappa3", c.kappa3}};
  run.add(check_rel("cBR_formulas", c.cBR, c.cBR_closed, run.tol("cBR_formulas")));
  run.add(check_rel("c2_identity", c.c2, c.c1 * std::sqrt(2.0 * hv * (2.0 * hv - 1.0)), run.tol("c2_identity")));
  run.add(check_upper("cBR_formulas_sweep", worst_br, 0.0, run.tol("cBR_formulas")));
  run.add(check_upper("c2_identity_sweep", worst_c2, 0.0, run.tol("c2_identity")));
  run.csv("constants.csv", table);
}

void cmd_simulate(Run& run) {
  const auto& cfg = run.cfg();
  const GridPtr g = run.grid(cfg.grid_n);
  const PathTable t = simulate_paths(run.hurst(), g, cfg.paths, cfg.seed, cfg.workers);
  std::string body = csv_line({"path", "t", "W", "B", "R"});
  for (std::size_t j = 0; j < cfg.paths; ++j)
    for (std::size_t k = 0; k < t.times.size(); ++k) {
      const auto r = Eigen::Index(k), c = Eigen::Index(j);
      body += csv_line({std::to_string(j), format_number(t.times[k]), format_number(t.w(r, c)),
                        format_number(t.b(r, c)), format_number(t.r(r, c))});
    }
  run.csv("simulate_paths.csv", body);
  run.data() = {{"paths", cfg.paths}, {"times", t.times.size()}};
}

void cmd_kernels(Run& run) {
  const auto& cfg = run.cfg();
  const Hurst h = run.hurst();
  const GridPtr g = run.grid(cfg.grid_n);
  const double T = cfg.t_max, H = h.value();

  const GridFn1 kb = fbm_kernel(h, T, g);
  double eb = 0.0;
  for (std::size_t i = 0; i < g->size(); ++i) eb += kb[i] * kb[i] * g->width(i);
  const SymKernel kr = rosenblatt_kernel(h, T, g);
  const double er = 2.0 * weighted_norm2(kr);
  run.add(check_rel("fbm_isometry", eb, std::pow(T, 2.0 * H), run.tol("fbm_isometry")));
  run.add(check_rel("rosenblatt_isometry", er, std::pow(T, 2.0 * H), run.tol("rosenblatt_isometry")));

  std::string beta = csv_line({"alpha", "u", "v", "quadrature", "closed_form", "ratio"});
  for (double a : {0.2, 0.25, 0.375}) {
    const auto [q, c] = beta_kernel_identity(a, 0.0, 1.0, kBetaCells);
    beta += csv_line({format_number(a), "0", "1", format_number(q), format_number(c), format_number(q / c)});
    run.add(check_rel("beta_identity_alpha_" + format_number(a), q / c, 1.0, run.tol("beta_identity")));
  }
  run.csv("beta_identity.csv", beta);

  // Sampled covariance at grid edges against the closed form.
  const PathTable t = simulate_paths(h, g, cfg.paths, cfg.seed, cfg.workers);
  const auto at = [&](double s) {
    std::size_t best = 0;
    for (std::size_t k = 0; k < t.times.size(); ++k)
      if (std::abs(t.times[k] - s) < std::abs(t.times[best] - s)) best = k;
    return best;
  };
  std::string cov = csv_line({"s", "t", "mc_mean", "mc_se", "exact", "stderrs"});
  const std::pair<double, double> pairs[] = {{0.25, 0.5}, {0.5, 0.5}, {0.25, 1.0}, {0.75, 1.0}, {1.0, 1.0}};
  for (const auto& [s0, t0] : pairs) {
    const std::size_t a = at(s0 * T), b = at(t0 * T);
    const Eigen::VectorXd prod = t.b.row(Eigen::Index(a)).cwiseProduct(t.b.row(Eigen::Index(b))).transpose();
    const McEstimate e = summarize(std::span<const double>(prod.data(), std::size_t(prod.size())), cfg.seed);
    const double exact = fbm_covariance(h, t.times[a], t.times[b]);
    const double z = std::abs(e.mean - exact) / e.std_error;
    cov += csv_line({format_number(t.times[a]), format_number(t.times[b]), format_number(e.mean),
                     format_number(e.std_error), format_number(exact), format_number(z)});
    run.add(check_upper("fbm_covariance_" + format_number(t.times[a]) + "_" + format_number(t.times[b]), z, 0.0,
                        run.tol("covariance_stderr")));
  }
  run.csv("fbm_covariance.csv", cov);

  std::string cells = csv_line({"cell", "left", "right", "fbm_kernel"});
  for (std::size_t i = 0; i < g->size(); ++i)
    cells += csv_line({std::to_string(i), format_number(g->left(i)), format_number(g->right(i)), format_number(kb[i])});
  run.csv("fbm_kernel.csv", cells);
  std::string rk = csv_line({"i", "j", "value"});
  const auto m = kr.mat();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i; j < m.cols(); ++j)
      if (m(i, j) != 0.0) rk += csv_line({std::to_string(i), std::to_string(j), format_number(m(i, j))});
  run.csv("rosenblatt_kernel.csv", rk);
}

void cmd_relationship(Run& run) {
  const auto& cfg = run.cfg();
  const Hurst h = run.hurst();
  const GridPtr g = run.grid(cfg.grid_n);
  for (Integrator which : {Integrator::fbm, Integrator::rosenblatt})
    for (Integrand in : {Integrand::deterministic, Integrand::wiener}) {
      RelationshipConfig rc;
      rc.integrand = in;
      rc.eps_steps = cfg.epsilons;
      rc.paths = cfg.paths;
      rc.seed = cfg.seed;
      rc.workers = cfg.workers;
      const RelationshipReport rep =
          which == Integrator::fbm ? relationship_fbm(h, g, rc) : relationship_rosenblatt(h, g, rc);
      const std::string tag = rep.integrator + "_" + rep.integrand;
      run.csv("relationship_" + tag + ".csv", rep.to_csv());
      const auto& last = rep.rows.back().residual;
      run.add(check_upper(tag + "_residual", std::abs(last.mean) / last.std_error, 0.0, run.tol("residual_stderr")));
      double worst = -INFINITY;
      for (std::size_t i = 1; i < rep.rows.size(); ++i) {
        const auto &a = rep.rows[i - 1], &b = rep.rows[i];
        worst = std::max(worst, (b.residual_rms - a.residual_rms) / std::hypot(a.residual_rms_se, b.residual_rms_se));
      }
      run.add(check_upper(tag + "_decrease", worst, 0.0, run.tol("decrease_stderr")));
    }
}

ChaosElement random_element(const GridPtr& g, int top, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  const std::size_t n = g->size();
  ChaosElement e(g);
  e.add(SymKernel::scalar(g, nd(rng)));
  for (int k = 1; k <= top; ++k) {
    SymKernel s(g, k);
    if (k == 2) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
      s = SymKernel::matrix(g, m);
    } else {
      for (auto& x : s.data()) x = nd(rng);
    }
    e.add(s);
  }
  return e;
}

ChaosProcess random_process(const GridPtr& g, int top, std::mt19937_64& rng) {
  std::vector<ChaosElement> v;
  for (std::size_t p = 0; p < g->time_count(); ++p) v.push_back(random_element(g, top, rng));
  return ChaosProcess(g, std::move(v));
}

void cmd_duality(Run& run) {
  const auto& cfg = run.cfg();
  const Hurst h = run.hurst();
  const GridPtr g = run.grid(kDualityCells);
  const double T = cfg.t_max;
  std::mt19937_64 rng(cfg.seed);
  std::string body = csv_line({"integrator", "trial", "lhs", "rhs", "scale", "relative_gap"});
  double worst_f = 0.0, worst_r = 0.0;
  // Quadrature-built ingredients for the Rosenblatt inputs.
  const ChaosElement r_half = ChaosElement::from_kernel(rosenblatt_kernel(h, 0.5 * T, g));
  const ChaosElement r_full = ChaosElement::from_kernel(rosenblatt_kernel(h, T, g));
  const ChaosProcess smooth = deterministic_process(g, [](double s) { return 1.0 + s; });
  std::normal_distribution<double> nd;
  for (std::size_t k = 0; k < kDualityTrials; ++k) {
    const ChaosElement G = random_element(g, 3, rng);
    const ChaosProcess gp = random_process(g, 1, rng);
    const DualityResult f = duality_gap(h, DualityKind::fbm, gp, G, 0.0, T);
    worst_f = std::max(worst_f, f.relative_gap());
    body += csv_line({"fbm", std::to_string(k), format_number(f.lhs), format_number(f.rhs), format_number(f.scale),
                      format_number(f.relative_gap())});

    ChaosElement Gr = nd(rng) * r_half + nd(rng) * r_full + product(r_half, random_element(g, 1, rng));
    std::vector<ChaosElement> mix;
    for (std::size_t p = 0; p < smooth.size(); ++p) mix.push_back(smooth.values[p] + gp.values[p]);
    const DualityResult r = duality_gap(h, DualityKind::rosenblatt, ChaosProcess(g, std::move(mix)), Gr, 0.0, T);
    worst_r = std::max(worst_r, r.relative_gap());
    body += csv_line({"rosenblatt", std::to_string(k), format_number(r.lhs), format_number(r.rhs),
                      format_number(r.scale), format_number(r.relative_gap())});
  }
  run.csv("duality.csv", body);
  run.add(check_upper("duality_fbm", worst_f, 0.0, run.tol("duality_fbm")));
  run.add(check_upper("duality_rosenblatt", worst_r, 0.0, run.tol("duality_rosenblatt")));
}

void cmd_lemmas(Run& run) {
  const GridPtr g = run.grid(run.cfg().grid_n);
  std::string body = csv_line({"lemma", "integrand", "gap"});
  for (const auto& r : derivative_lemma_gaps(run.hurst(), g, run.cfg().t_max)) {
    body += csv_line({r.lemma, r.integrand, format_number(r.gap)});
    run.add(check_upper(r.lemma + "_" + r.integrand, r.gap, 0.0, run.tol("lemma")));
  }
  run.csv("derivative_lemmas.csv", body);
}

void add_report(Run& run, const OrderwiseGapReport& rep, const std::string& tag, const std::string& tol) {
  run.csv(tag + ".csv", rep.to_csv());
  for (const auto& r : rep.rows)
    run.add(check_upper(tag + "_order" + std::to_string(r.order), r.gap_rel, 0.0, run.tol(tol)));
}

void cmd_ito(Run& run) {
  const auto& cfg = run.cfg();
  const Hurst h = run.hurst();
  const GridPtr g = run.grid(cfg.grid_n);
  const double T = cfg.t_max, H = h.value();
  const int orders[] = {0, 2, 4};

  const OrderwiseGapReport sq = square_identity_report(h, g, T);
  add_report(run, sq, "square_identity", "square");
  if (cfg.refine) {
    const OrderwiseGapReport sq2 = square_identity_report(h, run.grid(2 * cfg.grid_n), T);
    run.csv("square_identity_refined.csv", sq2.to_csv());
    for (const auto& r : sq.rows)
      run.add_strict_decrease("square_identity_decrease_order" + std::to_string(r.order), r.gap_rel,
                              sq2.at(r.order).gap_rel);
  }

  std::vector<double> one(g->time_count(), 1.0), lin(g->time_count());
  for (std::size_t p = 0; p < lin.size(); ++p) lin[p] = g->mid(g->first_time() + p);
  for (const char* fs : {"x^2", "x^3"}) {
    const Polynomial f = parse_polynomial(fs);
    const std::string fn = fs[2] == '2' ? "x2" : "x3";
    for (const auto& [pn, psi] : {std::pair<std::string, const std::vector<double>*>{"one", &one}, {"s", &lin}}) {
      const ChaosElement lhs = poly_apply(f, rosenblatt_wiener_integral(h, g, *psi, T));
      const std::string tag = "ito_" + fn + "_psi_" + pn;
      add_report(run, compare_orderwise(tag, h, T, lhs, ito_rhs_wiener_integrand(h, g, *psi, f, T), orders), tag,
                 "corollary");
      if (pn == "one")
        add_report(run, compare_orderwise(tag + "_closed", h, T, lhs, ito_rhs_rosenblatt(h, g, f, T), orders),
                   tag + "_closed", "corollary");
    }
  }

  const double k3 = ito_rhs_wiener_integrand(h, g, one, {0.0, 0.0, 0.0, 1.0}, T, 0).mean();
  run.add(check_rel("kappa3_order0", k3, third_cumulant_target(h) * std::pow(T, 3.0 * H), run.tol("kappa3")));

  SecondOrderDifferential d(h, g);
  d.psi = deterministic_process(g, [](double) { return 1.0; });
  const Polynomial sq_f{0.0, 0.0, 1.0};
  const ChaosElement lhs = poly_apply(sq_f, reconstruct(d, T));
  const ChaosElement rhs = reconstruct(ito_tilde(d, sq_f), T, Overflow::clip);
  add_report(run, compare_orderwise("tilde_x2", h, T, lhs, rhs, orders), "tilde_x2", "tilde");
}

void cmd_moments(Run& run) {
  const auto& cfg = run.cfg();
  const Hurst h = run.hurst();
  const GridPtr g = run.grid(cfg.grid_n);
  const double T = cfg.t_max, H = h.value();
  std::string body = csv_line({"quantity", "value", "reference"});

  const SecondMoment m1 = second_moment(h, deterministic_process(g, [](double) { return 1.0; }), T);
  run.add(check_rel("second_moment_one", m1.total(), std::pow(T, 2.0 * H), run.tol("second_moment_one")));
  body += csv_line({"second_moment_one", format_number(m1.total()), format_number(std::pow(T, 2.0 * H))});

  const ChaosProcess w = wiener_process(g);
  const SecondMoment mw = second_moment(h, w, T);
  const double vw = variance(integral_rosenblatt(h, w, 0.0, T));
  run.add(check_rel("second_moment_w", mw.total(), vw, run.tol("second_moment_w")));
  body += csv_line({"second_moment_w", format_number(mw.total()), format_number(vw)});
  body += csv_line({"second_moment_w_term1", format_number(mw.term1), ""});
  body += csv_line({"second_moment_w_term2", format_number(mw.term2), ""});

  const double k3 = cumulant3_exact(rosenblatt_kernel(h, T, g));
  const double k3t = third_cumulant_target(h) * std::pow(T, 3.0 * H);
  run.add(check_rel("third_cumulant", k3, k3t, run.tol("cumulant")));
  body += csv_line({"third_cumulant", format_number(k3), format_number(k3t)});
  run.csv("moments.csv", body);

  std::string mb = csv_line({"q", "lhs", "lhs_se", "rhs", "rhs_se", "stderrs_above"});
  const std::vector<double> one(g->time_count(), 1.0);
  for (double q : {3.0, 4.0}) {
    const MomentBound b = moment_bound_gap(h, g, q, one, T, cfg.paths, cfg.seed, cfg.workers);
    const double se = std::hypot(b.lhs.std_error, b.rhs.std_error);
    const double z = se > 0.0 ? (b.lhs.mean - b.rhs.mean) / se : (b.lhs.mean > b.rhs.mean ? INFINITY : -INFINITY);
    mb += csv_line({format_number(q), format_number(b.lhs.mean), format_number(b.lhs.std_error),
                    format_number(b.rhs.mean), format_number(b.rhs.std_error), format_number(z)});
    run.add(check_upper("moment_bound_q" + format_number(q), z, 0.0, run.tol("moment_bound_stderr")));
  }
  run.csv("moment_bound.csv", mb);
}

const std::map<std::string, std::function<void(Run&)>>& registry() {
  static const std::map<std::string, std::function<void(Run&)>> r{
      {"constants", cmd_constants},
      {"simulate", cmd_simulate},
      {"verify-kernels", cmd_kernels},
      {"verify-relationship", cmd_relationship},
      {"verify-duality", cmd_duality},
      {"verify-derivative-lemmas", cmd_lemmas},
      {"verify-ito", cmd_ito},
      {"verify-moments", cmd_moments},
  };
  return r;
}

}  // namespace

const std::map<std::string, double>& default_tolerances() {
  static const std::map<std::string, double> t{
      {"cBR_formulas", 1e-12},      {"c2_identity", 1e-12},       {"fbm_isometry", 0.01},
      {"rosenblatt_isometry", 0.02}, {"beta_identity", 0.01},      {"covariance_stderr", 3.0},
      {"residual_stderr", 3.0},     {"decrease_stderr", 1.0},     {"duality_fbm", 1e-10},
      {"duality_rosenblatt", 0.02}, {"lemma", 0.02},              {"square", 0.05},
      {"corollary", 0.05},          {"tilde", 0.05},              {"kappa3", 0.02},
      {"second_moment_one", 0.01},  {"second_moment_w", 0.02},    {"cumulant", 0.02},
      {"moment_bound_stderr", 2.0},
  };
  return t;
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s = [] {
    std::vector<std::string> v;
    for (const auto& [k, f] : registry()) v.push_back(k);
    return v;
  }();
  return s;
}

void ExperimentConfig::validate() const {
  Hurst check(hurst);
  if (grid_n < 2) throw std::invalid_argument("grid_n must be at least 2");
  if (!(t_min < 0.0 && t_max > 0.0)) throw std::invalid_argument("need t_min < 0 < t_max");
  if (paths < 2) throw std::invalid_argument("paths must be at least 2");
  if (epsilons.empty()) throw std::invalid_argument("the epsilon ladder is empty");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (epsilons[i] == 0) throw std::invalid_argument("epsilon multiples must be positive");
    if (i && epsilons[i] >= epsilons[i - 1]) throw std::invalid_argument("epsilon ladder must be decreasing");
  }
  for (const auto& [k, v] : tolerances) {
    if (!default_tolerances().contains(k)) throw std::invalid_argument("unknown tolerance: " + k);
    if (!(v > 0.0)) throw std::invalid_argument("tolerance " + k + " must be positive");
  }
  for (const auto& [k, v] : default_tolerances())
    if (!tolerances.contains(k)) throw std::invalid_argument("missing tolerance: " + k);
  if (output_dir.empty()) throw std::invalid_argument("empty output directory");
}

void apply_config_file(const std::string& path, ExperimentConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(path + ":" + std::to_string(no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key == "hurst") cfg.hurst = parse_double(key, val);
    else if (key == "grid_n") cfg.grid_n = parse_count(key, val);
    else if (key == "t_min") cfg.t_min = parse_double(key, val);
    else if (key == "t_max") cfg.t_max = parse_double(key, val);
    else if (key == "paths") cfg.paths = parse_count(key, val);
    else if (key == "seed") cfg.seed = parse_count(key, val);
    else if (key == "eps") cfg.epsilons = parse_eps(val);
    else if (key == "out") cfg.output_dir = val;
    else if (key == "workers") cfg.workers = parse_count(key, val);
    else if (key == "refine") cfg.refine = parse_bool(val);
    else if (key.rfind("tol.", 0) == 0) {
      const std::string name = key.substr(4);
      if (!default_tolerances().contains(name)) throw std::invalid_argument("unknown tolerance: " + name);
      cfg.tolerances[name] = parse_double(key, val);
    } else {
      throw std::invalid_argument(path + ":" + std::to_string(no) + ": unknown key " + key);
    }
  }
}

int run_subcommand(const std::string& name, const ExperimentConfig& cfg) {
  const auto it = registry().find(name);
  if (it == registry().end()) throw std::invalid_argument("unknown subcommand: " + name);
  cfg.validate();
  Run run(name, cfg);
  it->second(run);
  return run.finish();
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Discrete Wiener-chaos experiments for Rosenblatt processes"};
  app.require_subcommand(1);

  double hurst = 0, t_min = 0, t_max = 0;
  std::size_t grid_n = 0, paths = 0, workers = 0;
  std::uint64_t seed = 0;
  std::string eps, out, config;
  bool refine = false;
  std::map<std::string, double> tol;
  std::map<std::string, CLI::Option*> tol_opts;
  std::map<std::string, std::array<CLI::Option*, 10>> opts;

  for (const auto& name : subcommands()) {
    CLI::App* sub = app.add_subcommand(name);
    auto& o = opts[name];
    o[0] = sub->add_option("--hurst", hurst, "Hurst index in (1/2, 1) [0.75]");
    o[1] = sub->add_option("--grid-n", grid_n, "cells on [t_min, t_max] [128]");
    o[2] = sub->add_option("--t-min", t_min, "left end of the past window [-20]");
    o[3] = sub->add_option("--t-max", t_max, "horizon [1]");
    o[4] = sub->add_option("--paths", paths, "Monte Carlo paths [10000]");
    o[5] = sub->add_option("--seed", seed, "noise seed [1]");
    o[6] = sub->add_option("--eps", eps, "epsilon ladder in time steps, decreasing [16,8,4,2]");
    o[7] = sub->add_option("--out", out, std::string("output directory [$") + kOutDirEnv + " or out]");
    o[8] = sub->add_option("--workers", workers, "worker threads, 0 = all [0]");
    o[9] = sub->add_flag("--refine", refine, "verify-ito: also run the square identity at 2 grid-n");
    sub->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& [k, v] : default_tolerances())
      tol_opts[name + "/" + k] = sub->add_option("--tol-" + k, tol[k], "tolerance for " + k);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    const auto& o = opts[name];
    ExperimentConfig cfg;
    cfg.tolerances = default_tolerances();
    if (const char* env = std::getenv(kOutDirEnv); env && *env) cfg.output_dir = env;
    if (!config.empty()) apply_config_file(config, cfg);
    if (o[0]->count()) cfg.hurst = hurst;
    if (o[1]->count()) cfg.grid_n = grid_n;
    if (o[2]->count()) cfg.t_min = t_min;
    if (o[3]->count()) cfg.t_max = t_max;
    if (o[4]->count()) cfg.paths = paths;
    if (o[5]->count()) cfg.seed = seed;
    if (o[6]->count()) cfg.epsilons = parse_eps(eps);
    if (o[7]->count()) cfg.output_dir = out;
    if (o[8]->count()) cfg.workers = workers;
    if (o[9]->count()) cfg.refine = refine;
    for (const auto& [k, v] : default_tolerances())
      if (tol_opts.at(name + "/" + k)->count()) cfg.tolerances[k] = tol[k];
    cfg.validate();
    return run_subcommand(name, cfg);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("rosenblatt");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(int(argv.size()), argv.data());
}

}  // namespace rosen
