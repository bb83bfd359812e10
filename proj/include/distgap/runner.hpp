#pragma once

// Experiment runner: executes a scenario's experiments, writes the run
// directory and computes its content hash. Sweeps re-run a scenario with one
// parameter replaced.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "distgap/bounds.hpp"
#include "distgap/metrics.hpp"
#include "distgap/scenario.hpp"
#include "json.hpp"

namespace distgap {

// ---------------------------------------------------------------------------
// Output pieces
// ---------------------------------------------------------------------------

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return json(v).dump();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static std::string field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string o = "\"";
    for (char c : s) o += c == '"' ? std::string("\"\"") : std::string(1, c);
    return o + "\"";
  }

  std::string str() const {
    std::string o;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t k = 0; k < r.size(); ++k) o += (k ? "," : "") + field(r[k]);
      o += "\r\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return o;
  }
};

struct Record {
  std::string name;
  double value = 0.0;
  double stderr_ = 0.0;
  std::string method;

  json to_json(const std::string& config_hash) const {
    return {{"name", name}, {"value", value}, {"stderr", stderr_}, {"method", method}, {"config_hash", config_hash}};
  }
};

struct ExperimentResult {
  ExperimentKind kind = ExperimentKind::SmallnessCheck;
  json params;
  std::vector<BoundReport> reports;
  std::vector<Record> records;
  std::map<std::string, CsvTable> tables;

  std::string table_file(const std::string& table) const {
    return std::string(experiment_name(kind)) + "-" + table + "-" + sha256_hex(params.dump()).substr(0, 8) + ".csv";
  }

  json to_json(const std::string& hash) const {
    json j;
    j["kind"] = experiment_name(kind);
    j["params"] = params;
    j["reports"] = json::array();
    for (const auto& r : reports) j["reports"].push_back(r.to_json(hash));
    j["records"] = json::array();
    for (const auto& r : records) j["records"].push_back(r.to_json(hash));
    j["tables"] = json::array();
    for (const auto& [name, t] : tables) j["tables"].push_back(table_file(name));
    return j;
  }

  std::string digest(const std::string& hash) const {
    std::string s = to_json(hash).dump();
    for (const auto& [name, t] : tables) s += "\n" + table_file(name) + "\n" + t.str();
    return sha256_hex(s);
  }
};

class RunLog {
 public:
  explicit RunLog(std::ostream* echo = nullptr) : echo_(echo), start_(std::chrono::steady_clock::now()) {}

  void info(const std::string& msg) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    char stamp[32];
    std::snprintf(stamp, sizeof stamp, "[%9.3f] ", s);
    std::lock_guard<std::mutex> lock(mu_);
    lines_ += stamp + msg + "\n";
    if (echo_) *echo_ << stamp << msg << "\n";
  }

  std::string text() const { return lines_; }

 private:
  std::ostream* echo_;
  std::chrono::steady_clock::time_point start_;
  std::string lines_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Shared solves
// ---------------------------------------------------------------------------

struct ValueEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  std::string method;
};

/// Lazily computed solves of one scenario. Each is a pure function of the
/// scenario, so the order in which experiments ask for them is irrelevant.
class RunContext {
 public:
  RunContext(const Scenario& s, RunLog& log) : s_(s), log_(log) {}

  const Scenario& scenario() const { return s_; }
  RunLog& log() { return log_; }

  const ControlProblem& problem() {
    if (!problem_) problem_ = build::problem(s_);
    return *problem_;
  }

  const std::vector<InitialLaw>& initial() {
    if (!m0_) m0_ = build::initial(s_);
    return *m0_;
  }

  const ConstantsLedger& ledger() {
    if (!ledger_) ledger_ = constants_ledger(problem(), initial());
    return *ledger_;
  }

  GridSpec full_grid_spec(int coarsen = 1) {
    const json& f = s_.solver().at("full");
    const int pts = (f.at("points").get<int>() - 1) / coarsen + 1;
    return default_grid(problem(), initial(), pts, f.at("steps").get<int>() / coarsen);
  }

  /// The full-information grid solve is attempted when n d <= 4 and it fits.
  bool has_grid() {
    const auto& p = problem();
    return p.n * p.d <= 4 && value_grid_bytes(full_grid_spec()) <= GridSpec{}.memory_cap_bytes;
  }

  const ValueGrid& full_grid() {
    if (!grid_) {
      require(has_grid(), Errc::NoFullInfoRoute, "no full-information grid for this problem size");
      log_.info("full-information HJB solve");
      grid_ = solve_full_hjb(problem(), full_grid_spec());
    }
    return *grid_;
  }

  const DistributedSolution& dist() {
    if (!dist_) {
      log_.info("distributed PDE solve");
      dist_ = solve_distributed_pde(problem(), initial(), build::distributed(s_));
      log_.info("distributed PDE: " + std::to_string(dist_->iterations) + " Picard iterations");
    }
    return *dist_;
  }

  /// Distributed value at half resolution, for discretization estimates.
  double dist_coarse_value() {
    if (!dist_coarse_) {
      DistributedConfig c = build::distributed(s_);
      c.points = (c.points - 1) / 2 + 1;
      c.steps = std::max(1, c.steps / 2);
      dist_coarse_ = solve_distributed_pde(problem(), initial(), c).value;
    }
    return *dist_coarse_;
  }

  /// Full-information value at time 0: Riccati when the data are linear-quadratic,
  /// the Gibbs formula in the Cole-Hopf case, otherwise the grid.
  ValueEstimate full_value() {
    if (full_) return *full_;
    const auto& p = problem();
    ValueEstimate v;
    bool done = false;
    bool gaussian = true;
    for (const auto& l : initial()) gaussian = gaussian && l.kind() != LawKind::Particles;
    if (gaussian) {
      try {
        v.value = riccati_lift(lq_riccati(p), initial());
        v.method = "riccati";
        done = true;
      } catch (const Error& e) {
        if (e.code() != Errc::NonLqFunctional && e.code() != Errc::NonQuadraticLagrangian) throw;
      }
    }
    if (!done && p.cole_hopf_case() && gaussian) {
      const GibbsValue g = cole_hopf_value(p, 0.0, initial(), build::gibbs(s_));
      v.value = g.value;
      v.stderr_ = g.stderr_;
      v.method = g.method;
      done = true;
    }
    if (!done) {
      require(has_grid(), Errc::NoFullInfoRoute, "no full-information route for this problem");
      v.value = lift_value(full_grid(), initial());
      v.method = "hjb";
    }
    full_ = v;
    return v;
  }

  /// Discretization estimate of the full value: zero for the exact routes,
  /// the change under halving the grid for the HJB route.
  double full_value_tolerance() {
    if (full_value().method != "hjb") return 0.0;
    if (!full_coarse_) full_coarse_ = lift_value(solve_full_hjb(problem(), full_grid_spec(2)), initial());
    return std::abs(full_value().value - *full_coarse_);
  }

  const HatXResult& hatx(std::size_t N, int steps = 200) {
    const auto key = std::make_pair(N, steps);
    auto it = hatx_.find(key);
    if (it != hatx_.end()) return it->second;
    log_.info("simulating the mean-field particle system");
    HatXConfig c;
    c.steps = steps;
    c.threads = s_.solver().at("mc").at("threads").get<int>();
    return hatx_.emplace(key, simulate_hatX(full_grid(), problem(), initial(), N, s_.seed() + 101, c)).first->second;
  }

  /// J(distributed control) - J(full-information control) on common noise.
  const GapEstimate& paired_gap() {
    if (!paired_) {
      log_.info("paired Monte Carlo cost gap");
      const auto& p = problem();
      paired_ = paired_cost_gap(p, distributed_control(dist(), p), full_information_control(full_grid(), p), initial(),
                                build::mc(s_, p.T));
    }
    return *paired_;
  }

 private:
  const Scenario& s_;
  RunLog& log_;
  std::optional<ControlProblem> problem_;
  std::optional<std::vector<InitialLaw>> m0_;
  std::optional<ConstantsLedger> ledger_;
  std::optional<ValueGrid> grid_;
  std::optional<DistributedSolution> dist_;
  std::optional<double> dist_coarse_, full_coarse_;
  std::optional<ValueEstimate> full_;
  std::map<std::pair<std::size_t, int>, HatXResult> hatx_;
  std::optional<GapEstimate> paired_;
};

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

namespace experiments {

inline GapEstimate estimate(double v, double se, EstimateMethod m = EstimateMethod::Quadrature) {
  GapEstimate g;
  g.value = v;
  g.stderr_ = se;
  g.method = m;
  return g;
}

inline EstimateMethod method_of(const std::string& full_method) {
  return full_method == "monte-carlo" ? EstimateMethod::IndependentMC : EstimateMethod::Quadrature;
}

struct GapInputs {
  GapEstimate gap;
  CrossStats stats;
  std::string stats_name;
  double bound_general = 0.0;
};

/// Measured value gap and the cross-derivative statistics behind the bounds.
inline GapInputs gap_inputs(RunContext& ctx, const json& params, ExperimentResult& out) {
  const auto& p = ctx.problem();
  const ValueEstimate full = ctx.full_value();
  const double v_dist = ctx.dist().value;
  out.records.push_back({"value_distributed", v_dist, 0.0, "pde"});
  out.records.push_back({"value_full", full.value, full.stderr_, full.method});

  GapInputs g;
  if (ctx.has_grid()) {
    g.gap = ctx.paired_gap();
    out.records.push_back({"gap_paired", g.gap.value, g.gap.stderr_, method_name(g.gap.method)});
  } else {
    g.gap = estimate(v_dist - full.value, full.stderr_, method_of(full.method));
  }
  out.records.push_back({"gap_value_difference", v_dist - full.value, full.stderr_, full.method});

  if (params.at("bound_stats").get<std::string>() == "flow" && ctx.has_grid()) {
    g.stats = cross_stats(p, ctx.hatx(params.at("hatx_particles").get<std::size_t>()).ensemble);
    g.stats_name = "flow";
  } else {
    g.stats = cross_stats_sup(p);
    g.stats_name = "sup-norm";
  }
  g.bound_general = gap_bound_general(ctx.ledger(), g.stats, p.n);
  out.records.push_back({"bound_general", g.bound_general, 0.0, g.stats_name});
  return g;
}

inline void zero_gap_report(RunContext& ctx, ExperimentResult& out) {
  const ValueEstimate full = ctx.full_value();
  const double diff = std::abs(ctx.dist().value - full.value);
  const double tol = std::abs(ctx.dist().value - ctx.dist_coarse_value()) + ctx.full_value_tolerance();
  out.records.push_back({"solver_tolerance", tol, 0.0, "resolution-halving"});
  out.reports.push_back(compare("zero_gap", estimate(diff, full.stderr_), 2.0 * (tol + full.stderr_), "separable"));
}

inline ExperimentResult gap_sandwich(RunContext& ctx, const json& params) {
  ExperimentResult out;
  out.kind = ExperimentKind::GapSandwich;
  out.params = params;
  const auto& p = ctx.problem();
  const GapInputs g = gap_inputs(ctx, params, out);
  // Separable problems have bounds of exactly 0; only the resolution-aware
  // zero-gap report is meaningful there.
  if (p.separable()) {
    zero_gap_report(ctx, out);
  } else {
    out.reports.push_back(compare("value_gap", g.gap, g.bound_general, g.stats_name));
    out.reports.push_back(compare("value_gap_nonnegative", estimate(-g.gap.value, g.gap.stderr_, g.gap.method), 0.0,
                                  "optimality"));
  }

  if (ctx.has_grid() && params.at("control_particles").get<int>() > 0) {
    ctx.log().info("control L2 gap");
    SimConfig c = build::mc(ctx.scenario(), p.T);
    c.particles = params.at("control_particles").get<std::size_t>();
    const ControlGap cg = control_l2_gap(p, full_information_control(ctx.full_grid(), p),
                                         distributed_control(ctx.dist(), p), ctx.initial(), c);
    const ControlBound cb = control_gap_bound(p, ctx.ledger());
    out.records.push_back({"control_gap_common_state", cg.common_state.value, cg.common_state.stderr_, "PairedMC"});
    out.records.push_back({"control_gap_paired", cg.paired.value, cg.paired.stderr_, "PairedMC"});
    // The estimator averages over agents; the bound is stated for the sum.
    const GapEstimate summed = estimate(p.n * cg.paired.value, p.n * cg.paired.stderr_, EstimateMethod::PairedMC);
    if (!p.separable()) out.reports.push_back(compare("control_gap", summed, cb.value, "sup-norm"));
  }
  return out;
}

inline ExperimentResult quadratic_bound(RunContext& ctx, const json& params) {
  ExperimentResult out;
  out.kind = ExperimentKind::QuadraticBound;
  out.params = params;
  const auto& p = ctx.problem();
  const GapInputs g = gap_inputs(ctx, params, out);
  const double bq = gap_bound_quadratic(p, ctx.ledger(), g.stats);
  out.records.push_back({"bound_quadratic", bq, 0.0, g.stats_name});
  out.reports.push_back(compare("quadratic_bound", g.gap, bq, g.stats_name));
  out.reports.push_back(compare("quadratic_below_general", estimate(bq, 0.0), g.bound_general, g.stats_name));

  if (ctx.has_grid()) {
    const auto& e = ctx.hatx(params.at("hatx_particles").get<std::size_t>()).ensemble;
    const std::size_t N = std::min<std::size_t>(e.N, params.at("poincare_samples").get<std::size_t>());
    std::vector<double> samples;
    samples.reserve(N * e.width());
    for (std::size_t q = 0; q < N; ++q) samples.insert(samples.end(), e.terminal(q), e.terminal(q) + e.width());
    const PoincareCheck pc = empirical_poincare(samples, e.width(), default_battery(e.width()), 200, ctx.scenario().seed());
    out.records.push_back({"poincare_ratio", pc.ratio, pc.boot_se, "bootstrap"});
    out.reports.push_back(compare("poincare_terminal", estimate(pc.ratio, pc.boot_se, EstimateMethod::IndependentMC),
                                  p.T + ctx.ledger().c0_poincare, "battery:" + pc.worst));
  }
  return out;
}

inline ExperimentResult hetero_sweep(RunContext& ctx, const json& params) {
  ExperimentResult out;
  out.kind = ExperimentKind::HeteroSweep;
  out.params = params;
  const Scenario& base = ctx.scenario();
  const json& G = base.problem().at("G");
  require(G.at("kind") == "pairwise" && G.at("graph").at("kind") == "ring", Errc::SchemaError,
          "HeteroSweep needs a pairwise terminal cost on a ring graph");
  const json& F = base.problem().at("F");
  const bool f_ring = F.at("kind") == "pairwise";
  const int d = base.problem().at("d").get<int>();

  CsvTable table{{"m", "V_full", "V_full_err", "full_method", "V_dist", "U", "gap", "gap_err", "bound", "bound_times_m"}, {}};
  std::vector<double> gaps, errs, bm;
  std::vector<int> ms = params.at("m").get<std::vector<int>>();
  for (int m : ms) {
    Scenario s = base;
    s.tree["problem"]["G"]["graph"] = {{"kind", "ring"}, {"m", m}};
    if (f_ring) s.tree["problem"]["F"]["graph"] = {{"kind", "ring"}, {"m", m}};
    s = validate_scenario(s.tree, s.base_dir);
    RunContext sub(s, ctx.log());
    ctx.log().info("ring degree " + std::to_string(m));
    const auto& p = sub.problem();
    const ValueEstimate full = sub.full_value();
    const double v_dist = sub.dist().value;
    const double gap = v_dist - full.value;
    const Atom g2 = build::atom(G.at("pair"));
    const double f2 = f_ring ? build::atom(F.at("pair")).hessian_sup_frobenius(d) : 0.0;
    const double bound = gap_bound_hetero(p.G.interaction(), g2.hessian_sup_frobenius(d), f2, sub.ledger());
    const auto U = meanfield_value(p, sub.initial().front(), build::distributed(s));
    gaps.push_back(gap);
    errs.push_back(full.stderr_);
    bm.push_back(bound * m);
    table.rows.push_back({std::to_string(m), fmt(full.value), fmt(full.stderr_), full.method, fmt(v_dist), fmt(U.first),
                          fmt(gap), fmt(full.stderr_), fmt(bound), fmt(bound * m)});
    const std::string tag = "[m=" + std::to_string(m) + "]";
    out.records.push_back({"gap" + tag, gap, full.stderr_, full.method});
    out.records.push_back({"meanfield_value" + tag, U.first, 0.0, U.second});
    out.reports.push_back(compare("hetero_bound" + tag, estimate(gap, full.stderr_, method_of(full.method)), bound, "sup-norm"));
    out.reports.push_back(compare("distributed_equals_meanfield" + tag, estimate(std::abs(v_dist - U.first), 0.0), 2e-2,
                                  U.second));
  }
  for (std::size_t k = 0; k + 1 < ms.size(); ++k) {
    const double se = std::sqrt(errs[k] * errs[k] + errs[k + 1] * errs[k + 1]);
    out.reports.push_back(compare("gap_nonincreasing[m=" + std::to_string(ms[k]) + "->" + std::to_string(ms[k + 1]) + "]",
                                  estimate(gaps[k + 1] - gaps[k], se, EstimateMethod::IndependentMC), 0.0, "difference"));
  }
  if (!bm.empty()) {
    double dev = 0.0;
    for (double v : bm) dev = std::max(dev, std::abs(v - bm.front()) / std::max(std::abs(bm.front()), 1e-300));
    out.reports.push_back(compare("bound_inverse_in_m", estimate(dev, 0.0), 1e-12, "relative spread of bound*m"));
  }
  out.tables["hetero"] = table;
  return out;
}

inline ExperimentResult meanfield_rate(RunContext& ctx, const json& params) {
  ExperimentResult out;
  out.kind = ExperimentKind::MeanFieldRate;
  out.params = params;
  const Scenario& s = ctx.scenario();
  require(!s.initial().contains("agents"), Errc::AsymmetricProblem, "MeanFieldRate needs one shared initial law");
  const InitialLaw m = build::law(s.initial(), s.problem().at("d").get<int>(), s.base_dir);
  SequenceConfig cfg;
  cfg.dist = build::distributed(s);
  cfg.gibbs = build::gibbs(s);
  cfg.full_points = s.solver().at("full").at("points").get<int>();
  cfg.full_steps = s.solver().at("full").at("steps").get<int>();
  const std::vector<int> ns = params.at("n").get<std::vector<int>>();
  ctx.log().info("value sequence over " + std::to_string(ns.size()) + " population sizes");
  const auto rows = value_sequence([&](int n) { return build::problem(s, n); }, m, ns, cfg);

  CsvTable table{{"n", "V_full", "V_full_err", "V_dist", "V_dist_err", "U", "gap", "method"}, {}};
  std::vector<double> gaps, errs;
  double first = 0.0, first_err = 0.0, worst = -1.0, worst_err = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    const double gap = r.v_dist - r.v_full;
    gaps.push_back(gap);
    errs.push_back(std::hypot(r.v_full_err, r.v_dist_err));
    table.rows.push_back({std::to_string(r.n), fmt(r.v_full), fmt(r.v_full_err), fmt(r.v_dist), fmt(r.v_dist_err),
                          fmt(*r.U), fmt(gap), r.full_method + "/" + r.u_method});
    const double scaled = r.n * std::abs(r.v_full - *r.U), scaled_err = r.n * r.v_full_err;
    out.records.push_back({"scaled_meanfield_gap[n=" + std::to_string(r.n) + "]", scaled, scaled_err, r.full_method});
    if (k == 0) {
      first = scaled;
      first_err = scaled_err;
    }
    if (scaled > worst) {
      worst = scaled;
      worst_err = scaled_err;
    }
  }
  out.tables["rate"] = table;
  out.reports.push_back(compare("scaled_meanfield_gap_bounded",
                                estimate(worst - first, std::hypot(worst_err, first_err), EstimateMethod::IndependentMC),
                                0.0, "n|V-U| across the ladder"));
  const RateFit fit = fit_rate(ns, gaps, errs);
  out.records.push_back({"rate_exponent", fit.exponent, fit.residual, "log-log least squares"});
  out.reports.push_back(compare("rate_exponent", estimate(fit.exponent, 0.0), params.at("exponent_max").get<double>(),
                                "fit of |V_dist - V_full|"));
  return out;
}

inline ExperimentResult chaos_metric(RunContext& ctx, const json& params) {
  ExperimentResult out;
  out.kind = ExperimentKind::ChaosMetric;
  out.params = params;
  const auto& p = ctx.problem();
  require(ctx.has_grid(), Errc::NoFullInfoRoute, "ChaosMetric needs the full-information grid");
  const int k = params.at("k").get<int>();
  const std::size_t N = params.at("particles").get<std::size_t>();
  const int steps = params.at("steps").get<int>();
  const auto& hx = ctx.hatx(N, steps);
  SimConfig c = build::mc(ctx.scenario(), p.T);
  c.particles = N;
  c.steps = steps;
  // Same noise as the intermediate process, so the assignment cost sits below
  // the synchronous coupling.
  c.seed = ctx.scenario().seed() + 101;
  ctx.log().info("full-information paths");
  const ParticleEnsemble X = euler_maruyama(full_information_control(ctx.full_grid(), p), ctx.initial(), p.d, c);
  const ChaosGap cg = marginal_chaos_gap(X, hx.ensemble, k, 64, 256, 8, ctx.scenario().seed());
  const double R = gap_bound_general(ctx.ledger(), cross_stats(p, hx.ensemble), p.n);
  const double bound = chaos_bound(ctx.ledger(), R, k);
  out.records.push_back({"chaos_gap", cg.value, cg.stderr_, cg.exact_transport ? "assignment" : "approximate"});
  out.records.push_back({"value_gap_bound", R, 0.0, "flow"});
  out.reports.push_back(compare("chaos_gap[k=" + std::to_string(k) + "]",
                                estimate(cg.value, cg.stderr_, EstimateMethod::IndependentMC), bound, "flow"));
  return out;
}

inline ExperimentResult fbsde_cross_check(RunContext& ctx, const json& params) {
  ExperimentResult out;
  out.kind = ExperimentKind::FbsdeCrossCheck;
  out.params = params;
  ctx.log().info("FBSDE solve");
  const FbsdeSolution f = solve_mkv_fbsde(ctx.problem(), ctx.initial(), build::fbsde(ctx.scenario()));
  const double v = ctx.dist().value;
  out.records.push_back({"value_fbsde", f.value, f.value_stderr, "fbsde"});
  out.records.push_back({"value_distributed", v, 0.0, "pde"});
  out.records.push_back({"terminal_mismatch", f.terminal_mismatch, 0.0, "fbsde"});
  CsvTable t{{"iteration", "residual"}, {}};
  for (std::size_t k = 0; k < f.picard_residuals.size(); ++k) t.rows.push_back({std::to_string(k + 1), fmt(f.picard_residuals[k])});
  out.tables["residuals"] = t;
  out.reports.push_back(compare("fbsde_vs_pde", estimate(std::abs(f.value - v), f.value_stderr, EstimateMethod::IndependentMC),
                                params.at("value_tol").get<double>(), f.converged ? "converged" : "not converged"));
  return out;
}

inline ExperimentResult smallness(RunContext& ctx, const json& params) {
  ExperimentResult out;
  out.kind = ExperimentKind::SmallnessCheck;
  out.params = params;
  const auto& p = ctx.problem();
  const auto& c = ctx.ledger();
  // Semi-concavity constants: zero for costs checked convex, otherwise the
  // Hessian spectral bound stands in as an upper estimate.
  const double sf = p.convex_flag || p.F.is_zero() ? 0.0 : p.F.spectral_bound();
  const double sg = p.convex_flag || p.G.is_zero() ? 0.0 : p.G.spectral_bound();
  const Smallness sm = smallness_check(c.C_L, sf, sg, c.T);
  const std::string inputs = p.convex_flag ? "convex" : "spectral-bound estimate";
  out.records.push_back({"semiconcavity_F", sf, 0.0, inputs});
  out.records.push_back({"semiconcavity_G", sg, 0.0, inputs});
  out.records.push_back({"smallness_margin", sm.margin, 0.0, inputs});
  out.reports.push_back(compare("smallness", estimate(0.5 * sf * c.T * c.T + sg * c.T, 0.0), c.C_L, inputs));
  return out;
}

inline ExperimentResult run(RunContext& ctx, ExperimentKind k, const json& params) {
  switch (k) {
    case ExperimentKind::GapSandwich: return gap_sandwich(ctx, params);
    case ExperimentKind::QuadraticBound: return quadratic_bound(ctx, params);
    case ExperimentKind::HeteroSweep: return hetero_sweep(ctx, params);
    case ExperimentKind::MeanFieldRate: return meanfield_rate(ctx, params);
    case ExperimentKind::ChaosMetric: return chaos_metric(ctx, params);
    case ExperimentKind::FbsdeCrossCheck: return fbsde_cross_check(ctx, params);
    case ExperimentKind::SmallnessCheck: return smallness(ctx, params);
  }
  fail(Errc::SchemaError, "unknown experiment");
}

}  // namespace experiments

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct RunOptions {
  std::string out_dir;  ///< empty: nothing is written
  std::ostream* echo = nullptr;
};

struct RunResult {
  Scenario scenario;
  std::vector<ExperimentResult> experiments;
  std::string config_hash;
  std::string content_hash;
  std::string directory;
  std::string log;

  bool any_violated() const {
    for (const auto& e : experiments)
      for (const auto& r : e.reports)
        if (r.verdict == Verdict::Violated) return true;
    return false;
  }

  json reports_json() const {
    json j;
    j["name"] = scenario.name();
    j["config_hash"] = config_hash;
    j["content_hash"] = content_hash;
    j["experiments"] = json::array();
    for (const auto& e : experiments) j["experiments"].push_back(e.to_json(scenario.setup_hash()));
    return j;
  }
};

inline std::string strip_code(const Error& e) {
  std::string w = e.what();
  const std::string prefix = std::string(errc_name(e.code())) + ": ";
  return w.rfind(prefix, 0) == 0 ? w.substr(prefix.size()) : w;
}

inline void write_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  require(static_cast<bool>(os), Errc::IoError, "cannot write '" + p.string() + "'");
  os << s;
  require(static_cast<bool>(os), Errc::IoError, "write failed for '" + p.string() + "'");
}

/// Content hash: the setup hash and the sorted experiment digests, so that
/// reordering experiments leaves it unchanged.
inline std::string content_hash(const std::string& setup_hash, const std::vector<ExperimentResult>& ex) {
  std::vector<std::string> parts;
  for (const auto& e : ex) parts.push_back(e.digest(setup_hash));
  std::sort(parts.begin(), parts.end());
  std::string s = setup_hash;
  for (const auto& p : parts) s += "\n" + p;
  return sha256_hex(s);
}

inline RunResult run_scenario(const Scenario& s, const RunOptions& opt = {}) {
  RunResult r;
  r.scenario = s;
  r.config_hash = s.hash();
  RunLog log(opt.echo);
  log.info("scenario " + s.name() + " config " + r.config_hash.substr(0, 12));
  RunContext ctx(r.scenario, log);
  const auto& ex = s.experiments();
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const ExperimentKind k = experiment_from_name(ex[i].at("kind").get<std::string>());
    log.info("experiment " + std::to_string(i) + " " + experiment_name(k));
    try {
      r.experiments.push_back(experiments::run(ctx, k, ex[i].at("params")));
    } catch (const Error& e) {
      log.info(std::string("failed: ") + e.what());
      throw Error(e.code(), "experiment " + std::to_string(i) + " (" + experiment_name(k) + "): " + strip_code(e));
    }
    for (const auto& rep : r.experiments.back().reports)
      log.info("  " + rep.theorem + ": gap " + fmt(rep.gap.value) + " +- " + fmt(rep.gap.stderr_) + " bound " +
               fmt(rep.bound) + " -> " + verdict_name(rep.verdict));
  }
  r.content_hash = content_hash(s.setup_hash(), r.experiments);
  log.info("content hash " + r.content_hash);
  r.log = log.text();

  if (!opt.out_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(opt.out_dir) / s.name();
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::create_directories(dir, ec);
    require(!ec, Errc::IoError, "cannot create '" + dir.string() + "'");
    write_file(dir / "config.toml", s.echo());
    if (!r.experiments.empty()) {
      write_file(dir / "reports.json", r.reports_json().dump(2) + "\n");
      write_file(dir / "HASH", r.content_hash + "\n");
      write_file(dir / "run.log", r.log);
      bool any_table = false;
      for (const auto& e : r.experiments) any_table = any_table || !e.tables.empty();
      if (any_table) fs::create_directories(dir / "tables");
      for (const auto& e : r.experiments)
        for (const auto& [name, t] : e.tables) write_file(dir / "tables" / e.table_file(name), t.str());
    }
    r.directory = dir.string();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Location of a scalar inside the canonical tree; dotted keys, numeric
/// components index arrays.
inline json& resolve_path(json& tree, const std::string& path) {
  json* cur = &tree;
  std::size_t b = 0;
  while (b <= path.size()) {
    const std::size_t e = std::min(path.find('.', b), path.size());
    const std::string part = path.substr(b, e - b);
    require(!part.empty(), Errc::BadParameterPath, "empty component in '" + path + "'");
    if (cur->is_array()) {
      require(part.find_first_not_of("0123456789") == std::string::npos, Errc::BadParameterPath,
              "'" + part + "' is not an array index in '" + path + "'");
      const std::size_t k = std::stoul(part);
      require(k < cur->size(), Errc::BadParameterPath, "index " + part + " out of range in '" + path + "'");
      cur = &(*cur)[k];
    } else {
      require(cur->is_object() && cur->contains(part), Errc::BadParameterPath,
              "'" + part + "' does not resolve in '" + path + "'");
      cur = &(*cur)[part];
    }
    b = e + 1;
  }
  require(cur->is_primitive() && !cur->is_null(), Errc::BadParameterPath, "'" + path + "' is not a scalar");
  return *cur;
}

/// The scenario with one scalar replaced; the text is read with the type of
/// the value it replaces.
inline Scenario with_parameter(const Scenario& s, const std::string& path, const std::string& text) {
  json tree = s.tree;
  json& slot = resolve_path(tree, path);
  try {
    std::size_t used = 0;
    if (slot.is_boolean()) {
      require(text == "true" || text == "false", Errc::BadParameterPath, "'" + text + "' is not a boolean");
      slot = text == "true";
    } else if (slot.is_number_unsigned()) {
      slot = std::stoull(text, &used);
    } else if (slot.is_number_integer()) {
      slot = std::stoll(text, &used);
    } else if (slot.is_number_float()) {
      slot = std::stod(text, &used);
    } else {
      slot = text;
      used = text.size();
    }
    require(slot.is_boolean() || used == text.size(), Errc::BadParameterPath, "'" + text + "' does not parse");
  } catch (const std::logic_error&) {
    fail(Errc::BadParameterPath, "'" + text + "' does not parse as the value at '" + path + "'");
  }
  return validate_scenario(tree, s.base_dir);
}

struct SweepResult {
  std::vector<RunResult> runs;
  CsvTable table;
  bool any_violated() const {
    for (const auto& r : runs)
      if (r.any_violated()) return true;
    return false;
  }
};

/// One run per value; values run concurrently on `jobs` threads.
inline SweepResult sweep(const Scenario& base, const std::string& path, const std::vector<std::string>& values,
                         const RunOptions& opt = {}, int jobs = 1) {
  require(!values.empty(), Errc::BadParameterPath, "no sweep values");
  std::vector<Scenario> scen;
  for (const auto& v : values) scen.push_back(with_parameter(base, path, v));
  SweepResult out;
  out.runs.resize(values.size());
  std::vector<std::exception_ptr> errors(values.size());
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    while (true) {
      std::size_t k;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= values.size()) return;
        k = next++;
      }
      try {
        RunOptions o = opt;
        if (!o.out_dir.empty())
          o.out_dir = (std::filesystem::path(opt.out_dir) / (base.name() + "-sweep") / ("value-" + std::to_string(k))).string();
        out.runs[k] = run_scenario(scen[k], o);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < std::max(1, std::min<int>(jobs, static_cast<int>(values.size()))); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  out.table.header = {"parameter", "value", "content_hash"};
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < out.runs.front().experiments.size(); ++i) {
    const auto& e = out.runs.front().experiments[i];
    for (const auto& r : e.reports) {
      const std::string k = std::to_string(i) + ":" + experiment_name(e.kind) + ":" + r.theorem;
      keys.push_back(k);
      for (const char* c : {":gap", ":gap_stderr", ":bound", ":verdict"}) out.table.header.push_back(k + c);
    }
  }
  for (std::size_t v = 0; v < values.size(); ++v) {
    std::vector<std::string> row{path, values[v], out.runs[v].content_hash};
    std::map<std::string, const BoundReport*> by_key;
    for (std::size_t i = 0; i < out.runs[v].experiments.size(); ++i) {
      const auto& e = out.runs[v].experiments[i];
      for (const auto& r : e.reports) by_key[std::to_string(i) + ":" + experiment_name(e.kind) + ":" + r.theorem] = &r;
    }
    for (const auto& k : keys) {
      auto it = by_key.find(k);
      if (it == by_key.end()) {
        row.insert(row.end(), {"", "", "", ""});
      } else {
        const BoundReport& r = *it->second;
        row.insert(row.end(), {fmt(r.gap.value), fmt(r.gap.stderr_), fmt(r.bound), verdict_name(r.verdict)});
      }
    }
    out.table.rows.push_back(row);
  }
  if (!opt.out_dir.empty()) {
    const auto dir = std::filesystem::path(opt.out_dir) / (base.name() + "-sweep");
    std::filesystem::create_directories(dir);
    write_file(dir / "sweep.csv", out.table.str());
  }
  return out;
}

}  // namespace distgap
