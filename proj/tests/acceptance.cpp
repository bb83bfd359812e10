// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "distgap/runner.hpp"
#include "support.hpp"

using namespace distgap;
using fixtures::benchmark;
using fixtures::diracs;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream note;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void emit(int id, const std::string& title, Outcome& o) {
  std::printf("%s C%d %s:%s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.note.str().c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

void guarded(int id, const std::string& title, const std::function<void(Outcome&)>& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.note << " [error: " << e.what() << "]";
  }
  emit(id, title, o);
}

struct TimedRun {
  RunResult result;
  double seconds = 0.0;
  std::string error;
};

std::map<std::string, TimedRun> runs;

const TimedRun& scenario_run(const std::string& name) {
  auto it = runs.find(name);
  if (it != runs.end()) return it->second;
  TimedRun t;
  const auto t0 = Clock::now();
  try {
    t.result = run_scenario(load_scenario(std::string(DISTGAP_SCENARIOS) + "/" + name + ".toml"));
  } catch (const std::exception& e) {
    t.error = e.what();
  }
  t.seconds = seconds_since(t0);
  std::fprintf(stderr, "  ran %s in %.1f s\n", name.c_str(), t.seconds);
  return runs.emplace(name, std::move(t)).first->second;
}

const BoundReport* find_report(const RunResult& r, const std::string& theorem) {
  for (const auto& e : r.experiments)
    for (const auto& rep : e.reports)
      if (rep.theorem == theorem) return &rep;
  return nullptr;
}

const Record* find_record(const RunResult& r, const std::string& name) {
  for (const auto& e : r.experiments)
    for (const auto& rec : e.records)
      if (rec.name == name) return &rec;
  return nullptr;
}

std::string show(const BoundReport& r) {
  std::ostringstream s;
  s << r.theorem << " " << fmt(r.gap.value) << "+-" << fmt(r.gap.stderr_) << " vs " << fmt(r.bound) << " "
    << verdict_name(r.verdict);
  return s.str();
}

// Report present and not Violated, i.e. gap - 3 se <= bound.
void expect_report(Outcome& o, const TimedRun& t, const std::string& theorem) {
  if (!t.error.empty()) {
    o.require(false, t.error);
    return;
  }
  const BoundReport* r = find_report(t.result, theorem);
  if (!r) {
    o.require(false, "missing report " + theorem);
    return;
  }
  o.note << " " << show(*r) << ";";
  o.require(r->verdict != Verdict::Violated, theorem);
}

std::optional<ValueGrid> benchmark_grid, scalar_grid;

void criterion1() {
  guarded(1, "full HJB vs Cole-Hopf, 161^2 x 400", [](Outcome& o) {
    const auto p = benchmark();
    const auto t0 = Clock::now();
    benchmark_grid.emplace(solve_full_hjb(p, default_grid(p, diracs(2), 161, 400)));
    const double secs = seconds_since(t0);
    const double x[2] = {0.0, 0.0};
    const double hjb = benchmark_grid->value(0.0, x);
    const double ch = cole_hopf_value(p, 0.0, std::vector<double>{0.0, 0.0}).value;
    o.note << " hjb " << fmt(hjb) << " cole-hopf " << fmt(ch) << " diff " << fmt(std::abs(hjb - ch)) << " in "
           << secs << " s";
    o.require(std::abs(hjb - ch) <= 1e-2, "difference above 1e-2");
    o.require(secs < 60.0, "slower than 60 s");
  });
}

void criterion2() {
  guarded(2, "full HJB vs Riccati at 20 points", [](Outcome& o) {
    const auto p = fixtures::scalar_lq(1.0);
    const auto t0 = Clock::now();
    scalar_grid.emplace(solve_full_hjb(p, default_grid(p, diracs(1), 401, 400)));
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      const double t = 0.05 * k, x = -1.5 + 0.15 * k;
      worst = std::max(worst, std::abs(scalar_grid->value(t, &x) - fixtures::scalar_lq_value(1.0, 1.0, t, x)));
    }
    const double secs = seconds_since(t0);
    o.note << " max diff " << fmt(worst) << " in " << secs << " s";
    o.require(worst <= 1e-3, "difference above 1e-3");
    o.require(secs < 10.0, "slower than 10 s");
  });
}

void criterion3() {
  guarded(3, "gap sandwich on three coupled scenarios", [](Outcome& o) {
    for (const char* name : {"colehopf_n2", "coupled_logcosh_n2", "coupled_weighted_n2"}) {
      const TimedRun& t = scenario_run(name);
      o.note << " " << name << " (" << static_cast<int>(t.seconds) << " s):";
      expect_report(o, t, "value_gap_nonnegative");
      expect_report(o, t, "value_gap");
      o.require(t.seconds < 300.0, std::string(name) + " slower than 5 min");
      if (t.error.empty()) {
        const auto mc = t.result.scenario.solver().at("mc").at("particles").get<std::size_t>();
        o.require(mc >= 100000, std::string(name) + " uses fewer than 1e5 particles");
      }
    }
  });
}

void criterion4() {
  guarded(4, "zero gap on separable scenarios", [](Outcome& o) {
    for (const char* name : {"separable_quadratic_n2", "separable_logcosh_n3", "separable_running_n2"}) {
      o.note << " " << name << ":";
      expect_report(o, scenario_run(name), "zero_gap");
    }
  });
}

void criterion5() {
  guarded(5, "quadratic bound dominance", [](Outcome& o) {
    for (const char* name : {"colehopf_n2", "coupled_logcosh_n2"}) {
      const TimedRun& t = scenario_run(name);
      o.note << " " << name << ":";
      expect_report(o, t, "quadratic_bound");
      expect_report(o, t, "quadratic_below_general");
    }
  });
}

void criterion6() {
  guarded(6, "heterogeneous ring sweep", [](Outcome& o) {
    const TimedRun& t = scenario_run("ring_n8");
    for (const char* r : {"gap_nonincreasing[m=2->4]", "gap_nonincreasing[m=4->7]", "bound_inverse_in_m",
                          "distributed_equals_meanfield[m=7]", "hetero_bound[m=2]", "hetero_bound[m=4]",
                          "hetero_bound[m=7]"})
      expect_report(o, t, r);
  });
}

void criterion7() {
  guarded(7, "mean-field rate ladder", [](Outcome& o) {
    const TimedRun& t = scenario_run("meanfield_ladder");
    expect_report(o, t, "scaled_meanfield_gap_bounded");
    expect_report(o, t, "rate_exponent");
  });
}

void criterion8() {
  guarded(8, "control gap bound", [](Outcome& o) { expect_report(o, scenario_run("colehopf_n2"), "control_gap"); });
}

double weak_error(int steps) {
  Drift d;
  d.mode = DriftMode::PerAgent;
  d.agent = [](double, int, int, const double* x, double* out) { out[0] = -x[0]; };
  SimConfig c;
  c.particles = 1000000;
  c.steps = steps;
  c.seed = 11;
  c.store = StoreMode::TerminalOnly;
  const auto e = euler_maruyama(d, {InitialLaw::dirac({1.0})}, 1, c);
  double m = 0.0;
  for (std::size_t q = 0; q < e.N; ++q) m += e.terminal(q)[0];
  return std::abs(m / e.N - std::exp(-1.0));
}

void criterion9() {
  guarded(9, "property suites", [](Outcome& o) {
    // Equilibrium error on random snapshots.
    const auto p = benchmark();
    if (!benchmark_grid) benchmark_grid.emplace(solve_full_hjb(p, default_grid(p, diracs(2), 161, 400)));
    const ValueGrid& V = *benchmark_grid;
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t M = V.grid().axis(0).points;
    double worst_eq = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<std::vector<double>> w(2, std::vector<double>(M, 0.0));
      const double sparsity = u(gen);
      for (auto& v : w) {
        double s = 0.0;
        for (double& x : v) s += (x = u(gen) < sparsity ? 0.0 : u(gen));
        if (s == 0.0) v[M / 2] = s = 1.0;
        for (double& x : v) x /= s;
      }
      worst_eq = std::min(worst_eq, eq_error(V, w, u(gen)));
    }
    o.note << " min eq_error " << fmt(worst_eq) << ";";
    o.require(worst_eq >= 0.0, "negative equilibrium error");

    // Spectral sandwich on the convex solves.
    const auto sb = check_spectral_sandwich(V, constants_ledger(p, diracs(2)).C_S, 2, 10.0, 0.2, 8);
    const auto sq = fixtures::scalar_lq(1.0);
    if (!scalar_grid) scalar_grid.emplace(solve_full_hjb(sq, default_grid(sq, diracs(1), 401, 400)));
    const auto ss = check_spectral_sandwich(*scalar_grid, constants_ledger(sq, diracs(1)).C_S, 1);
    o.note << " spectral [" << fmt(sb.min_eigenvalue) << ", " << fmt(sb.max_eigenvalue) << "] and ["
           << fmt(ss.min_eigenvalue) << ", " << fmt(ss.max_eigenvalue) << "];";
    o.require(sb.holds() && ss.holds(), "spectral sandwich violated");

    // Transport metric axioms.
    std::normal_distribution<double> z;
    int axiom_fail = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const int dim = 1 + trial % 2;
      auto cloud = [&](double shift) {
        std::vector<double> v(static_cast<std::size_t>(12 * dim));
        for (double& x : v) x = z(gen) + shift;
        return v;
      };
      const auto a = cloud(u(gen)), b = cloud(u(gen)), c = cloud(u(gen));
      const double ab = wasserstein2(a, b, dim), ba = wasserstein2(b, a, dim), bc = wasserstein2(b, c, dim),
                   ac = wasserstein2(a, c, dim), aa = wasserstein2(a, a, dim);
      if (ab < 0.0 || std::abs(ab - ba) > 1e-12 || ac > ab + bc + 1e-12 || aa > 1e-12) ++axiom_fail;
    }
    o.note << " W2 axiom failures " << axiom_fail << ";";
    o.require(axiom_fail == 0, "transport metric axioms");

    // Weak order of the Euler scheme.
    const double e4 = weak_error(4), e8 = weak_error(8), e16 = weak_error(16);
    o.note << " weak ratios " << e4 / e8 << ", " << e8 / e16 << ";";
    for (double r : {e4 / e8, e8 / e16}) o.require(r >= 1.6 && r <= 2.4, "weak-order ratio");

    // Bit-identical reruns across thread counts.
    Drift d = full_information_control(V, p);
    SimConfig c;
    c.particles = 4000;
    c.steps = 50;
    c.seed = 99;
    const auto r1 = euler_maruyama(d, diracs(2), 1, c);
    c.threads = 4;
    const auto r4 = euler_maruyama(d, diracs(2), 1, c);
    const auto r4b = euler_maruyama(d, diracs(2), 1, c);
    const bool same = r1.data == r4.data && r4.data == r4b.data;
    o.note << " reruns " << (same ? "identical" : "differ");
    o.require(same, "reruns differ");
  });
}

void criterion10() {
  guarded(10, "empirical Poincare ratio of the terminal law", [](Outcome& o) {
    for (const char* name : {"colehopf_n2", "coupled_logcosh_n2"}) {
      const TimedRun& t = scenario_run(name);
      o.note << " " << name << ":";
      if (!t.error.empty()) {
        o.require(false, t.error);
        continue;
      }
      const BoundReport* r = find_report(t.result, "poincare_terminal");
      const Record* rec = find_record(t.result, "poincare_ratio");
      if (!r || !rec) {
        o.require(false, "missing Poincare report");
        continue;
      }
      // (T + c0)(1 + 3 x relative bootstrap spread)
      const double rel = rec->value > 0.0 ? rec->stderr_ / rec->value : 0.0;
      const double limit = r->bound * (1.0 + 3.0 * rel);
      o.note << " ratio " << fmt(rec->value) << " limit " << fmt(limit) << ";";
      o.require(rec->value <= limit, std::string(name) + " Poincare ratio");
    }
  });
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  criterion10();
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
