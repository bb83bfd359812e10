#pragma once

// Mean-field limit: the single-agent control problem over laws, symmetric
// value sequences in n, power-law rate fits and chaos gaps against
// independent mean-field copies.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "distgap/conditional.hpp"
#include "distgap/distributed.hpp"
#include "distgap/hjb.hpp"
#include "distgap/marginal.hpp"
#include "distgap/metrics.hpp"
#include "distgap/model.hpp"
#include "distgap/oracles.hpp"
#include "distgap/sde.hpp"

namespace distgap {

/// <m, g1> + <m (x) m, g2(x - y)> + (c/2)|<m, x>|^2.
struct LimitFunctional {
  Atom g1, g2;
  double mean_coef = 0.0;

  bool is_zero() const { return g1.is_zero() && g2.is_zero() && mean_coef == 0.0; }
};

/// Limit of a symmetric cost family: mean-field costs directly, pairwise
/// costs when the interaction matrix is doubly stochastic.
inline LimitFunctional limit_functional(const CostSpec& c) {
  if (c.is_zero()) return {};
  switch (c.kind()) {
    case CostKind::MeanField: return {c.own().front(), c.pair(), c.mean_coef()};
    case CostKind::Separable: return {c.own().front(), Atom::zero(), 0.0};
    case CostKind::PairwiseGraph:
      require(c.doubly_stochastic(), Errc::NotDoublyStochastic, "pairwise limit needs a doubly stochastic J");
      return {c.own().front(), c.pair(), c.mean_coef()};
    case CostKind::Custom: break;
  }
  fail(Errc::AsymmetricProblem, "no mean-field limit for a custom cost");
}

struct MeanFieldSolution {
  double value = 0.0;
  ValueGrid grid;
  MarginalFlow flow;
  std::vector<double> residuals;
  int iterations = 0;
};

/// Fixed point of HJB with source and terminal data given by the linear
/// derivatives of the running and terminal functionals, and the forward flow.
inline MeanFieldSolution solve_meanfield_pde(const LagrangianSpec& lag, const LimitFunctional& Fm,
                                             const LimitFunctional& Gm, const InitialLaw& m0, double T,
                                             const DistributedConfig& cfg = {}) {
  const int d = m0.dim();
  require(d <= 2, Errc::InvalidArgument, "mean-field PDE route supports d <= 2");
  const int K = cfg.steps;
  const double dt = T / K;
  std::vector<Axis> axes = cfg.axes;
  if (axes.empty())
    for (int k = 0; k < d; ++k) {
      auto [a, b] = m0.effective_range(k);
      const double w = cfg.width_factor * std::sqrt(T + m0.variance()[k]);
      axes.push_back({a - w, b + w, cfg.points});
    }
  const TensorGrid g(axes);
  const std::size_t M = g.size();
  require(detail::tail_mass_outside(m0, g) <= cfg.escape_tol, Errc::MarginalEscape, "initial law leaves the grid");
  const std::vector<double> start = m0.on_grid(g);
  const PairFunctional Ff(Fm.g1, Fm.g2, Fm.mean_coef, g), Gf(Gm.g1, Gm.g2, Gm.mean_coef, g);
  const bool has_F = !Fm.is_zero();

  using Flow = std::vector<std::vector<double>>;
  auto push = [&](const std::vector<std::vector<double>>* policy) {
    Flow f(static_cast<std::size_t>(K + 1));
    std::vector<double> m = start, zero(M * d, 0.0);
    f[0] = m;
    for (int k = 0; k < K; ++k) {
      push_forward(g, dt, policy ? (*policy)[k] : zero, 1.0, cfg.boundary, m);
      f[k + 1] = m;
    }
    return f;
  };
  Flow flow = push(nullptr), fresh;
  HjbRaw raw;
  MeanFieldSolution sol;
  const bool coupled = !(Gm.g2.is_zero() && Gm.mean_coef == 0.0 && Fm.g2.is_zero() && Fm.mean_coef == 0.0);
  const int stride = std::max(1, K / std::max(1, cfg.residual_levels));
  double lambda = cfg.picard.damping, prev = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (int it = 0; it < cfg.picard.max_iters; ++it) {
    HjbSetup S;
    S.grid = g;
    S.T = T;
    S.steps = K;
    S.boundary = cfg.boundary;
    S.blocks = {{&lag, 0, d}};
    S.weight = 1.0;
    S.scale = 1.0;
    S.store_every = cfg.store_every;
    S.record_policy = true;
    S.scheme = cfg.scheme;
    Gf.derivative(flow[K], S.terminal);
    if (has_F) S.running = [&](int k, std::vector<double>& out) { Ff.derivative(flow[k + 1], out); };
    raw = run_hjb(S);
    fresh = push(&raw.policy);
    for (int k = 0; k <= K; k += stride)
      if (detail::boundary_mass(g, fresh[k]) > cfg.escape_tol)
        fail(Errc::MarginalEscape, "mean-field flow reaches the edge of the grid");
    double res = 0.0;
    for (int k = stride; k <= K; k += stride) res += stride * dt * detail::grid_w2(g, fresh[k], flow[k]);
    sol.residuals.push_back(res);
    sol.iterations = it + 1;
    if (!coupled || res <= cfg.picard.tol) {
      flow.swap(fresh);
      converged = true;
      break;
    }
    if (res > prev) lambda = std::max(cfg.picard.min_damping, 0.5 * lambda);
    prev = res;
    for (int k = 0; k <= K; ++k)
      for (std::size_t a = 0; a < M; ++a) flow[k][a] = lambda * fresh[k][a] + (1.0 - lambda) * flow[k][a];
  }
  if (!converged)
    fail(Errc::PicardStalled, "mean-field fixed point residual " + std::to_string(sol.residuals.back()) +
                                  " above tolerance");

  std::vector<double> x(static_cast<std::size_t>(d));
  double value = 0.0;
  for (int k = 0; k < K; ++k) {
    const auto& b = raw.policy[k];
    const auto& m = flow[k + 1];
    double run = 0.0;
    for (std::size_t a = 0; a < M; ++a) {
      if (m[a] == 0.0) continue;
      g.point(a, x.data());
      run += m[a] * lag.value(x.data(), b.data() + a * d);
    }
    if (has_F) run += Ff.value(m);
    value += dt * run;
  }
  value += Gf.value(flow[K]);
  sol.value = value;

  GridSpec spec;
  spec.axes = axes;
  spec.time_steps = K;
  spec.boundary = cfg.boundary;
  spec.store_every = cfg.store_every;
  sol.grid = ValueGrid(spec, 1, d, T, std::move(raw.times), std::move(raw.values), "meanfield");
  sol.flow.n = 1;
  sol.flow.d = d;
  sol.flow.supports = {g};
  sol.flow.weights.assign(1, {});
  for (int k = 0; k <= K; k += cfg.store_every) {
    sol.flow.times.push_back(k * dt);
    sol.flow.weights[0].push_back(flow[k]);
  }
  if (K % cfg.store_every != 0) {
    sol.flow.times.push_back(T);
    sol.flow.weights[0].push_back(flow[K]);
  }
  return sol;
}

/// a(t, x) = a*(x, D u(t, x)) applied to every agent.
inline Drift meanfield_control(const MeanFieldSolution& s, const LagrangianSpec& lag) {
  Drift dr;
  dr.mode = DriftMode::PerAgent;
  dr.label = "meanfield";
  dr.agent = [&s, &lag](double t, int, int, const double* xi, double* out) {
    std::array<double, 4> g{};
    s.grid.gradient(t, xi, g.data());
    lag.hamiltonian(xi, g.data(), out);
  };
  return dr;
}

// ---------------------------------------------------------------------------
// Value sequences and rates
// ---------------------------------------------------------------------------

struct SequenceRow {
  int n = 0;
  double v_full = 0.0, v_full_err = 0.0;
  std::string full_method;
  double v_dist = 0.0, v_dist_err = 0.0;
  std::optional<double> U;
  std::string u_method;
};

struct SequenceConfig {
  DistributedConfig dist;
  GibbsConfig gibbs;
  int full_points = 161;
  int full_steps = 400;
  double t = 0.0;
  bool with_limit = true;
};

/// Limit value: closed form when the data are quadratic and the start
/// Gaussian, otherwise the mean-field PDE fixed point.
inline std::pair<double, std::string> meanfield_value(const ControlProblem& p, const InitialLaw& m,
                                                      const DistributedConfig& cfg) {
  const LimitFunctional Gm = limit_functional(p.G), Fm = limit_functional(p.F);
  const LagrangianSpec& lag = p.lagrangian(0);
  if (m.kind() != LawKind::Particles && lag.kind() != LagrangianKind::Custom) {
    try {
      const auto G = mean_variance_form(Gm.g1, Gm.g2, Gm.mean_coef, p.d);
      const auto F = mean_variance_form(Fm.g1, Fm.g2, Fm.mean_coef, p.d);
      return {meanfield_lq(G, F, lag, m, p.T).value, "riccati"};
    } catch (const Error& e) {
      if (e.code() != Errc::NonLqFunctional) throw;
    }
  }
  return {solve_meanfield_pde(lag, Fm, Gm, m, p.T, cfg).value, "pde"};
}

/// Full-information value, distributed value and limit value of a symmetric
/// family at (m, ..., m).
template <class Family>
std::vector<SequenceRow> value_sequence(Family&& family, const InitialLaw& m, const std::vector<int>& ns,
                                        const SequenceConfig& cfg = {}) {
  std::vector<SequenceRow> rows;
  std::optional<std::pair<double, std::string>> limit;
  for (int n : ns) {
    const ControlProblem p = family(n);
    require(p.exchangeable(), Errc::AsymmetricProblem, "value sequences need a symmetric family");
    const std::vector<InitialLaw> m0(static_cast<std::size_t>(n), m);
    SequenceRow r;
    r.n = n;
    if (p.cole_hopf_case()) {
      const GibbsValue v = cole_hopf_value(p, cfg.t, m0, cfg.gibbs);
      r.v_full = v.value;
      r.v_full_err = v.stderr_;
      r.full_method = v.method;
    } else if (n * p.d <= 4) {
      const ValueGrid V = solve_full_hjb(p, default_grid(p, m0, cfg.full_points, cfg.full_steps));
      r.v_full = lift_value(V, m0, cfg.t);
      r.full_method = "hjb";
    } else {
      fail(Errc::NoFullInfoRoute, "no full-information route for n = " + std::to_string(n));
    }
    r.v_dist = solve_distributed_pde(p, m0, cfg.dist).value;
    if (cfg.with_limit) {
      if (!limit) limit = meanfield_value(p, m, cfg.dist);
      r.U = limit->first;
      r.u_method = limit->second;
    }
    rows.push_back(r);
  }
  return rows;
}

struct RateFit {
  std::vector<int> n;
  std::vector<double> gap, gap_err;
  double exponent = 0.0;
  double constant = 0.0;
  double residual = 0.0;
};

/// Least squares of log|gap| against log n.
inline RateFit fit_rate(const std::vector<int>& ns, const std::vector<double>& gaps, const std::vector<double>& errs,
                        double noise_factor = 5.0) {
  require(ns.size() == gaps.size() && gaps.size() == errs.size(), Errc::DimensionMismatch, "rate table columns");
  for (std::size_t k = 1; k < ns.size(); ++k)
    require(ns[k] > ns[k - 1], Errc::InvalidArgument, "n values must increase");
  RateFit f;
  f.n = ns;
  f.gap = gaps;
  f.gap_err = errs;
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < ns.size(); ++k)
    if (std::abs(gaps[k]) > noise_factor * errs[k] && gaps[k] != 0.0) {
      lx.push_back(std::log(static_cast<double>(ns[k])));
      ly.push_back(std::log(std::abs(gaps[k])));
    }
  if (lx.size() < 3) fail(Errc::GapsBelowNoise, "fewer than three gaps clear the noise floor");
  const double N = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / N, my = std::accumulate(ly.begin(), ly.end(), 0.0) / N;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sxx += (lx[k] - mx) * (lx[k] - mx);
    sxy += (lx[k] - mx) * (ly[k] - my);
  }
  f.exponent = sxy / sxx;
  f.constant = std::exp(my - f.exponent * mx);
  double r = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    const double e = ly[k] - (my + f.exponent * (lx[k] - mx));
    r += e * e;
  }
  f.residual = std::sqrt(r / N);
  return f;
}

// ---------------------------------------------------------------------------
// Chaos against mean-field copies
// ---------------------------------------------------------------------------

/// Ensemble restricted to the listed agents.
inline ParticleEnsemble select_agents(const ParticleEnsemble& e, const std::vector<int>& S) {
  ParticleEnsemble o;
  o.N = e.N;
  o.n = static_cast<int>(S.size());
  o.d = e.d;
  o.steps = e.steps;
  o.T = e.T;
  o.seed = e.seed;
  o.stored_steps = e.stored_steps;
  o.origin = e.origin;
  const int W = o.n * o.d;
  o.data.resize(o.N * o.stored_steps.size() * W);
  for (std::size_t p = 0; p < e.N; ++p)
    for (int l = 0; l < e.levels(); ++l)
      for (std::size_t s = 0; s < S.size(); ++s)
        for (int c = 0; c < e.d; ++c) o.at(p, l)[s * e.d + c] = e.at(p, l)[S[s] * e.d + c];
  return o;
}

/// W2^2 between the first k agents' paths of the n-agent optimum and k
/// independent mean-field copies.
inline ChaosGap chaos_vs_meanfield(const ControlProblem& p, const ParticleEnsemble& X, const ParticleEnsemble& copies,
                                   int k, std::size_t batch_size = 256) {
  require(p.exchangeable(), Errc::AsymmetricProblem, "chaos against the mean-field law needs a symmetric problem");
  require(k >= 1 && k <= X.n && k <= copies.n, Errc::InvalidArgument, "subset size out of range");
  std::vector<int> S(static_cast<std::size_t>(k));
  std::iota(S.begin(), S.end(), 0);
  return marginal_chaos_gap(select_agents(X, S), select_agents(copies, S), k, 1, batch_size);
}

}  // namespace distgap
