#pragma once

// Distributed controls: the coupled system of per-agent HJB equations and
// marginal flows, the intermediate process driven by conditional averages of
// the full value gradient, and feedback drifts built from value grids.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "distgap/conditional.hpp"
#include "distgap/error.hpp"
#include "distgap/hjb.hpp"
#include "distgap/marginal.hpp"
#include "distgap/model.hpp"
#include "distgap/sde.hpp"
#include "distgap/transport.hpp"

namespace distgap {

struct PicardConfig {
  double damping = 0.5;
  int max_iters = 60;
  double tol = 1e-6;
  double min_damping = 1.0 / 64.0;
};

struct DistributedConfig {
  int points = 401;  ///< per axis
  int steps = 800;
  double width_factor = 6.0;
  int store_every = 4;  ///< stored value and flow levels
  BoundaryMode boundary = BoundaryMode::LinearExtrapolation;
  SchemeConfig scheme;
  PicardConfig picard;
  int residual_levels = 50;
  double escape_tol = 1e-6;
  int custom_samples = 64;
  std::vector<Axis> axes;  ///< overrides the automatic box when set
  bool use_symmetry = true;
};

struct DistributedSolution {
  int n = 1;
  int d = 1;
  double T = 1.0;
  std::vector<ValueGrid> grids;  ///< one per solved representative
  std::vector<int> representative;  ///< agent -> index into grids
  MarginalFlow flow;
  double value = 0.0;
  std::vector<double> agent_lifts;  ///< <m0^i, v^i(0, .)>
  std::vector<double> residuals;
  int iterations = 0;
  bool symmetric_shortcut = false;
  double final_damping = 1.0;

  const ValueGrid& grid(int agent) const { return grids[static_cast<std::size_t>(representative[agent])]; }
};

namespace detail {

inline std::vector<Axis> shared_axes(const ControlProblem& p, const std::vector<InitialLaw>& m0, int points,
                                     double width) {
  std::vector<Axis> ax;
  for (int k = 0; k < p.d; ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const InitialLaw& l : m0) {
      double a = l.mean()[k], b = l.mean()[k];
      if (l.kind() == LawKind::Particles) std::tie(a, b) = l.effective_range(k);
      const double w = width * std::sqrt(p.T + l.variance()[k]);
      lo = std::min(lo, a - w);
      hi = std::max(hi, b + w);
    }
    ax.push_back({lo, hi, points});
  }
  return ax;
}

inline bool same_law(const InitialLaw& a, const InitialLaw& b) {
  return a.kind() == b.kind() && a.mean() == b.mean() && a.variance() == b.variance() && a.points() == b.points() &&
         a.weights() == b.weights();
}

/// W2 between node weights on a grid; per-axis marginals in rank 2.
inline double grid_w2(const TensorGrid& g, const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (int ax = 0; ax < g.rank(); ++ax) {
    const int N = g.axis(ax).points;
    std::vector<double> nodes(static_cast<std::size_t>(N)), ma(nodes.size(), 0.0), mb(nodes.size(), 0.0);
    for (int k = 0; k < N; ++k) nodes[k] = g.axis(ax).node(k);
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
      const int c = g.coord(idx, ax);
      ma[c] += a[idx];
      mb[c] += b[idx];
    }
    s += w2_squared_histograms(nodes, ma, mb);
  }
  return std::sqrt(std::max(0.0, s));
}

inline double boundary_mass(const TensorGrid& g, const std::vector<double>& m, int layer = 2) {
  double s = 0.0;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    bool edge = false;
    for (int a = 0; a < g.rank() && !edge; ++a) {
      const int c = g.coord(idx, a);
      edge = c < layer || c >= g.axis(a).points - layer;
    }
    if (edge) s += m[idx];
  }
  return s;
}

}  // namespace detail

/// Fixed point of  flows -> per-agent HJB with conditional costs -> pushed flows.
inline DistributedSolution solve_distributed_pde(const ControlProblem& p, const std::vector<InitialLaw>& m0,
                                                 const DistributedConfig& cfg = {}) {
  p.validate();
  require(p.d <= 2, Errc::InvalidArgument, "distributed PDE route supports d <= 2");
  require(static_cast<int>(m0.size()) == p.n, Errc::DimensionMismatch, "one initial law per agent");
  const int n = p.n, K = cfg.steps;
  const double dt = p.T / K;
  const std::vector<Axis> axes = cfg.axes.empty() ? detail::shared_axes(p, m0, cfg.points, cfg.width_factor) : cfg.axes;
  const TensorGrid g(axes);
  const std::size_t M = g.size();

  bool symmetric = cfg.use_symmetry && p.exchangeable();
  for (int i = 1; i < n && symmetric; ++i) symmetric = detail::same_law(m0[0], m0[i]);
  std::vector<int> reps;
  std::vector<int> rep_of(static_cast<std::size_t>(n));
  if (symmetric) {
    reps = {0};
    std::fill(rep_of.begin(), rep_of.end(), 0);
  } else {
    for (int i = 0; i < n; ++i) {
      reps.push_back(i);
      rep_of[i] = i;
    }
  }
  const int R = static_cast<int>(reps.size());

  std::vector<std::vector<double>> start(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    const InitialLaw& l = m0[reps[r]];
    require(detail::tail_mass_outside(l, g) <= cfg.escape_tol, Errc::MarginalEscape, "initial law leaves the grid");
    start[r] = l.on_grid(g);
  }

  using Flow = std::vector<std::vector<double>>;  // [level][node]
  auto push = [&](const std::vector<double>& m0w, const std::vector<std::vector<double>>* policy) {
    Flow f(static_cast<std::size_t>(K + 1));
    std::vector<double> m = m0w, zero(M * p.d, 0.0);
    f[0] = m;
    for (int k = 0; k < K; ++k) {
      push_forward(g, dt, policy ? (*policy)[k] : zero, 1.0, cfg.boundary, m);
      f[k + 1] = m;
    }
    return f;
  };
  std::vector<Flow> flows(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) flows[r] = push(start[r], nullptr);

  ConditionalCost condF(p.F, g, cfg.custom_samples), condG(p.G, g, cfg.custom_samples);
  auto weights_at = [&](const std::vector<Flow>& fl, int level) {
    AgentWeights w(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) w[j] = &fl[rep_of[j]][level];
    return w;
  };

  const bool coupled = !p.separable();
  const bool has_F = !p.F.is_zero();
  DistributedSolution sol;
  sol.n = n;
  sol.d = p.d;
  sol.T = p.T;
  sol.symmetric_shortcut = symmetric;
  sol.representative = rep_of;
  double lambda = cfg.picard.damping, prev = std::numeric_limits<double>::infinity();
  std::vector<HjbRaw> raws(static_cast<std::size_t>(R));
  std::vector<Flow> fresh(static_cast<std::size_t>(R));
  const int stride = std::max(1, K / std::max(1, cfg.residual_levels));
  bool converged = false;

  for (int it = 0; it < cfg.picard.max_iters; ++it) {
    std::vector<double> totalF;
    if (has_F && p.F.is_structured()) {
      totalF.resize(static_cast<std::size_t>(K));
      for (int k = 0; k < K; ++k) totalF[k] = condF.product_expectation(weights_at(flows, k + 1));
    }
    const double totalG = condG.product_expectation(weights_at(flows, K), static_cast<std::uint32_t>(K));
    for (int r = 0; r < R; ++r) {
      const int i = reps[r];
      HjbSetup S;
      S.grid = g;
      S.T = p.T;
      S.steps = K;
      S.boundary = cfg.boundary;
      S.blocks = {{&p.lagrangian(i), 0, p.d}};
      S.weight = 1.0 / n;
      S.scale = n;
      S.store_every = cfg.store_every;
      S.record_policy = true;
      S.scheme = cfg.scheme;
      condG.conditional(i, weights_at(flows, K), S.terminal, totalG, static_cast<std::uint32_t>(K));
      if (has_F) {
        S.running = [&, i](int k, std::vector<double>& out) {
          const double tot = totalF.empty() ? std::numeric_limits<double>::quiet_NaN() : totalF[k];
          condF.conditional(i, weights_at(flows, k + 1), out, tot, static_cast<std::uint32_t>(k + 1));
        };
      }
      raws[r] = run_hjb(S);
      fresh[r] = push(start[r], &raws[r].policy);
      for (int k = 0; k <= K; k += stride)
        if (detail::boundary_mass(g, fresh[r][k]) > cfg.escape_tol)
          fail(Errc::MarginalEscape, "flow mass reaches the edge of the grid");
    }
    double res = 0.0;
    for (int r = 0; r < R; ++r) {
      const double mult = symmetric ? n : 1.0;
      for (int k = stride; k <= K; k += stride) res += mult * stride * dt * detail::grid_w2(g, fresh[r][k], flows[r][k]);
    }
    sol.residuals.push_back(res);
    sol.iterations = it + 1;
    if (!coupled || res <= cfg.picard.tol) {
      flows.swap(fresh);
      converged = true;
      break;
    }
    if (res > prev) lambda = std::max(cfg.picard.min_damping, 0.5 * lambda);
    prev = res;
    for (int r = 0; r < R; ++r)
      for (int k = 0; k <= K; ++k)
        for (std::size_t a = 0; a < M; ++a) flows[r][k][a] = lambda * fresh[r][k][a] + (1.0 - lambda) * flows[r][k][a];
  }
  sol.final_damping = lambda;
  if (!converged)
    fail(Errc::PicardStalled, "distributed fixed point residual " + std::to_string(sol.residuals.back()) +
                                  " above tolerance after " + std::to_string(cfg.picard.max_iters) + " iterations");

  // Value from the converged flows: running terms pair level k+1 with step k.
  std::vector<double> x(static_cast<std::size_t>(p.d));
  std::vector<std::vector<double>> lcost(static_cast<std::size_t>(R), std::vector<double>(static_cast<std::size_t>(K), 0.0));
  double value = 0.0;
  for (int r = 0; r < R; ++r) {
    const LagrangianSpec& L = p.lagrangian(reps[r]);
    for (int k = 0; k < K; ++k) {
      const auto& b = raws[r].policy[k];
      const auto& m = flows[r][k + 1];
      double s = 0.0;
      for (std::size_t a = 0; a < M; ++a) {
        if (m[a] == 0.0) continue;
        g.point(a, x.data());
        s += m[a] * L.value(x.data(), b.data() + a * p.d);
      }
      lcost[r][k] = s;
    }
  }
  for (int k = 0; k < K; ++k) {
    double run = 0.0;
    for (int i = 0; i < n; ++i) run += lcost[rep_of[i]][k];
    run /= n;
    if (has_F) run += condF.product_expectation(weights_at(flows, k + 1), static_cast<std::uint32_t>(k + 1));
    value += dt * run;
  }
  value += condG.product_expectation(weights_at(flows, K), static_cast<std::uint32_t>(K));
  sol.value = value;

  GridSpec spec;
  spec.axes = axes;
  spec.time_steps = K;
  spec.boundary = cfg.boundary;
  spec.store_every = cfg.store_every;
  for (int r = 0; r < R; ++r) {
    sol.grids.emplace_back(spec, 1, p.d, p.T, std::move(raws[r].times), std::move(raws[r].values),
                           p.name + "/agent" + std::to_string(reps[r]));
  }
  for (int i = 0; i < n; ++i) {
    const ValueGrid& v = sol.grid(i);
    double s = 0.0;
    for (std::size_t a = 0; a < M; ++a) s += start[rep_of[i]][a] * v.values(0)[a];
    sol.agent_lifts.push_back(s);
  }

  sol.flow.n = n;
  sol.flow.d = p.d;
  sol.flow.supports = {g};
  for (int k = 0; k <= K; k += cfg.store_every) sol.flow.times.push_back(k * dt);
  if (K % cfg.store_every != 0) sol.flow.times.push_back(p.T);
  sol.flow.weights.assign(static_cast<std::size_t>(n), {});
  for (int i = 0; i < n; ++i)
    for (double t : sol.flow.times) {
      const int k = static_cast<int>(std::lround(t / dt));
      sol.flow.weights[i].push_back(flows[rep_of[i]][k]);
    }
  return sol;
}

// ---------------------------------------------------------------------------
// Feedback drifts
// ---------------------------------------------------------------------------

/// a^i(t, x) = a*(x^i, n D_i V(t, x)) from the full-information value.
inline Drift full_information_control(const ValueGrid& V, const ControlProblem& p) {
  require(V.rank() == p.n * p.d, Errc::DimensionMismatch, "value grid vs problem");
  Drift dr;
  dr.mode = DriftMode::FullState;
  dr.label = "full-information";
  const int n = p.n, d = p.d;
  dr.full = [&V, &p, n, d](double t, int, const double* x, double* out) {
    std::array<double, 8> g{}, q{};
    V.gradient(t, x, g.data());
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < d; ++k) q[k] = n * g[i * d + k];
      p.lagrangian(i).hamiltonian(x + i * d, q.data(), out + i * d);
    }
  };
  return dr;
}

/// a^i(t, x^i) = a*(x^i, n D v^i(t, x^i)) from the per-agent value grids.
inline Drift distributed_control(const DistributedSolution& s, const ControlProblem& p) {
  Drift dr;
  dr.mode = DriftMode::PerAgent;
  dr.label = "distributed";
  const int n = p.n, d = p.d;
  dr.agent = [&s, &p, n, d](double t, int, int i, const double* xi, double* out) {
    std::array<double, 8> g{};
    s.grid(i).gradient(t, xi, g.data());
    for (int k = 0; k < d; ++k) g[k] *= n;
    p.lagrangian(i).hamiltonian(xi, g.data(), out);
  };
  return dr;
}

// ---------------------------------------------------------------------------
// Intermediate process
// ---------------------------------------------------------------------------

struct HatXConfig {
  int steps = 200;
  int threads = 1;
  int flow_stride = 1;
  double outside_tol = 1e-3;  ///< largest fraction of particles allowed outside the grid
};

struct HatXResult {
  ParticleEnsemble ensemble;
  MarginalFlow flow;  ///< CIC weights of each agent on its block of the value grid
};

/// Conditional average over the other agents' node weights of D_i V at a stored level.
inline void conditional_gradient_field(const ValueGrid& V, int level, const std::vector<std::vector<double>>& hist,
                                       int agent, std::vector<double>& out) {
  const TensorGrid& g = V.grid();
  const int d = V.block_dim(), n = V.blocks(), R = g.rank();
  TensorGrid bg = detail::block_grid(g, agent * d, d);
  std::vector<TensorGrid> bgs;
  for (int j = 0; j < n; ++j) bgs.push_back(detail::block_grid(g, j * d, d));
  out.assign(bg.size() * d, 0.0);
  std::vector<double> mass(bg.size(), 0.0);
  const auto& grad = V.gradients(level);
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    double w = 1.0;
    for (int j = 0; j < n && w != 0.0; ++j)
      if (j != agent) w *= hist[j][detail::block_index(g, idx, j * d, d, bgs[j])];
    if (w == 0.0) continue;
    const std::size_t b = detail::block_index(g, idx, agent * d, d, bg);
    mass[b] += w;
    for (int k = 0; k < d; ++k) out[b * d + k] += w * grad[idx * R + agent * d + k];
  }
  for (std::size_t b = 0; b < bg.size(); ++b)
    if (mass[b] > 0.0)
      for (int k = 0; k < d; ++k) out[b * d + k] /= mass[b];
}

/// McKean-Vlasov particles with drift a*(x^i, n <m^{-i}_s, D_i V(s, x^i, .)>).
inline HatXResult simulate_hatX(const ValueGrid& V, const ControlProblem& p, const std::vector<InitialLaw>& m0,
                                std::size_t N, std::uint64_t seed, const HatXConfig& cfg = {}) {
  require(V.blocks() == p.n && V.block_dim() == p.d, Errc::DimensionMismatch, "value grid vs problem");
  const int n = p.n, d = p.d, W = n * d;
  std::vector<TensorGrid> bgs;
  for (int j = 0; j < n; ++j) bgs.push_back(detail::block_grid(V.grid(), j * d, d));
  auto fields = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(n));
  auto hist = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(n));
  HatXResult res;
  res.flow.n = n;
  res.flow.d = d;
  res.flow.supports = bgs;
  res.flow.weights.assign(static_cast<std::size_t>(n), {});
  const double dt = p.T / cfg.steps;

  auto deposit = [&](const std::vector<double>& state) {
    std::size_t outside = 0;
    for (int j = 0; j < n; ++j) {
      (*hist)[j].assign(bgs[j].size(), 0.0);
      for (std::size_t q = 0; q < N; ++q) {
        const double* x = state.data() + q * W + j * d;
        if (!bgs[j].contains(x)) ++outside;
        bgs[j].deposit(x, 1.0 / N, (*hist)[j].data());
      }
    }
    if (static_cast<double>(outside) > cfg.outside_tol * N * n)
      fail(Errc::QuadratureSupportError, "intermediate-process particles leave the value grid");
  };

  Drift dr;
  dr.mode = DriftMode::PerAgent;
  dr.label = "intermediate";
  dr.prepare = [&](int step, double t, const std::vector<double>& state) {
    deposit(state);
    if (step % cfg.flow_stride == 0) {
      res.flow.times.push_back(t);
      for (int j = 0; j < n; ++j) res.flow.weights[j].push_back((*hist)[j]);
    }
    int s0, s1;
    double f;
    V.bracket(t, s0, s1, f);
    std::vector<double> other;
    for (int i = 0; i < n; ++i) {
      conditional_gradient_field(V, s0, *hist, i, (*fields)[i]);
      if (s1 != s0) {
        conditional_gradient_field(V, s1, *hist, i, other);
        for (std::size_t k = 0; k < other.size(); ++k) (*fields)[i][k] = (1.0 - f) * (*fields)[i][k] + f * other[k];
      }
    }
  };
  dr.agent = [&, n, d](double, int, int i, const double* xi, double* out) {
    std::array<double, 8> g{};
    bgs[i].interpolate((*fields)[i].data(), d, xi, g.data());
    for (int k = 0; k < d; ++k) g[k] *= n;
    p.lagrangian(i).hamiltonian(xi, g.data(), out);
  };
  SimConfig sc;
  sc.particles = N;
  sc.steps = cfg.steps;
  sc.T = p.T;
  sc.seed = seed;
  sc.store = StoreMode::Full;
  sc.threads = cfg.threads;
  res.ensemble = euler_maruyama(dr, m0, d, sc);
  res.ensemble.origin = "intermediate";
  // Terminal snapshot.
  std::vector<double> last(N * W);
  for (std::size_t q = 0; q < N; ++q) std::copy(res.ensemble.terminal(q), res.ensemble.terminal(q) + W, last.data() + q * W);
  deposit(last);
  if (res.flow.times.empty() || res.flow.times.back() < p.T - 0.5 * dt) {
    res.flow.times.push_back(p.T);
    for (int j = 0; j < n; ++j) res.flow.weights[j].push_back((*hist)[j]);
  }
  return res;
}

}  // namespace distgap
