#pragma once

// Euler-Maruyama for dX^i = a^i dt + dW^i with counter-based noise.
// Every increment is keyed by (particle, agent, step), so paths do not depend
// on how particles are split across threads, and two runs with the same seed
// share their noise exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "distgap/error.hpp"
#include "distgap/marginal.hpp"
#include "distgap/model.hpp"
#include "distgap/rng.hpp"

namespace distgap {

enum class DriftMode { FullState, PerAgent };
enum class StoreMode { Full, TerminalOnly, Stride };

struct SimConfig {
  std::size_t particles = 10000;
  int steps = 200;
  double T = 1.0;
  std::uint64_t seed = 1;
  StoreMode store = StoreMode::Full;
  int stride = 1;
  int threads = 1;
  double blowup_cap = 1e6;

  double dt() const { return T / steps; }
  bool same_noise(const SimConfig& o) const {
    return particles == o.particles && steps == o.steps && T == o.T && seed == o.seed;
  }
};

/// Drift of the whole system. FullState fields see every agent; PerAgent fields
/// see only the agent's own coordinates. `prepare` runs once per step, before
/// any particle moves, with the current state of all particles.
struct Drift {
  DriftMode mode = DriftMode::FullState;
  std::function<void(double t, int step, const double* x, double* out)> full;
  std::function<void(double t, int step, int agent, const double* xi, double* out)> agent;
  std::function<void(int step, double t, const std::vector<double>& state)> prepare;
  std::string label;

  static Drift zero(std::string label = "zero") {
    Drift d;
    d.mode = DriftMode::PerAgent;
    d.agent = [](double, int, int, const double*, double*) {};
    d.label = std::move(label);
    return d;
  }

  void eval(double t, int step, int n, int dim, const double* x, double* out) const {
    for (int k = 0; k < n * dim; ++k) out[k] = 0.0;
    if (mode == DriftMode::FullState) {
      full(t, step, x, out);
    } else {
      for (int i = 0; i < n; ++i) agent(t, step, i, x + i * dim, out + i * dim);
    }
  }
};

/// Called with the state and the drift used on (t_k, t_k+1]; at the terminal
/// step the drift pointer is null.
using StepObserver = std::function<void(std::size_t particle, int step, const double* x, const double* a)>;

struct ParticleEnsemble {
  std::size_t N = 0;
  int n = 1;
  int d = 1;
  int steps = 0;
  double T = 1.0;
  std::uint64_t seed = 0;
  std::vector<int> stored_steps;  ///< step index of each stored level
  std::vector<double> data;       ///< [particle][level][agent * d + k]
  std::string origin;

  double dt() const { return T / steps; }
  int levels() const { return static_cast<int>(stored_steps.size()); }
  int width() const { return n * d; }
  const double* at(std::size_t p, int level) const {
    return data.data() + (p * static_cast<std::size_t>(levels()) + static_cast<std::size_t>(level)) * width();
  }
  double* at(std::size_t p, int level) {
    return data.data() + (p * static_cast<std::size_t>(levels()) + static_cast<std::size_t>(level)) * width();
  }
  const double* terminal(std::size_t p) const { return at(p, levels() - 1); }
  double time(int level) const { return stored_steps[static_cast<std::size_t>(level)] * dt(); }

  /// Samples of the given agent's coordinates at one level.
  std::vector<double> agent_cloud(int agent, int level) const {
    std::vector<double> out(N * static_cast<std::size_t>(d));
    for (std::size_t p = 0; p < N; ++p)
      for (int k = 0; k < d; ++k) out[p * d + k] = at(p, level)[agent * d + k];
    return out;
  }

  /// Binary path file: magic, N, n, d, steps, levels, T, seed, stored steps, payload.
  void write(std::ostream& os) const {
    static_assert(std::endian::native == std::endian::little, "path file assumes a little-endian host");
    auto u64 = [&](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    os.write("DGPE", 4);
    u64(N);
    u64(static_cast<std::uint64_t>(n));
    u64(static_cast<std::uint64_t>(d));
    u64(static_cast<std::uint64_t>(steps));
    u64(static_cast<std::uint64_t>(levels()));
    os.write(reinterpret_cast<const char*>(&T), 8);
    u64(seed);
    for (int s : stored_steps) u64(static_cast<std::uint64_t>(s));
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
  }

  static ParticleEnsemble read(std::istream& is) {
    auto u64 = [&]() {
      std::uint64_t v = 0;
      is.read(reinterpret_cast<char*>(&v), 8);
      return v;
    };
    char magic[4];
    is.read(magic, 4);
    require(is.good() && std::string(magic, 4) == "DGPE", Errc::IoError, "not a path file");
    ParticleEnsemble e;
    e.N = u64();
    e.n = static_cast<int>(u64());
    e.d = static_cast<int>(u64());
    e.steps = static_cast<int>(u64());
    const int L = static_cast<int>(u64());
    is.read(reinterpret_cast<char*>(&e.T), 8);
    e.seed = u64();
    for (int l = 0; l < L; ++l) e.stored_steps.push_back(static_cast<int>(u64()));
    e.data.resize(e.N * static_cast<std::size_t>(L) * e.width());
    is.read(reinterpret_cast<char*>(e.data.data()), static_cast<std::streamsize>(e.data.size() * 8));
    require(is.good(), Errc::IoError, "truncated path file");
    return e;
  }
};

namespace detail {

inline std::vector<int> stored_levels(const SimConfig& c) {
  std::vector<int> s;
  switch (c.store) {
    case StoreMode::Full:
      for (int k = 0; k <= c.steps; ++k) s.push_back(k);
      break;
    case StoreMode::TerminalOnly:
      s.push_back(c.steps);
      break;
    case StoreMode::Stride:
      for (int k = 0; k <= c.steps; k += std::max(1, c.stride)) s.push_back(k);
      if (s.back() != c.steps) s.push_back(c.steps);
      break;
  }
  return s;
}

/// Run body(begin, end) over [0, N) split into contiguous chunks.
template <class Body>
void parallel_chunks(std::size_t N, int threads, Body&& body) {
  threads = std::max(1, threads);
  if (threads == 1 || N < 2) {
    body(std::size_t{0}, N);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (N + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk, e = std::min(N, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  for (auto& th : pool) th.join();
}

inline void check_state(const double* x, int w, double cap) {
  for (int k = 0; k < w; ++k)
    if (!std::isfinite(x[k]) || std::abs(x[k]) > cap) fail(Errc::BlowUp, "particle state exceeds the cap");
}

}  // namespace detail

inline ParticleEnsemble euler_maruyama(const Drift& drift, const std::vector<InitialLaw>& m0, int d,
                                       const SimConfig& cfg, const StepObserver& observer = {}) {
  const int n = static_cast<int>(m0.size());
  require(n >= 1 && cfg.particles >= 1 && cfg.steps >= 1, Errc::InvalidArgument, "empty simulation");
  for (const auto& l : m0) require(l.dim() == d, Errc::DimensionMismatch, "initial law dimension");
  const int W = n * d;
  const double dt = cfg.dt(), sq = std::sqrt(dt);
  KeyedRng rng(cfg.seed);
  ParticleEnsemble e;
  e.N = cfg.particles;
  e.n = n;
  e.d = d;
  e.steps = cfg.steps;
  e.T = cfg.T;
  e.seed = cfg.seed;
  e.stored_steps = detail::stored_levels(cfg);
  e.origin = drift.label;
  e.data.assign(e.N * e.stored_steps.size() * W, 0.0);
  std::vector<int> level_of(static_cast<std::size_t>(cfg.steps + 1), -1);
  for (std::size_t l = 0; l < e.stored_steps.size(); ++l) level_of[e.stored_steps[l]] = static_cast<int>(l);

  auto init = [&](std::size_t p, double* x) {
    for (int i = 0; i < n; ++i)
      m0[i].sample(rng, static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(i), x + i * d);
  };
  auto advance = [&](std::size_t p, int k, double* x, double* a, double* z) {
    drift.eval(k * dt, k, n, d, x, a);
    if (observer) observer(p, k, x, a);
    for (int i = 0; i < n; ++i) {
      rng.normals(static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(k),
                  Stream::Increment, z, d);
      for (int c = 0; c < d; ++c) x[i * d + c] += a[i * d + c] * dt + sq * z[c];
    }
    detail::check_state(x, W, cfg.blowup_cap);
    if (level_of[k + 1] >= 0) std::copy(x, x + W, e.at(p, level_of[k + 1]));
    if (k + 1 == cfg.steps && observer) observer(p, cfg.steps, x, nullptr);
  };

  if (!drift.prepare) {
    detail::parallel_chunks(e.N, cfg.threads, [&](std::size_t b, std::size_t end) {
      std::vector<double> x(static_cast<std::size_t>(W)), a(static_cast<std::size_t>(W)), z(static_cast<std::size_t>(d + 1));
      for (std::size_t p = b; p < end; ++p) {
        init(p, x.data());
        if (level_of[0] >= 0) std::copy(x.begin(), x.end(), e.at(p, level_of[0]));
        for (int k = 0; k < cfg.steps; ++k) advance(p, k, x.data(), a.data(), z.data());
      }
    });
    return e;
  }

  std::vector<double> state(e.N * W);
  for (std::size_t p = 0; p < e.N; ++p) {
    init(p, state.data() + p * W);
    if (level_of[0] >= 0) std::copy(state.data() + p * W, state.data() + (p + 1) * W, e.at(p, level_of[0]));
  }
  for (int k = 0; k < cfg.steps; ++k) {
    drift.prepare(k, k * dt, state);
    detail::parallel_chunks(e.N, cfg.threads, [&](std::size_t b, std::size_t end) {
      std::vector<double> a(static_cast<std::size_t>(W)), z(static_cast<std::size_t>(d + 1));
      for (std::size_t p = b; p < end; ++p) advance(p, k, state.data() + p * W, a.data(), z.data());
    });
  }
  return e;
}

/// Two runs consuming identical increments.
inline std::pair<ParticleEnsemble, ParticleEnsemble> paired_run(const Drift& a, const Drift& b,
                                                                const std::vector<InitialLaw>& m0, int d,
                                                                const SimConfig& cfg_a, const SimConfig& cfg_b) {
  require(cfg_a.same_noise(cfg_b), Errc::ConfigMismatch, "paired runs need identical particles, steps, T and seed");
  return {euler_maruyama(a, m0, d, cfg_a), euler_maruyama(b, m0, d, cfg_b)};
}

inline std::pair<ParticleEnsemble, ParticleEnsemble> paired_run(const Drift& a, const Drift& b,
                                                                const std::vector<InitialLaw>& m0, int d,
                                                                const SimConfig& cfg) {
  return paired_run(a, b, m0, d, cfg, cfg);
}

// ---------------------------------------------------------------------------
// Costs
// ---------------------------------------------------------------------------

enum class EstimateMethod { PairedMC, IndependentMC, Quadrature };

inline const char* method_name(EstimateMethod m) {
  switch (m) {
    case EstimateMethod::PairedMC: return "PairedMC";
    case EstimateMethod::IndependentMC: return "IndependentMC";
    case EstimateMethod::Quadrature: return "Quadrature";
  }
  return "?";
}

struct GapEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  EstimateMethod method = EstimateMethod::IndependentMC;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

struct CostEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  std::size_t samples = 0;
  std::vector<double> per_particle;
};

inline GapEstimate mean_and_stderr(const std::vector<double>& v, EstimateMethod m, std::uint64_t seed = 0) {
  GapEstimate g;
  g.method = m;
  g.samples = v.size();
  g.seed = seed;
  if (v.empty()) return g;
  double s = 0.0;
  for (double x : v) s += x;
  g.value = s / v.size();
  if (v.size() > 1) {
    double q = 0.0;
    for (double x : v) q += (x - g.value) * (x - g.value);
    g.stderr_ = std::sqrt(q / (v.size() - 1) / v.size());
  }
  return g;
}

/// E[ int_0^T ((1/n) sum L^i(X^i, a^i) + F(X)) dt + G(X_T) ] by left-point sums.
inline CostEstimate evaluate_cost(const ControlProblem& p, const Drift& control, const std::vector<InitialLaw>& m0,
                                  SimConfig cfg) {
  require(cfg.T == p.T, Errc::ConfigMismatch, "simulation horizon differs from the problem");
  cfg.store = StoreMode::TerminalOnly;
  std::vector<double> acc(cfg.particles, 0.0);
  const double dt = cfg.dt();
  const bool has_F = !p.F.is_zero();
  StepObserver obs = [&](std::size_t q, int, const double* x, const double* a) {
    if (!a) {
      acc[q] += p.G.value(x);
      return;
    }
    double run = 0.0;
    for (int i = 0; i < p.n; ++i) run += p.lagrangian(i).value(x + i * p.d, a + i * p.d);
    run /= p.n;
    if (has_F) run += p.F.value(x);
    acc[q] += run * dt;
  };
  euler_maruyama(control, m0, p.d, cfg, obs);
  for (double v : acc) require(std::isfinite(v), Errc::NonfiniteCost, "nonfinite sampled cost");
  const GapEstimate g = mean_and_stderr(acc, EstimateMethod::IndependentMC, cfg.seed);
  CostEstimate c;
  c.value = g.value;
  c.stderr_ = g.stderr_;
  c.samples = acc.size();
  c.per_particle = std::move(acc);
  return c;
}

/// J(a) - J(b) on common noise.
inline GapEstimate paired_cost_gap(const ControlProblem& p, const Drift& a, const Drift& b,
                                   const std::vector<InitialLaw>& m0, const SimConfig& cfg) {
  const CostEstimate ca = evaluate_cost(p, a, m0, cfg);
  const CostEstimate cb = evaluate_cost(p, b, m0, cfg);
  std::vector<double> diff(ca.per_particle.size());
  for (std::size_t q = 0; q < diff.size(); ++q) diff[q] = ca.per_particle[q] - cb.per_particle[q];
  return mean_and_stderr(diff, EstimateMethod::PairedMC, cfg.seed);
}

}  // namespace distgap
