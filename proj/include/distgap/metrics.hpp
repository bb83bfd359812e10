#pragma once

// Measured quantities: the conditional-variance error term of the lifted
// value, path-law gaps between ensembles, control gaps, and empirical
// Poincare ratios.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "distgap/error.hpp"
#include "distgap/hjb.hpp"
#include "distgap/marginal.hpp"
#include "distgap/model.hpp"
#include "distgap/rng.hpp"
#include "distgap/sde.hpp"
#include "distgap/transport.hpp"

namespace distgap {

// ---------------------------------------------------------------------------
// Conditional-variance error term
// ---------------------------------------------------------------------------

namespace detail {

/// Re-deposit node weights of one grid onto another (CIC).
inline std::vector<double> project_weights(const TensorGrid& from, const std::vector<double>& w, const TensorGrid& to) {
  if (from.axes().size() == to.axes().size()) {
    bool same = true;
    for (int a = 0; a < from.rank() && same; ++a)
      same = from.axis(a).lo == to.axis(a).lo && from.axis(a).hi == to.axis(a).hi &&
             from.axis(a).points == to.axis(a).points;
    if (same) return w;
  }
  std::vector<double> out(to.size(), 0.0), x(static_cast<std::size_t>(from.rank()));
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k] == 0.0) continue;
    from.point(k, x.data());
    to.deposit(x.data(), w[k], out.data());
  }
  return out;
}

}  // namespace detail

/// (n/2) sum_i E|D_iV(s, xi) - E[D_iV(s, xi) | xi^i]|^2 for independent agents
/// with the given node weights on the value grid's blocks.
inline double eq_error(const ValueGrid& V, const std::vector<std::vector<double>>& block_w, double s) {
  const int n = V.blocks(), d = V.block_dim();
  require(static_cast<int>(block_w.size()) == n, Errc::DimensionMismatch, "one weight vector per agent");
  const TensorGrid& g = V.grid();
  const int R = g.rank();
  std::vector<TensorGrid> bgs;
  for (int j = 0; j < n; ++j) {
    bgs.push_back(detail::block_grid(g, j * d, d));
    require(block_w[j].size() == bgs[j].size(), Errc::GridMismatch, "weights do not match the value grid blocks");
  }
  int s0, s1;
  double f;
  V.bracket(s, s0, s1, f);
  std::vector<double> grad(g.size() * R);
  for (std::size_t k = 0; k < grad.size(); ++k)
    grad[k] = (1.0 - f) * V.gradients(s0)[k] + (s1 != s0 ? f * V.gradients(s1)[k] : 0.0);

  std::vector<double> prod(g.size()), cond, mass;
  std::vector<std::size_t> bidx(g.size());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    cond.assign(bgs[i].size() * d, 0.0);
    mass.assign(bgs[i].size(), 0.0);
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
      double w = 1.0;
      for (int j = 0; j < n && w != 0.0; ++j) w *= block_w[j][detail::block_index(g, idx, j * d, d, bgs[j])];
      prod[idx] = w;
      bidx[idx] = detail::block_index(g, idx, i * d, d, bgs[i]);
      if (w == 0.0) continue;
      mass[bidx[idx]] += w;
      for (int k = 0; k < d; ++k) cond[bidx[idx] * d + k] += w * grad[idx * R + i * d + k];
    }
    for (std::size_t b = 0; b < mass.size(); ++b)
      if (mass[b] > 0.0)
        for (int k = 0; k < d; ++k) cond[b * d + k] /= mass[b];
    double v = 0.0;
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
      if (prod[idx] == 0.0) continue;
      for (int k = 0; k < d; ++k) {
        const double e = grad[idx * R + i * d + k] - cond[bidx[idx] * d + k];
        v += prod[idx] * e * e;
      }
    }
    total += v;
  }
  return 0.5 * n * total;
}

/// Same, for a stored level of a marginal flow (re-deposited onto the value grid blocks if needed).
inline double eq_error(const ValueGrid& V, const MarginalFlow& flow, int level) {
  require(flow.n == V.blocks(), Errc::DimensionMismatch, "flow agent count");
  std::vector<std::vector<double>> w;
  for (int i = 0; i < flow.n; ++i) {
    const TensorGrid bg = detail::block_grid(V.grid(), i * V.block_dim(), V.block_dim());
    w.push_back(detail::project_weights(flow.grid(i), flow.at(i, level), bg));
  }
  return eq_error(V, w, flow.times[static_cast<std::size_t>(level)]);
}

/// Same, from a particle ensemble level; rejects visibly correlated agents.
inline double eq_error(const ValueGrid& V, const ParticleEnsemble& e, int level, double corr_sigmas = 5.0) {
  const int n = V.blocks(), d = V.block_dim();
  require(e.n == n && e.d == d, Errc::DimensionMismatch, "ensemble vs value grid");
  const std::size_t N = e.N;
  const int W = n * d;
  std::vector<double> mean(static_cast<std::size_t>(W), 0.0), sd(static_cast<std::size_t>(W), 0.0);
  for (std::size_t p = 0; p < N; ++p)
    for (int c = 0; c < W; ++c) mean[c] += e.at(p, level)[c] / N;
  for (std::size_t p = 0; p < N; ++p)
    for (int c = 0; c < W; ++c) sd[c] += std::pow(e.at(p, level)[c] - mean[c], 2) / N;
  for (int a = 0; a < W; ++a)
    for (int b = a + 1; b < W; ++b) {
      if (a / d == b / d || sd[a] == 0.0 || sd[b] == 0.0) continue;
      double c = 0.0;
      for (std::size_t p = 0; p < N; ++p) c += (e.at(p, level)[a] - mean[a]) * (e.at(p, level)[b] - mean[b]);
      c /= N * std::sqrt(sd[a] * sd[b]);
      if (std::abs(c) > corr_sigmas / std::sqrt(static_cast<double>(N)))
        fail(Errc::NonProductFlow, "agents " + std::to_string(a / d) + " and " + std::to_string(b / d) +
                                       " are correlated (" + std::to_string(c) + ")");
    }
  std::vector<std::vector<double>> w;
  for (int i = 0; i < n; ++i) {
    const TensorGrid bg = detail::block_grid(V.grid(), i * d, d);
    std::vector<double> h(bg.size(), 0.0);
    for (std::size_t p = 0; p < N; ++p) bg.deposit(e.at(p, level) + i * d, 1.0 / N, h.data());
    w.push_back(std::move(h));
  }
  return eq_error(V, w, e.time(level));
}

// ---------------------------------------------------------------------------
// Path-law gaps
// ---------------------------------------------------------------------------

struct ChaosGap {
  double value = 0.0;  ///< mean over subsets of W2^2 in the discrete sup-path metric
  double stderr_ = 0.0;
  int subsets = 0;
  int batches = 0;
  std::size_t batch_size = 0;
  bool exact_transport = true;
};

namespace detail {

inline std::vector<std::vector<int>> agent_subsets(int n, int k, int budget, std::uint64_t seed) {
  std::vector<std::vector<int>> out;
  double count = 1.0;
  for (int j = 0; j < k; ++j) count = count * (n - j) / (j + 1);
  if (count <= budget) {
    std::vector<int> s(static_cast<std::size_t>(k));
    std::iota(s.begin(), s.end(), 0);
    while (true) {
      out.push_back(s);
      int j = k - 1;
      while (j >= 0 && s[j] == n - k + j) --j;
      if (j < 0) break;
      ++s[j];
      for (int m = j + 1; m < k; ++m) s[m] = s[m - 1] + 1;
    }
    return out;
  }
  KeyedRng rng(seed);
  for (int b = 0; b < budget; ++b) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int j = 0; j < k; ++j) {
      const double u = rng.uniform(static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(j), 0, Stream::Subset);
      const int r = j + std::min(n - j - 1, static_cast<int>(u * (n - j)));
      std::swap(idx[j], idx[r]);
    }
    std::vector<int> s(idx.begin(), idx.begin() + k);
    std::sort(s.begin(), s.end());
    out.push_back(s);
  }
  return out;
}

}  // namespace detail

/// Average over agent subsets S with |S| = k of W2^2 between the path laws of
/// X^S and Xhat^S, paths compared by the max over stored times.
inline ChaosGap marginal_chaos_gap(const ParticleEnsemble& X, const ParticleEnsemble& Xhat, int k, int budget = 64,
                                   std::size_t batch_size = 256, int max_batches = 8, std::uint64_t seed = 5) {
  require(X.n == Xhat.n && X.d == Xhat.d && X.stored_steps == Xhat.stored_steps && X.T == Xhat.T, Errc::GridMismatch,
          "ensembles must share agents and stored times");
  require(k >= 1 && k <= X.n, Errc::InvalidArgument, "subset size out of range");
  const std::size_t N = std::min(X.N, Xhat.N);
  batch_size = std::min(batch_size, N);
  const int B = std::max(1, std::min(max_batches, static_cast<int>(N / batch_size)));
  const auto subsets = detail::agent_subsets(X.n, k, budget, seed);
  const int L = X.levels(), d = X.d;
  ChaosGap r;
  r.subsets = static_cast<int>(subsets.size());
  r.batches = B;
  r.batch_size = batch_size;
  std::vector<double> per_batch;
  for (int b = 0; b < B; ++b) {
    const std::size_t off = b * batch_size;
    double acc = 0.0;
    for (const auto& S : subsets) {
      Eigen::MatrixXd C(batch_size, batch_size);
      for (std::size_t p = 0; p < batch_size; ++p)
        for (std::size_t q = 0; q < batch_size; ++q) {
          double worst = 0.0;
          for (int l = 0; l < L; ++l) {
            double s = 0.0;
            for (int i : S)
              for (int c = 0; c < d; ++c) {
                const double e = X.at(off + p, l)[i * d + c] - Xhat.at(off + q, l)[i * d + c];
                s += e * e;
              }
            worst = std::max(worst, s);
          }
          C(p, q) = worst;
        }
      const TransportResult t = transport_from_costs(C);
      r.exact_transport = r.exact_transport && t.exact;
      acc += t.cost;
    }
    per_batch.push_back(acc / subsets.size());
  }
  const GapEstimate g = mean_and_stderr(per_batch, EstimateMethod::IndependentMC, seed);
  r.value = g.value;
  r.stderr_ = g.stderr_;
  return r;
}

// ---------------------------------------------------------------------------
// Control gaps
// ---------------------------------------------------------------------------

struct ControlGap {
  GapEstimate common_state;  ///< both fields along the full-information paths
  GapEstimate paired;        ///< each field along its own path, shared noise
};

/// (1/n) sum_i E int |a^i - b^i|^2 dt, estimated two ways.
inline ControlGap control_l2_gap(const ControlProblem& p, const Drift& full, const Drift& dist,
                                 const std::vector<InitialLaw>& m0, SimConfig cfg) {
  const int n = p.n, d = p.d, W = n * d;
  const double dt = cfg.dt();
  ControlGap out;
  {
    std::vector<double> acc(cfg.particles, 0.0);
    SimConfig c = cfg;
    c.store = StoreMode::TerminalOnly;
    c.threads = 1;
    std::vector<double> b(static_cast<std::size_t>(W));
    StepObserver obs = [&](std::size_t q, int step, const double* x, const double* a) {
      if (!a) return;
      dist.eval(step * dt, step, n, d, x, b.data());
      double s = 0.0;
      for (int k = 0; k < W; ++k) {
        if (!std::isfinite(a[k]) || !std::isfinite(b[k])) fail(Errc::FieldEvaluationError, "control field is not finite");
        s += (a[k] - b[k]) * (a[k] - b[k]);
      }
      acc[q] += dt * s / n;
    };
    euler_maruyama(full, m0, d, c, obs);
    out.common_state = mean_and_stderr(acc, EstimateMethod::PairedMC, cfg.seed);
  }
  {
    std::vector<double> acc(cfg.particles, 0.0);
    SimConfig c = cfg;
    c.store = StoreMode::Full;
    auto [ea, eb] = paired_run(full, dist, m0, d, c);
    std::vector<double> a(static_cast<std::size_t>(W)), b(static_cast<std::size_t>(W));
    for (std::size_t q = 0; q < cfg.particles; ++q)
      for (int k = 0; k < cfg.steps; ++k) {
        full.eval(k * dt, k, n, d, ea.at(q, k), a.data());
        dist.eval(k * dt, k, n, d, eb.at(q, k), b.data());
        double s = 0.0;
        for (int c2 = 0; c2 < W; ++c2) {
          if (!std::isfinite(a[c2]) || !std::isfinite(b[c2]))
            fail(Errc::FieldEvaluationError, "control field is not finite");
          s += (a[c2] - b[c2]) * (a[c2] - b[c2]);
        }
        acc[q] += dt * s / n;
      }
    out.paired = mean_and_stderr(acc, EstimateMethod::PairedMC, cfg.seed);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Empirical Poincare ratio
// ---------------------------------------------------------------------------

struct TestFunction {
  std::string name;
  std::function<double(const double* x)> value;
  std::function<void(const double* x, double* grad)> gradient;
};

/// Per coordinate: x, tanh(x), sin(w x) for w = 1, 2, 3.
inline std::vector<TestFunction> default_battery(int dim) {
  std::vector<TestFunction> b;
  for (int k = 0; k < dim; ++k) {
    auto one = [dim, k](auto f, auto df, std::string name) {
      return TestFunction{std::move(name), [k, f](const double* x) { return f(x[k]); },
                          [dim, k, df](const double* x, double* g) {
                            std::fill(g, g + dim, 0.0);
                            g[k] = df(x[k]);
                          }};
    };
    const std::string c = std::to_string(k);
    b.push_back(one([](double v) { return v; }, [](double) { return 1.0; }, "linear_" + c));
    b.push_back(one([](double v) { return std::tanh(v); },
                    [](double v) { return 1.0 / (std::cosh(v) * std::cosh(v)); }, "tanh_" + c));
    for (int w = 1; w <= 3; ++w)
      b.push_back(one([w](double v) { return std::sin(w * v); }, [w](double v) { return w * std::cos(w * v); },
                      "sin" + std::to_string(w) + "_" + c));
  }
  return b;
}

struct PoincareCheck {
  double ratio = 0.0;  ///< max over the battery of Var g / E|grad g|^2
  std::string worst;
  double ci_lo = 0.0, ci_hi = 0.0;  ///< bootstrap percentile interval of the max ratio
  double boot_se = 0.0;
  std::vector<double> ratios;
};

inline PoincareCheck empirical_poincare(const std::vector<double>& samples, int dim,
                                        const std::vector<TestFunction>& battery, int bootstrap = 200,
                                        std::uint64_t seed = 3) {
  require(!battery.empty(), Errc::InvalidArgument, "empty test battery");
  require(dim >= 1 && samples.size() % dim == 0, Errc::DimensionMismatch, "sample dimension");
  const std::size_t N = samples.size() / dim;
  require(N >= 2, Errc::DegenerateSample, "need at least two samples");
  const std::size_t B = battery.size();
  std::vector<double> val(N * B), g2(N * B), grad(static_cast<std::size_t>(dim));
  for (std::size_t p = 0; p < N; ++p)
    for (std::size_t t = 0; t < B; ++t) {
      const double* x = samples.data() + p * dim;
      val[p * B + t] = battery[t].value(x);
      battery[t].gradient(x, grad.data());
      double s = 0.0;
      for (double g : grad) s += g * g;
      g2[p * B + t] = s;
    }
  auto ratios_for = [&](const std::function<std::size_t(std::size_t)>& pick, std::vector<double>& out) {
    out.assign(B, 0.0);
    bool any = false;
    for (std::size_t t = 0; t < B; ++t) {
      double m = 0.0, q = 0.0, e = 0.0;
      for (std::size_t p = 0; p < N; ++p) m += val[pick(p) * B + t];
      m /= N;
      for (std::size_t p = 0; p < N; ++p) {
        const std::size_t r = pick(p);
        q += (val[r * B + t] - m) * (val[r * B + t] - m);
        e += g2[r * B + t];
      }
      if (e <= 0.0) continue;
      any = true;
      out[t] = (q / (N - 1)) / (e / N);
    }
    return any;
  };
  PoincareCheck r;
  if (!ratios_for([](std::size_t p) { return p; }, r.ratios))
    fail(Errc::DegenerateSample, "every test function has a vanishing gradient on the sample");
  const auto it = std::max_element(r.ratios.begin(), r.ratios.end());
  r.ratio = *it;
  r.worst = battery[static_cast<std::size_t>(it - r.ratios.begin())].name;
  KeyedRng rng(seed);
  std::vector<double> boot, tmp;
  for (int b = 0; b < bootstrap; ++b) {
    ratios_for(
        [&](std::size_t p) {
          const double u = rng.uniform(static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(b), 0, Stream::Bootstrap);
          return std::min(N - 1, static_cast<std::size_t>(u * N));
        },
        tmp);
    boot.push_back(*std::max_element(tmp.begin(), tmp.end()));
  }
  if (!boot.empty()) {
    std::sort(boot.begin(), boot.end());
    r.ci_lo = boot[static_cast<std::size_t>(0.025 * (boot.size() - 1))];
    r.ci_hi = boot[static_cast<std::size_t>(0.975 * (boot.size() - 1))];
    double m = std::accumulate(boot.begin(), boot.end(), 0.0) / boot.size(), q = 0.0;
    for (double v : boot) q += (v - m) * (v - m);
    r.boot_se = boot.size() > 1 ? std::sqrt(q / (boot.size() - 1)) : 0.0;
  }
  return r;
}

inline PoincareCheck empirical_poincare(const std::vector<double>& samples, int dim) {
  return empirical_poincare(samples, dim, default_battery(dim));
}

}  // namespace distgap
