#pragma once

// Forward-backward particle solver for the distributed problem: given a
// feedback guess, simulate the agents forward, regress the adjoint backward on
// per-agent polynomial bases, update the feedback, repeat.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include "json.hpp"
#include <vector>

#include "distgap/conditional.hpp"
#include "distgap/error.hpp"
#include "distgap/grid.hpp"
#include "distgap/marginal.hpp"
#include "distgap/model.hpp"
#include "distgap/rng.hpp"

namespace distgap {

struct FbsdeConfig {
  std::size_t particles = 20000;
  int steps = 100;
  int degree = 3;
  int max_iters = 40;
  double tol = 1e-3;
  double damping = 0.5;
  double min_damping = 1.0 / 64.0;
  std::uint64_t seed = 11;
  int bins = 0;  ///< histogram bins per axis; 0 picks 512 in 1D and 64 in 2D
  double width_factor = 6.0;
  double cond_limit = 1e12;
  double divergence_factor = 1e4;
  bool diagnostic_only = false;
};

/// Polynomial fit in standardized coordinates.
struct PolyFit {
  std::vector<double> center, scale;
  std::vector<std::array<int, 2>> powers;
  Eigen::MatrixXd coef;  ///< terms x outputs

  int outputs() const { return static_cast<int>(coef.cols()); }

  void basis(const double* x, double* phi) const {
    const int d = static_cast<int>(center.size());
    std::array<double, 2> z{};
    for (int k = 0; k < d; ++k) z[k] = (x[k] - center[k]) / scale[k];
    for (std::size_t t = 0; t < powers.size(); ++t) {
      double v = 1.0;
      for (int k = 0; k < d; ++k)
        for (int e = 0; e < powers[t][k]; ++e) v *= z[k];
      phi[t] = v;
    }
  }

  void eval(const double* x, double* out) const {
    std::array<double, 16> phi{};
    basis(x, phi.data());
    for (int c = 0; c < outputs(); ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < powers.size(); ++t) s += coef(static_cast<Eigen::Index>(t), c) * phi[t];
      out[c] = s;
    }
  }
};

namespace detail {

/// Least squares of targets (N x outputs) on a polynomial basis of the cloud (N x d).
inline PolyFit poly_regress(const std::vector<double>& cloud, int d, const Eigen::MatrixXd& targets, int degree,
                            double cond_limit) {
  const std::size_t N = cloud.size() / d;
  PolyFit f;
  f.center.assign(static_cast<std::size_t>(d), 0.0);
  f.scale.assign(static_cast<std::size_t>(d), 1.0);
  std::array<bool, 2> flat{};
  for (int k = 0; k < d; ++k) {
    double m = 0.0, q = 0.0;
    for (std::size_t p = 0; p < N; ++p) m += cloud[p * d + k];
    m /= N;
    for (std::size_t p = 0; p < N; ++p) q += (cloud[p * d + k] - m) * (cloud[p * d + k] - m);
    const double sd = std::sqrt(q / N);
    f.center[k] = m;
    flat[k] = !(sd > 1e-12 * std::max(1.0, std::abs(m)));
    f.scale[k] = flat[k] ? 1.0 : sd;
  }
  for (int a = 0; a <= degree; ++a)
    for (int b = 0; b <= (d == 2 ? degree - a : 0); ++b) {
      if ((a > 0 && flat[0]) || (b > 0 && flat[1])) continue;
      f.powers.push_back({a, b});
    }
  const int P = static_cast<int>(f.powers.size());
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(P, P), B = Eigen::MatrixXd::Zero(P, targets.cols());
  std::array<double, 16> phi{};
  for (std::size_t p = 0; p < N; ++p) {
    f.basis(cloud.data() + p * d, phi.data());
    for (int r = 0; r < P; ++r) {
      for (int c = r; c < P; ++c) G(r, c) += phi[r] * phi[c];
      for (int c = 0; c < targets.cols(); ++c) B(r, c) += phi[r] * targets(static_cast<Eigen::Index>(p), c);
    }
  }
  G = G.selfadjointView<Eigen::Upper>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || std::sqrt(hi / lo) > cond_limit)
    fail(Errc::RegressionIllConditioned, "regression design condition number " + std::to_string(std::sqrt(hi / lo)));
  f.coef = G.ldlt().solve(B);
  return f;
}

}  // namespace detail

struct FbsdeSolution {
  int n = 1;
  int d = 1;
  double T = 1.0;
  std::size_t particles = 0;
  std::vector<double> times;
  std::vector<double> X;  ///< [step][particle][agent*d + k]
  std::vector<double> Y;  ///< same layout
  std::vector<std::vector<PolyFit>> y_fit;  ///< [agent][step]
  std::vector<std::vector<PolyFit>> z_fit;  ///< [agent][step], d*d outputs
  std::vector<double> picard_residuals;
  std::vector<double> y0;  ///< agent-major, mean adjoint at time 0
  double value = 0.0;
  double value_stderr = 0.0;
  double terminal_mismatch = 0.0;  ///< L2 distance between Y_T and the conditional terminal gradient
  int iterations = 0;
  bool converged = false;

  int width() const { return n * d; }
  const double* x(int step, std::size_t p) const { return X.data() + (step * particles + p) * width(); }
  const double* y(int step, std::size_t p) const { return Y.data() + (step * particles + p) * width(); }

  /// Feedback a^i(t, x^i) from the fitted adjoint, clamped to the stored times.
  void control(const ControlProblem& prob, int agent, double t, const double* xi, double* out) const {
    const int K = static_cast<int>(times.size()) - 1;
    int k = static_cast<int>(std::floor(t / T * K));
    k = std::clamp(k, 0, K - 1);
    std::array<double, 4> q{};
    y_fit[agent][k].eval(xi, q.data());
    for (int c = 0; c < d; ++c) q[c] *= n;
    prob.lagrangian(agent).hamiltonian(xi, q.data(), out);
  }

  nlohmann::json residual_json() const {
    return {{"iterations", iterations}, {"converged", converged}, {"picard_residuals", picard_residuals},
            {"terminal_mismatch", terminal_mismatch}, {"y0", y0}};
  }
};

inline FbsdeSolution solve_mkv_fbsde(const ControlProblem& p, const std::vector<InitialLaw>& m0,
                                     const FbsdeConfig& cfg = {}) {
  p.validate();
  require(p.d <= 2, Errc::InvalidArgument, "particle adjoint solver supports d <= 2");
  require(p.convex_flag || cfg.diagnostic_only, Errc::InvalidArgument,
          "the adjoint system characterizes optimizers only for convex problems; set diagnostic_only to override");
  require(static_cast<int>(m0.size()) == p.n, Errc::DimensionMismatch, "one initial law per agent");
  const int n = p.n, d = p.d, W = n * d, K = cfg.steps;
  const std::size_t N = cfg.particles;
  const double dt = p.T / K, sq = std::sqrt(dt);

  // Histogram box from the initial laws.
  std::vector<Axis> axes;
  const int bins = cfg.bins > 0 ? cfg.bins : (d == 1 ? 512 : 64);
  for (int k = 0; k < d; ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& l : m0) {
      auto [a, b] = l.effective_range(k);
      const double w = cfg.width_factor * std::sqrt(p.T + l.variance()[k]);
      lo = std::min(lo, a - w);
      hi = std::max(hi, b + w);
    }
    axes.push_back({lo, hi, bins});
  }
  const TensorGrid hg(axes);
  ConditionalCost condF(p.F, hg), condG(p.G, hg);
  const bool has_F = !p.F.is_zero();
  bool has_Lx = false;
  for (int i = 0; i < n; ++i) has_Lx = has_Lx || p.lagrangian(i).kind() == LagrangianKind::Custom;

  KeyedRng rng(cfg.seed);
  FbsdeSolution s;
  s.n = n;
  s.d = d;
  s.T = p.T;
  s.particles = N;
  for (int k = 0; k <= K; ++k) s.times.push_back(k * dt);
  s.X.assign((K + 1) * N * W, 0.0);
  s.Y.assign((K + 1) * N * W, 0.0);
  std::vector<double> dW(K * N * W), A(K * N * W);
  for (std::size_t q = 0; q < N; ++q)
    for (int i = 0; i < n; ++i) m0[i].sample(rng, static_cast<std::uint32_t>(q), static_cast<std::uint32_t>(i), s.X.data() + q * W + i * d);
  for (int k = 0; k < K; ++k)
    for (std::size_t q = 0; q < N; ++q)
      for (int i = 0; i < n; ++i)
        rng.normals(static_cast<std::uint32_t>(q), static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(k),
                    Stream::Increment, dW.data() + (k * N + q) * W + i * d, d);

  // Zero feedback to start: constant fits with zero coefficients.
  s.y_fit.assign(static_cast<std::size_t>(n), std::vector<PolyFit>(static_cast<std::size_t>(K + 1)));
  s.z_fit.assign(static_cast<std::size_t>(n), std::vector<PolyFit>(static_cast<std::size_t>(K)));
  for (auto& row : s.y_fit)
    for (auto& f : row) {
      f.center.assign(static_cast<std::size_t>(d), 0.0);
      f.scale.assign(static_cast<std::size_t>(d), 1.0);
      f.powers = {{0, 0}};
      f.coef = Eigen::MatrixXd::Zero(1, d);
    }

  auto cloud = [&](int k, int i) {
    std::vector<double> c(N * d);
    for (std::size_t q = 0; q < N; ++q)
      for (int c2 = 0; c2 < d; ++c2) c[q * d + c2] = s.X[(k * N + q) * W + i * d + c2];
    return c;
  };
  auto histograms = [&](int k) {
    std::vector<std::vector<double>> h(static_cast<std::size_t>(n), std::vector<double>(hg.size(), 0.0));
    for (int i = 0; i < n; ++i)
      for (std::size_t q = 0; q < N; ++q) hg.deposit(s.X.data() + (k * N + q) * W + i * d, 1.0 / N, h[i].data());
    return h;
  };
  auto conditional_grad_at = [&](const ConditionalCost& cc, int k, std::vector<double>& out) {
    const auto h = histograms(k);
    AgentWeights w;
    for (const auto& v : h) w.push_back(&v);
    std::vector<double> field;
    out.assign(N * W, 0.0);
    for (int i = 0; i < n; ++i) {
      cc.conditional_gradient(i, w, field, static_cast<std::uint32_t>(k));
      for (std::size_t q = 0; q < N; ++q) hg.interpolate(field.data(), d, s.X.data() + (k * N + q) * W + i * d, out.data() + q * W + i * d);
    }
  };

  double lambda = cfg.damping, prev = std::numeric_limits<double>::infinity(), first = -1.0;
  std::vector<double> y0_prev(static_cast<std::size_t>(W), 0.0);
  for (int it = 0; it < cfg.max_iters; ++it) {
    // Forward pass under the current feedback.
    std::array<double, 4> q{};
    for (int k = 0; k < K; ++k)
      for (std::size_t pp = 0; pp < N; ++pp) {
        const double* x = s.X.data() + (k * N + pp) * W;
        double* xn = s.X.data() + ((k + 1) * N + pp) * W;
        double* a = A.data() + (k * N + pp) * W;
        for (int i = 0; i < n; ++i) {
          s.y_fit[i][k].eval(x + i * d, q.data());
          for (int c = 0; c < d; ++c) q[c] *= n;
          p.lagrangian(i).hamiltonian(x + i * d, q.data(), a + i * d);
          for (int c = 0; c < d; ++c) {
            xn[i * d + c] = x[i * d + c] + a[i * d + c] * dt + sq * dW[(k * N + pp) * W + i * d + c];
            if (!std::isfinite(xn[i * d + c])) fail(Errc::PicardDiverged, "forward particles are not finite");
          }
        }
      }

    // Backward pass.
    std::vector<double> yk;
    conditional_grad_at(condG, K, yk);
    std::copy(yk.begin(), yk.end(), s.Y.begin() + static_cast<std::ptrdiff_t>(K * N * W));
    std::vector<std::vector<PolyFit>> fresh(static_cast<std::size_t>(n), std::vector<PolyFit>(static_cast<std::size_t>(K + 1)));
    std::vector<double> drv(N * W, 0.0), lx(static_cast<std::size_t>(d));
    for (int i = 0; i < n; ++i) {
      Eigen::MatrixXd tgt(N, d);
      for (std::size_t pp = 0; pp < N; ++pp)
        for (int c = 0; c < d; ++c) tgt(pp, c) = yk[pp * W + i * d + c];
      fresh[i][K] = detail::poly_regress(cloud(K, i), d, tgt, cfg.degree, cfg.cond_limit);
    }
    for (int k = K - 1; k >= 0; --k) {
      if (has_F) conditional_grad_at(condF, k, drv);
      for (int i = 0; i < n; ++i) {
        const auto c = cloud(k, i);
        Eigen::MatrixXd tgt(N, d), ztgt(N, d * d);
        for (std::size_t pp = 0; pp < N; ++pp) {
          const double* yn = s.Y.data() + ((k + 1) * N + pp) * W + i * d;
          const double* x = s.X.data() + (k * N + pp) * W + i * d;
          const double* dw = dW.data() + (k * N + pp) * W + i * d;
          if (has_Lx) p.lagrangian(i).grad_x(x, A.data() + (k * N + pp) * W + i * d, lx.data());
          for (int c2 = 0; c2 < d; ++c2) {
            double drive = has_F ? drv[pp * W + i * d + c2] : 0.0;
            if (has_Lx) drive += lx[c2] / n;
            tgt(pp, c2) = yn[c2] + dt * drive;
            for (int e = 0; e < d; ++e) ztgt(pp, c2 * d + e) = yn[c2] * dw[e] / sq;
          }
        }
        fresh[i][k] = detail::poly_regress(c, d, tgt, cfg.degree, cfg.cond_limit);
        s.z_fit[i][k] = detail::poly_regress(c, d, ztgt, cfg.degree, cfg.cond_limit);
        for (std::size_t pp = 0; pp < N; ++pp)
          fresh[i][k].eval(c.data() + pp * d, s.Y.data() + (k * N + pp) * W + i * d);
      }
    }

    // Damped update refitted on the current clouds; residual in L2(dt x particles).
    double res2 = 0.0;
    std::array<double, 4> yo{}, yn{}, ao{}, an{};
    for (int i = 0; i < n; ++i)
      for (int k = 0; k <= K; ++k) {
        const auto c = cloud(k, i);
        Eigen::MatrixXd blend(N, d);
        double acc = 0.0;
        for (std::size_t pp = 0; pp < N; ++pp) {
          const double* x = c.data() + pp * d;
          s.y_fit[i][k].eval(x, yo.data());
          fresh[i][k].eval(x, yn.data());
          for (int e = 0; e < d; ++e) blend(pp, e) = lambda * yn[e] + (1.0 - lambda) * yo[e];
          if (k < K) {
            for (int e = 0; e < d; ++e) {
              yo[e] *= n;
              yn[e] *= n;
            }
            p.lagrangian(i).hamiltonian(x, yo.data(), ao.data());
            p.lagrangian(i).hamiltonian(x, yn.data(), an.data());
            for (int e = 0; e < d; ++e) acc += (an[e] - ao[e]) * (an[e] - ao[e]);
          }
        }
        res2 += dt * acc / N;
        s.y_fit[i][k] = detail::poly_regress(c, d, blend, cfg.degree, cfg.cond_limit);
      }
    double y0d = 0.0;
    std::vector<double> y0(static_cast<std::size_t>(W), 0.0);
    for (std::size_t pp = 0; pp < N; ++pp)
      for (int c = 0; c < W; ++c) y0[c] += s.Y[pp * W + c] / N;
    for (int c = 0; c < W; ++c) y0d += (y0[c] - y0_prev[c]) * (y0[c] - y0_prev[c]);
    y0_prev = y0;
    const double res = std::sqrt(res2 + y0d);
    s.picard_residuals.push_back(res);
    s.iterations = it + 1;
    s.y0 = y0;
    if (!std::isfinite(res) || (first > 0.0 && res > cfg.divergence_factor * first))
      fail(Errc::PicardDiverged, "adjoint iteration residual " + std::to_string(res));
    if (first < 0.0) first = res;
    if (it > 0 && std::sqrt(res2) <= cfg.tol) {
      s.converged = true;
      break;
    }
    if (res > prev) lambda = std::max(cfg.min_damping, 0.5 * lambda);
    prev = res;
  }

  // Final forward pass under the settled feedback: paths, cost, terminal check.
  std::vector<double> cost(N, 0.0);
  std::array<double, 4> q{};
  for (int k = 0; k < K; ++k)
    for (std::size_t pp = 0; pp < N; ++pp) {
      const double* x = s.X.data() + (k * N + pp) * W;
      double* xn = s.X.data() + ((k + 1) * N + pp) * W;
      double* a = A.data() + (k * N + pp) * W;
      double run = 0.0;
      for (int i = 0; i < n; ++i) {
        s.y_fit[i][k].eval(x + i * d, q.data());
        for (int c = 0; c < d; ++c) q[c] *= n;
        p.lagrangian(i).hamiltonian(x + i * d, q.data(), a + i * d);
        run += p.lagrangian(i).value(x + i * d, a + i * d);
        for (int c = 0; c < d; ++c) xn[i * d + c] = x[i * d + c] + a[i * d + c] * dt + sq * dW[(k * N + pp) * W + i * d + c];
      }
      run /= n;
      if (has_F) run += p.F.value(x);
      cost[pp] += dt * run;
    }
  for (int k = 0; k <= K; ++k)
    for (int i = 0; i < n; ++i)
      for (std::size_t pp = 0; pp < N; ++pp) s.y_fit[i][k].eval(s.X.data() + (k * N + pp) * W + i * d, s.Y.data() + (k * N + pp) * W + i * d);
  std::vector<double> yT;
  conditional_grad_at(condG, K, yT);
  double mis = 0.0;
  for (std::size_t pp = 0; pp < N; ++pp) {
    cost[pp] += p.G.value(s.X.data() + (K * N + pp) * W);
    require(std::isfinite(cost[pp]), Errc::NonfiniteCost, "nonfinite sampled cost");
    for (int c = 0; c < W; ++c) {
      const double e = s.Y[(K * N + pp) * W + c] - yT[pp * W + c];
      mis += e * e;
    }
  }
  s.terminal_mismatch = std::sqrt(mis / N);
  double m = 0.0, v = 0.0;
  for (double c : cost) m += c;
  m /= N;
  for (double c : cost) v += (c - m) * (c - m);
  s.value = m;
  s.value_stderr = N > 1 ? std::sqrt(v / (N - 1) / N) : 0.0;
  return s;
}

}  // namespace distgap
