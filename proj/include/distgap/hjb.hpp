#pragma once

// Backward HJB solves on tensor grids.
//
// The equation  -dV/dt - 1/2 Lap V + w sum_b H_b(x_b, s D_b V) = F  is stepped
// backward in time. Each step freezes the feedback a_b = -D_p H_b(x_b, s D_b V)
// and solves the resulting linear backward-Kolmogorov step implicitly, one axis
// at a time; the feedback is then refreshed from the new iterate until it stops
// moving (policy iteration). Convection is central where the cell Peclet number
// allows it and upwinded elsewhere, so every line matrix is an M-matrix.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "distgap/error.hpp"
#include "distgap/grid.hpp"
#include "distgap/marginal.hpp"
#include "distgap/model.hpp"

#include "json.hpp"

namespace distgap {

enum class BoundaryMode { LinearExtrapolation, OneSidedDifferences };

struct GridSpec {
  std::vector<Axis> axes;
  int time_steps = 200;
  BoundaryMode boundary = BoundaryMode::LinearExtrapolation;
  std::size_t memory_cap_bytes = std::size_t{2} << 30;
  int store_every = 1;  ///< keep every k-th time level
};

struct SchemeConfig {
  int max_policy_iterations = 12;
  double policy_tol = 1e-10;       ///< relative change that ends policy iteration
  double policy_fail_tol = 1e-6;   ///< residual above which the step is reported nonconvergent
};

/// One agent's block of axes inside the tensor grid.
struct HjbBlock {
  const LagrangianSpec* lagrangian = nullptr;
  int first_axis = 0;
  int dim = 1;
};

struct HjbSetup {
  TensorGrid grid;
  double T = 1.0;
  int steps = 100;
  BoundaryMode boundary = BoundaryMode::LinearExtrapolation;
  std::vector<HjbBlock> blocks;
  double weight = 1.0;  ///< w in front of the Hamiltonians
  double scale = 1.0;   ///< s inside the Hamiltonians
  std::vector<double> terminal;
  /// Running cost at the nodes for time level k (t_k = k T / steps); empty means 0.
  std::function<void(int k, std::vector<double>& out)> running;
  int store_every = 1;
  bool record_policy = false;
  SchemeConfig scheme;
};

struct HjbRaw {
  std::vector<double> times;                ///< stored levels, ascending
  std::vector<std::vector<double>> values;  ///< [stored level][node]
  std::vector<std::vector<double>> policy;  ///< [step k][node * rank] feedback used on (t_k, t_k+1]
  double max_policy_residual = 0.0;
};

namespace detail {

/// Gradient along axis a at every node: central inside, one-sided at the ends.
inline void axis_gradient(const TensorGrid& g, const std::vector<double>& v, int a, double* out, int ncomp,
                          int comp) {
  const std::size_t s = g.stride(a);
  const int N = g.axis(a).points;
  const double h = g.axis(a).h();
  const std::size_t block = s * static_cast<std::size_t>(N);
  for (std::size_t outer = 0; outer < g.size(); outer += block)
    for (std::size_t inner = 0; inner < s; ++inner) {
      const std::size_t base = outer + inner;
      for (int j = 0; j < N; ++j) {
        const std::size_t idx = base + static_cast<std::size_t>(j) * s;
        double d;
        if (j == 0)
          d = (v[idx + s] - v[idx]) / h;
        else if (j == N - 1)
          d = (v[idx] - v[idx - s]) / h;
        else
          d = (v[idx + s] - v[idx - s]) / (2.0 * h);
        out[idx * static_cast<std::size_t>(ncomp) + static_cast<std::size_t>(comp)] = d;
      }
    }
}

struct LineCoeffs {
  std::vector<double> lo, di, up;
};

/// Row coefficients of (I - dt (1/2 d2 + c d)) along one line.
inline void line_coefficients(int N, double h, double dt, const double* c, std::size_t c_stride,
                              BoundaryMode mode, LineCoeffs& lc, double& worst_boundary_ratio) {
  lc.lo.assign(static_cast<std::size_t>(N), 0.0);
  lc.di.assign(static_cast<std::size_t>(N), 1.0);
  lc.up.assign(static_cast<std::size_t>(N), 0.0);
  const double D = 0.5 / (h * h);
  for (int j = 0; j < N; ++j) {
    const double cj = c[static_cast<std::size_t>(j) * c_stride];
    if (j == 0) {
      lc.di[0] = 1.0 + dt * cj / h;
      lc.up[0] = -dt * cj / h;
      if (cj < 0.0) worst_boundary_ratio = std::max(worst_boundary_ratio, -dt * cj / h);
      continue;
    }
    if (j == N - 1) {
      lc.di[j] = 1.0 - dt * cj / h;
      lc.lo[j] = dt * cj / h;
      if (cj > 0.0) worst_boundary_ratio = std::max(worst_boundary_ratio, dt * cj / h);
      continue;
    }
    if (std::abs(cj) * h <= 1.0) {
      lc.lo[j] = -dt * (D - cj / (2.0 * h));
      lc.up[j] = -dt * (D + cj / (2.0 * h));
      lc.di[j] = 1.0 + 2.0 * dt * D;
    } else if (cj > 0.0) {
      lc.lo[j] = -dt * D;
      lc.up[j] = -dt * (D + cj / h);
      lc.di[j] = 1.0 + dt * (2.0 * D + cj / h);
    } else {
      lc.lo[j] = -dt * (D - cj / h);
      lc.up[j] = -dt * D;
      lc.di[j] = 1.0 + dt * (2.0 * D - cj / h);
    }
  }
  (void)mode;
}

/// Apply (I - dt L_a)^{-1} (or its transpose) along every line of axis a.
inline void axis_solve(const TensorGrid& g, int a, double dt, const double* c, int ncomp, BoundaryMode mode,
                       std::vector<double>& v, bool transpose, double& worst_boundary_ratio,
                       const std::vector<double>* lagged = nullptr) {
  const std::size_t s = g.stride(a);
  const int N = g.axis(a).points;
  const double h = g.axis(a).h();
  const std::size_t block = s * static_cast<std::size_t>(N);
  LineCoeffs lc;
  std::vector<double> rhs(static_cast<std::size_t>(N)), cl(static_cast<std::size_t>(N));
  for (std::size_t outer = 0; outer < g.size(); outer += block)
    for (std::size_t inner = 0; inner < s; ++inner) {
      const std::size_t base = outer + inner;
      for (int j = 0; j < N; ++j) {
        const std::size_t idx = base + static_cast<std::size_t>(j) * s;
        rhs[j] = v[idx];
        cl[j] = c[idx * static_cast<std::size_t>(ncomp) + static_cast<std::size_t>(a)];
      }
      line_coefficients(N, h, dt, cl.data(), 1, mode, lc, worst_boundary_ratio);
      if (mode == BoundaryMode::OneSidedDifferences && lagged && !transpose) {
        const auto& u = *lagged;
        const double D = 0.5 / (h * h);
        rhs[0] += dt * D * (u[base] - 2.0 * u[base + s] + u[base + 2 * s]);
        const std::size_t e = base + static_cast<std::size_t>(N - 1) * s;
        rhs[N - 1] += dt * D * (u[e] - 2.0 * u[e - s] + u[e - 2 * s]);
      }
      if (transpose) {
        std::vector<double> lo(static_cast<std::size_t>(N), 0.0), up(static_cast<std::size_t>(N), 0.0);
        for (int j = 1; j < N; ++j) lo[j] = lc.up[j - 1];
        for (int j = 0; j + 1 < N; ++j) up[j] = lc.lo[j + 1];
        solve_tridiagonal(lo, lc.di, up, rhs);
      } else {
        solve_tridiagonal(lc.lo, lc.di, lc.up, rhs);
      }
      for (int j = 0; j < N; ++j) v[base + static_cast<std::size_t>(j) * s] = rhs[j];
    }
}

/// Feedback drift (nodes x rank) and weighted Lagrangian cost from the value v.
inline void feedback(const HjbSetup& S, const std::vector<double>& v, std::vector<double>& grad,
                     std::vector<double>& drift, std::vector<double>& lcost) {
  const TensorGrid& g = S.grid;
  const int R = g.rank();
  grad.resize(g.size() * static_cast<std::size_t>(R));
  drift.resize(grad.size());
  lcost.assign(g.size(), 0.0);
  for (int a = 0; a < R; ++a) axis_gradient(g, v, a, grad.data(), R, a);
  std::vector<double> x(static_cast<std::size_t>(R)), p(8), as(8);
  for (const HjbBlock& b : S.blocks) {
    const bool needs_x = b.lagrangian->kind() == LagrangianKind::Custom;
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
      if (needs_x) g.point(idx, x.data());
      const double* gi = grad.data() + idx * R + b.first_axis;
      for (int k = 0; k < b.dim; ++k) p[k] = S.scale * gi[k];
      b.lagrangian->hamiltonian(x.data() + b.first_axis, p.data(), as.data());
      double* di = drift.data() + idx * R + b.first_axis;
      for (int k = 0; k < b.dim; ++k) di[k] = as[k];
      lcost[idx] += S.weight * b.lagrangian->value(x.data() + b.first_axis, as.data());
    }
  }
}

}  // namespace detail

/// Backward solve; returns stored value levels and (optionally) the per-step feedback.
inline HjbRaw run_hjb(const HjbSetup& S) {
  const TensorGrid& g = S.grid;
  const int R = g.rank();
  const std::size_t M = g.size();
  require(S.terminal.size() == M, Errc::DimensionMismatch, "terminal values vs grid");
  require(S.steps >= 1 && S.store_every >= 1, Errc::InvalidArgument, "bad time stepping");
  const double dt = S.T / S.steps;
  const double ws = S.weight * S.scale;

  HjbRaw out;
  std::vector<std::vector<double>> stored;
  std::vector<double> stored_t;
  std::vector<double> V = S.terminal, U, W, grad, drift, lcost, src(M, 0.0);
  for (double v : V) require(std::isfinite(v), Errc::InvalidArgument, "nonfinite terminal value");
  stored.push_back(V);
  stored_t.push_back(S.T);
  if (S.record_policy) out.policy.resize(static_cast<std::size_t>(S.steps));

  std::vector<double> coeff;
  for (int k = S.steps - 1; k >= 0; --k) {
    U = V;
    if (S.running) {
      S.running(k, src);
    }
    double residual = 0.0;
    for (int it = 0; it < S.scheme.max_policy_iterations; ++it) {
      detail::feedback(S, V, grad, drift, lcost);
      coeff = drift;
      if (ws != 1.0)
        for (double& c : coeff) c *= ws;
      W.resize(M);
      for (std::size_t i = 0; i < M; ++i) W[i] = U[i] + dt * (lcost[i] + src[i]);
      double worst = 0.0;
      for (int a = 0; a < R; ++a) detail::axis_solve(g, a, dt, coeff.data(), R, S.boundary, W, false, worst, &V);
      if (worst > 0.5)
        fail(Errc::CflViolation, "outflow boundary row lost diagonal dominance (|drift| dt > h/2)");
      double diff = 0.0, scale = 1.0;
      for (std::size_t i = 0; i < M; ++i) {
        diff = std::max(diff, std::abs(W[i] - V[i]));
        scale = std::max(scale, std::abs(W[i]));
      }
      V.swap(W);
      residual = diff / scale;
      if (S.record_policy) out.policy[static_cast<std::size_t>(k)] = drift;
      if (residual <= S.scheme.policy_tol) break;
    }
    out.max_policy_residual = std::max(out.max_policy_residual, residual);
    if (residual > S.scheme.policy_fail_tol)
      fail(Errc::NonconvergentNewton, "policy iteration stalled at step " + std::to_string(k));
    for (double v : V)
      if (!std::isfinite(v)) fail(Errc::NonconvergentNewton, "nonfinite value at step " + std::to_string(k));
    if (k % S.store_every == 0) {
      stored.push_back(V);
      stored_t.push_back(k * dt);
    }
  }
  out.values.assign(stored.rbegin(), stored.rend());
  out.times.assign(stored_t.rbegin(), stored_t.rend());
  return out;
}

/// Forward push of node weights through one step of the discrete dynamics
/// (the exact adjoint of the backward step built from the same feedback).
inline void push_forward(const TensorGrid& g, double dt, const std::vector<double>& drift, double ws,
                         BoundaryMode mode, std::vector<double>& m) {
  const int R = g.rank();
  std::vector<double> coeff = drift;
  if (ws != 1.0)
    for (double& c : coeff) c *= ws;
  double before = 0.0, after = 0.0, worst = 0.0;
  for (double v : m) before += v;
  for (int a = R - 1; a >= 0; --a) detail::axis_solve(g, a, dt, coeff.data(), R, mode, m, true, worst);
  // Outflow boundary rows are not monotone; they only ever see tail mass.
  for (double& v : m) {
    if (v < 0.0) v = 0.0;
    after += v;
  }
  if (after > 0.0)
    for (double& v : m) v *= before / after;
}

// ---------------------------------------------------------------------------
// Value grids
// ---------------------------------------------------------------------------

class ValueGrid {
 public:
  ValueGrid() = default;

  ValueGrid(GridSpec spec, int blocks, int block_dim, double T, std::vector<double> times,
            std::vector<std::vector<double>> values, std::string problem_id = {})
      : spec_(std::move(spec)),
        grid_(spec_.axes),
        blocks_(blocks),
        block_dim_(block_dim),
        T_(T),
        times_(std::move(times)),
        values_(std::move(values)),
        problem_id_(std::move(problem_id)) {
    require(grid_.rank() == blocks * block_dim, Errc::DimensionMismatch, "grid rank vs blocks");
    for (const auto& v : values_)
      for (double x : v) require(std::isfinite(x), Errc::InvalidArgument, "nonfinite value in grid");
    build_gradient_cache();
  }

  const GridSpec& spec() const { return spec_; }
  const TensorGrid& grid() const { return grid_; }
  int blocks() const { return blocks_; }
  int block_dim() const { return block_dim_; }
  int rank() const { return grid_.rank(); }
  double horizon() const { return T_; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values(int s) const { return values_[static_cast<std::size_t>(s)]; }
  const std::vector<double>& gradients(int s) const { return grads_[static_cast<std::size_t>(s)]; }
  int snapshots() const { return static_cast<int>(times_.size()); }
  const std::string& problem_id() const { return problem_id_; }

  /// Bracketing stored levels and weight of the upper one.
  void bracket(double t, int& s0, int& s1, double& f) const {
    const int S = snapshots();
    if (t <= times_.front()) {
      s0 = s1 = 0;
      f = 0.0;
      return;
    }
    if (t >= times_.back()) {
      s0 = s1 = S - 1;
      f = 0.0;
      return;
    }
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    s1 = static_cast<int>(it - times_.begin());
    s0 = s1 - 1;
    const double span = times_[s1] - times_[s0];
    f = span > 0.0 ? (t - times_[s0]) / span : 0.0;
    if (f < 1e-12) {
      s1 = s0;
      f = 0.0;
    } else if (f > 1.0 - 1e-12) {
      s0 = s1;
      f = 0.0;
    }
  }

  double value(double t, const double* x) const {
    int s0, s1;
    double f;
    bracket(t, s0, s1, f);
    const double v0 = grid_.interpolate_extrapolated(values_[s0].data(), x);
    if (s0 == s1) return v0;
    return (1.0 - f) * v0 + f * grid_.interpolate_extrapolated(values_[s1].data(), x);
  }

  /// Full gradient (rank entries) at (t, x).
  void gradient(double t, const double* x, double* g) const {
    int s0, s1;
    double f;
    bracket(t, s0, s1, f);
    const int R = rank();
    grid_.interpolate(grads_[s0].data(), R, x, g);
    if (s0 == s1) return;
    std::array<double, 8> g1{};
    grid_.interpolate(grads_[s1].data(), R, x, g1.data());
    for (int k = 0; k < R; ++k) g[k] = (1.0 - f) * g[k] + f * g1[k];
  }

  /// Second derivatives along each axis at stored level s (central inside, copied at the ends).
  std::vector<double> hessian_diag(int s) const {
    const int R = rank();
    std::vector<double> out(grid_.size() * static_cast<std::size_t>(R), 0.0);
    const auto& v = values_[s];
    for (int a = 0; a < R; ++a) {
      const std::size_t st = grid_.stride(a);
      const double h = grid_.axis(a).h();
      for (std::size_t idx = 0; idx < grid_.size(); ++idx) {
        int j = grid_.coord(idx, a);
        const int N = grid_.axis(a).points;
        std::size_t c = idx;
        if (j == 0) c = idx + st;
        if (j == N - 1) c = idx - st;
        out[idx * R + a] = (v[c + st] - 2.0 * v[c] + v[c - st]) / (h * h);
      }
    }
    return out;
  }

  void build_gradient_cache() {
    const int R = rank();
    grads_.assign(values_.size(), {});
    for (std::size_t s = 0; s < values_.size(); ++s) {
      grads_[s].assign(grid_.size() * static_cast<std::size_t>(R), 0.0);
      for (int a = 0; a < R; ++a) detail::axis_gradient(grid_, values_[s], a, grads_[s].data(), R, a);
    }
  }

  /// Flat blob: magic, header (rank, blocks, block_dim, levels, points, bounds, times), values.
  void write_blob(std::ostream& os) const {
    static_assert(std::endian::native == std::endian::little, "blob format assumes a little-endian host");
    auto put_u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_f64 = [&](double v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    os.write("DGVG", 4);
    put_u32(1);
    put_u32(static_cast<std::uint32_t>(rank()));
    put_u32(static_cast<std::uint32_t>(blocks_));
    put_u32(static_cast<std::uint32_t>(block_dim_));
    put_u32(static_cast<std::uint32_t>(snapshots()));
    put_u32(static_cast<std::uint32_t>(spec_.time_steps));
    for (const Axis& a : spec_.axes) {
      put_u32(static_cast<std::uint32_t>(a.points));
      put_f64(a.lo);
      put_f64(a.hi);
    }
    put_f64(T_);
    for (double t : times_) put_f64(t);
    for (const auto& v : values_) os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
  }

  static ValueGrid read_blob(std::istream& is) {
    auto get_u32 = [&]() {
      std::uint32_t v = 0;
      is.read(reinterpret_cast<char*>(&v), 4);
      return v;
    };
    auto get_f64 = [&]() {
      double v = 0;
      is.read(reinterpret_cast<char*>(&v), 8);
      return v;
    };
    char magic[4];
    is.read(magic, 4);
    require(is.good() && std::string(magic, 4) == "DGVG", Errc::IoError, "not a value-grid blob");
    require(get_u32() == 1, Errc::IoError, "unsupported blob version");
    const int R = static_cast<int>(get_u32());
    const int blocks = static_cast<int>(get_u32());
    const int bd = static_cast<int>(get_u32());
    const int S = static_cast<int>(get_u32());
    GridSpec spec;
    spec.time_steps = static_cast<int>(get_u32());
    for (int a = 0; a < R; ++a) {
      Axis ax;
      ax.points = static_cast<int>(get_u32());
      ax.lo = get_f64();
      ax.hi = get_f64();
      spec.axes.push_back(ax);
    }
    const double T = get_f64();
    std::vector<double> times(static_cast<std::size_t>(S));
    for (double& t : times) t = get_f64();
    TensorGrid g(spec.axes);
    std::vector<std::vector<double>> vals(static_cast<std::size_t>(S), std::vector<double>(g.size()));
    for (auto& v : vals) is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    require(is.good(), Errc::IoError, "truncated value-grid blob");
    return ValueGrid(spec, blocks, bd, T, std::move(times), std::move(vals));
  }

  nlohmann::json sidecar() const {
    nlohmann::json j;
    j["format"] = "distgap-value-grid";
    j["version"] = 1;
    j["rank"] = rank();
    j["blocks"] = blocks_;
    j["block_dim"] = block_dim_;
    j["horizon"] = T_;
    j["time_steps"] = spec_.time_steps;
    j["stored_levels"] = snapshots();
    j["problem_id"] = problem_id_;
    j["byte_order"] = "little";
    nlohmann::json axes = nlohmann::json::array();
    for (const Axis& a : spec_.axes) axes.push_back({{"lo", a.lo}, {"hi", a.hi}, {"points", a.points}});
    j["axes"] = axes;
    return j;
  }

 private:
  GridSpec spec_;
  TensorGrid grid_;
  int blocks_ = 1;
  int block_dim_ = 1;
  double T_ = 1.0;
  std::vector<double> times_;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<double>> grads_;
  std::string problem_id_;
};

/// Per-axis box mu +- 6 sqrt(T + var0) covering every agent's initial law.
inline GridSpec default_grid(const ControlProblem& p, const std::vector<InitialLaw>& m0, int points, int steps,
                             double width_factor = 6.0) {
  require(static_cast<int>(m0.size()) == p.n, Errc::DimensionMismatch, "one initial law per agent");
  GridSpec g;
  g.time_steps = steps;
  for (int i = 0; i < p.n; ++i)
    for (int k = 0; k < p.d; ++k) {
      const InitialLaw& l = m0[static_cast<std::size_t>(i)];
      auto [lo, hi] = l.kind() == LawKind::Particles ? l.effective_range(k)
                                                     : std::pair<double, double>{l.mean()[k], l.mean()[k]};
      const double w = width_factor * std::sqrt(p.T + l.variance()[k]);
      g.axes.push_back({lo - w, hi + w, points});
    }
  return g;
}

inline std::size_t value_grid_bytes(const GridSpec& g) {
  std::size_t nodes = 1;
  for (const Axis& a : g.axes) nodes *= static_cast<std::size_t>(a.points);
  const std::size_t levels = static_cast<std::size_t>(g.time_steps / g.store_every + 1);
  return nodes * levels * (1 + g.axes.size()) * sizeof(double) + 8 * nodes * sizeof(double) * (1 + g.axes.size());
}

/// Full-information value on an (n d)-dimensional grid.
inline ValueGrid solve_full_hjb(const ControlProblem& p, const GridSpec& grid, const SchemeConfig& scheme = {}) {
  p.validate();
  const int R = p.n * p.d;
  require(R <= 4, Errc::GridTooLarge, "full-information grid needs n*d <= 4");
  require(static_cast<int>(grid.axes.size()) == R, Errc::DimensionMismatch, "grid axes vs n*d");
  for (const Axis& a : grid.axes) require(a.points >= 5 && a.lo < a.hi, Errc::InvalidArgument, "bad grid axis");
  require(value_grid_bytes(grid) <= grid.memory_cap_bytes, Errc::GridTooLarge, "grid exceeds the memory cap");

  HjbSetup S;
  S.grid = TensorGrid(grid.axes);
  S.T = p.T;
  S.steps = grid.time_steps;
  S.boundary = grid.boundary;
  S.weight = 1.0 / p.n;
  S.scale = p.n;
  S.store_every = grid.store_every;
  S.scheme = scheme;
  for (int i = 0; i < p.n; ++i) S.blocks.push_back({&p.lagrangian(i), i * p.d, p.d});
  S.terminal.resize(S.grid.size());
  std::vector<double> x(static_cast<std::size_t>(R));
  for (std::size_t idx = 0; idx < S.grid.size(); ++idx) {
    S.grid.point(idx, x.data());
    S.terminal[idx] = p.G.value(x.data());
  }
  if (!p.F.is_zero()) {
    std::vector<double> f(S.grid.size());
    for (std::size_t idx = 0; idx < S.grid.size(); ++idx) {
      S.grid.point(idx, x.data());
      f[idx] = p.F.value(x.data());
    }
    S.running = [f](int, std::vector<double>& out) { out = f; };
  }
  HjbRaw raw = run_hjb(S);
  return ValueGrid(grid, p.n, p.d, p.T, std::move(raw.times), std::move(raw.values), p.name);
}

// ---------------------------------------------------------------------------
// Lift and diagnostics
// ---------------------------------------------------------------------------

namespace detail {

inline TensorGrid block_grid(const TensorGrid& g, int first, int dim) {
  std::vector<Axis> ax;
  for (int k = 0; k < dim; ++k) ax.push_back(g.axis(first + k));
  return TensorGrid(ax);
}

inline std::size_t block_index(const TensorGrid& g, std::size_t idx, int first, int dim, const TensorGrid& bg) {
  std::size_t b = 0;
  for (int k = 0; k < dim; ++k) b += static_cast<std::size_t>(g.coord(idx, first + k)) * bg.stride(k);
  return b;
}

inline double tail_mass_outside(const InitialLaw& l, const TensorGrid& bg) {
  if (l.kind() == LawKind::Particles) {
    double out = 0.0;
    const int d = l.dim();
    for (std::size_t p = 0; p < l.weights().size(); ++p)
      if (!bg.contains(l.points().data() + p * d)) out += l.weights()[p];
    return out;
  }
  double out = 0.0;
  for (int k = 0; k < l.dim(); ++k) {
    const double s = std::sqrt(l.variance()[k]);
    const double m = l.mean()[k];
    if (s == 0.0) {
      if (m < bg.axis(k).lo || m > bg.axis(k).hi) out += 1.0;
      continue;
    }
    out += 0.5 * std::erfc((m - bg.axis(k).lo) / (s * std::sqrt(2.0)));
    out += 0.5 * std::erfc((bg.axis(k).hi - m) / (s * std::sqrt(2.0)));
  }
  return out;
}

}  // namespace detail

/// Weights of each agent's law on its block of axes.
inline std::vector<std::vector<double>> block_weights(const ValueGrid& V, const std::vector<InitialLaw>& m,
                                                      double tail_tol = 1e-6) {
  require(static_cast<int>(m.size()) == V.blocks(), Errc::DimensionMismatch, "one law per agent");
  std::vector<std::vector<double>> w;
  for (int b = 0; b < V.blocks(); ++b) {
    TensorGrid bg = detail::block_grid(V.grid(), b * V.block_dim(), V.block_dim());
    require(detail::tail_mass_outside(m[b], bg) <= tail_tol, Errc::SupportEscapesGrid,
            "marginal " + std::to_string(b) + " has mass outside the grid");
    w.push_back(m[b].on_grid(bg));
  }
  return w;
}

/// <m^1 x ... x m^n, V(t, .)> by tensor quadrature on the grid.
inline double lift_value(const ValueGrid& V, const std::vector<InitialLaw>& m, double t = 0.0) {
  const auto w = block_weights(V, m);
  int s0, s1;
  double f;
  V.bracket(t, s0, s1, f);
  const TensorGrid& g = V.grid();
  std::vector<TensorGrid> bgs;
  for (int b = 0; b < V.blocks(); ++b) bgs.push_back(detail::block_grid(g, b * V.block_dim(), V.block_dim()));
  double acc = 0.0;
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    double wt = 1.0;
    for (int b = 0; b < V.blocks() && wt != 0.0; ++b)
      wt *= w[b][detail::block_index(g, idx, b * V.block_dim(), V.block_dim(), bgs[b])];
    if (wt == 0.0) continue;
    const double v = s0 == s1 ? V.values(s0)[idx] : (1.0 - f) * V.values(s0)[idx] + f * V.values(s1)[idx];
    acc += wt * v;
  }
  return acc;
}

struct SpectralReport {
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
  double upper_bound = 0.0;  ///< C_S / n
  double slack = 0.0;
  std::size_t sampled = 0;
  std::vector<std::pair<double, std::size_t>> violations;  ///< (time, node)
  bool holds() const { return violations.empty(); }
};

/// Checks 0 <= D^2 V <= (C_S / n) I at interior nodes of every stored level.
/// Nodes within `margin` of the box edge (fraction per side) are skipped.
inline SpectralReport check_spectral_sandwich(const ValueGrid& V, double C_S, int n, double slack_factor = 10.0,
                                              double margin = 0.2, int level_stride = 1) {
  const TensorGrid& g = V.grid();
  const int R = g.rank();
  SpectralReport rep;
  double hmax = 0.0;
  for (int a = 0; a < R; ++a) hmax = std::max(hmax, g.axis(a).h());
  rep.slack = slack_factor * hmax;
  rep.upper_bound = C_S / n;
  rep.min_eigenvalue = std::numeric_limits<double>::infinity();
  rep.max_eigenvalue = -std::numeric_limits<double>::infinity();
  Eigen::MatrixXd H(R, R);
  for (int s = 0; s < V.snapshots(); s += level_stride) {
    const auto& v = V.values(s);
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
      bool inside = true;
      for (int a = 0; a < R && inside; ++a) {
        const int j = g.coord(idx, a);
        const int N = g.axis(a).points;
        const int skip = std::max(2, static_cast<int>(margin * (N - 1)));
        inside = j >= skip && j <= N - 1 - skip;
      }
      if (!inside) continue;
      for (int a = 0; a < R; ++a) {
        const std::size_t sa = g.stride(a);
        const double ha = g.axis(a).h();
        H(a, a) = (v[idx + sa] - 2.0 * v[idx] + v[idx - sa]) / (ha * ha);
        for (int b = a + 1; b < R; ++b) {
          const std::size_t sb = g.stride(b);
          const double hb = g.axis(b).h();
          H(a, b) = H(b, a) =
              (v[idx + sa + sb] - v[idx + sa - sb] - v[idx - sa + sb] + v[idx - sa - sb]) / (4.0 * ha * hb);
        }
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
      rep.min_eigenvalue = std::min(rep.min_eigenvalue, lo);
      rep.max_eigenvalue = std::max(rep.max_eigenvalue, hi);
      ++rep.sampled;
      if (lo < -rep.slack || hi > rep.upper_bound + rep.slack) rep.violations.push_back({V.times()[s], idx});
    }
  }
  return rep;
}

}  // namespace distgap
