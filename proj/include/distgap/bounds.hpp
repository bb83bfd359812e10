#pragma once

// Explicit constants and the right-hand sides of the gap, path-law and
// control estimates, evaluated from problem metadata and sampled statistics.

#include <algorithm>
#include <cmath>
#include "json.hpp"
#include <optional>
#include <string>
#include <vector>

#include "distgap/error.hpp"
#include "distgap/marginal.hpp"
#include "distgap/model.hpp"
#include "distgap/sde.hpp"

namespace distgap {

struct ConstantsLedger {
  double T = 1.0;
  double C_L = 1.0;
  double C_F = 0.0;
  double C_G = 0.0;
  double dxx_L = 0.0;
  double dxp_H = 0.0;
  double dpp_H = 1.0;
  double C_S = 0.0;
  double C_P = 1.0;
  double c0_poincare = 0.0;
  double c0_t2 = 0.0;
  double C_P_m = 1.0;
  double C_T2_m = 0.0;
  bool estimated = false;  ///< some input was sampled rather than declared

  /// Exponent rate shared by C_P, C_P(m) and C_T2(m).
  double rate() const { return dxp_H + dpp_H * C_S; }

  /// Exponential factor of the value-gap estimate at time t.
  double C_t(double t) const {
    return dpp_H * C_P_m * std::exp((T - t) * (1.0 + 2.0 * C_S * dpp_H + 2.0 * dxp_H));
  }

  nlohmann::json to_json() const {
    return {{"T", T},         {"C_L", C_L},     {"C_F", C_F},         {"C_G", C_G},   {"dxx_L", dxx_L},
            {"dxp_H", dxp_H}, {"dpp_H", dpp_H}, {"C_S", C_S},         {"C_P", C_P},   {"c0_poincare", c0_poincare},
            {"c0_t2", c0_t2}, {"C_P_m", C_P_m}, {"C_T2_m", C_T2_m},   {"estimated", estimated}};
  }
};

/// (e^{2Tk} - 1) / (2k), continued by its series near k = 0.
inline double poincare_growth(double T, double k) {
  const double z = 2.0 * T * k;
  if (std::abs(z) < 1e-8) return T * (1.0 + z / 2.0 + z * z / 6.0);
  return std::expm1(z) / (2.0 * k);
}

inline ConstantsLedger make_ledger(double T, double C_L, double C_F, double C_G, double dxx_L, double dxp_H,
                                   double dpp_H, double c0_poincare = 0.0, double c0_t2 = 0.0) {
  ConstantsLedger c;
  c.T = T;
  c.C_L = C_L;
  c.C_F = C_F;
  c.C_G = C_G;
  c.dxx_L = dxx_L;
  c.dxp_H = dxp_H;
  c.dpp_H = dpp_H;
  c.C_S = C_G + T * (dxx_L + C_F);
  const double k = c.rate();
  c.C_P = poincare_growth(T, k);
  c.c0_poincare = c0_poincare;
  c.c0_t2 = c0_t2;
  c.C_P_m = c.C_P + c0_poincare * std::exp(2.0 * T * k);
  c.C_T2_m = 3.0 * std::min(c0_t2, 2.0 * T) * std::exp(3.0 * T * k * k);
  return c;
}

/// Initial-law constants are the largest over agents; laws without a known
/// constant must be declared by the caller.
inline ConstantsLedger constants_ledger(const ControlProblem& p, const std::vector<InitialLaw>& m0) {
  p.validate();
  double c_l = std::numeric_limits<double>::infinity(), dxx = 0.0, dxp = 0.0, dpp = 0.0;
  for (int i = 0; i < p.n; ++i) {
    const LagrangianSpec& L = p.lagrangian(i);
    c_l = std::min(c_l, L.convexity_modulus());
    dxx = std::max(dxx, L.bounds().dxx_L);
    dxp = std::max(dxp, L.bounds().dxp_H);
    dpp = std::max(dpp, L.bounds().dpp_H);
  }
  double cp = 0.0, ct = 0.0;
  for (const auto& l : m0) {
    const auto a = l.poincare_constant();
    const auto b = l.t2_constant();
    require(a.has_value() && b.has_value(), Errc::MissingBound, "initial law without Poincare/T2 constants");
    cp = std::max(cp, *a);
    ct = std::max(ct, *b);
  }
  const double cf = p.F.is_zero() ? 0.0 : p.F.spectral_bound();
  const double cg = p.G.is_zero() ? 0.0 : p.G.spectral_bound();
  ConstantsLedger c = make_ledger(p.T, c_l, cf, cg, dxx, dxp, dpp, cp, ct);
  c.estimated = (!p.F.is_structured() && !p.F.is_zero()) || (!p.G.is_structured() && !p.G.is_zero());
  return c;
}

// ---------------------------------------------------------------------------
// Cross-derivative statistics
// ---------------------------------------------------------------------------

/// sum_{i<j} E|D_ij G(X_T)|^2 and the time profile of sum_{i<j} E|D_ij F(X_s)|^2,
/// from samples or from sup norms.
struct CrossStats {
  double G = 0.0;
  std::vector<double> times;
  std::vector<double> F;  ///< one value per time
  bool sup_norm = false;
};

inline double cross_sum_squares(const CostSpec& c, int n, const double* x, std::vector<double>& blk) {
  const int d = c.dim();
  blk.resize(static_cast<std::size_t>(d * d));
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      c.hessian_block(x, i, j, blk.data());
      for (double b : blk) s += b * b;
    }
  return s;
}

inline CrossStats cross_stats(const ControlProblem& p, const ParticleEnsemble& e) {
  require(e.n == p.n && e.d == p.d, Errc::DimensionMismatch, "ensemble vs problem");
  CrossStats s;
  std::vector<double> blk;
  const int L = e.levels();
  const bool sepF = p.F.is_zero() || p.F.is_separable(), sepG = p.G.is_zero() || p.G.is_separable();
  if (!sepG)
    for (std::size_t q = 0; q < e.N; ++q) s.G += cross_sum_squares(p.G, p.n, e.terminal(q), blk) / e.N;
  for (int l = 0; l < L; ++l) {
    s.times.push_back(e.time(l));
    double f = 0.0;
    if (!sepF)
      for (std::size_t q = 0; q < e.N; ++q) f += cross_sum_squares(p.F, p.n, e.at(q, l), blk) / e.N;
    s.F.push_back(f);
  }
  return s;
}

inline CrossStats cross_stats_sup(const ControlProblem& p, int levels = 65) {
  CrossStats s;
  s.sup_norm = true;
  s.G = p.G.is_zero() ? 0.0 : cross_derivative_table(p.G, p.n).sum_squares();
  const double f = p.F.is_zero() ? 0.0 : cross_derivative_table(p.F, p.n).sum_squares();
  for (int l = 0; l < levels; ++l) {
    s.times.push_back(p.T * l / (levels - 1));
    s.F.push_back(f);
  }
  return s;
}

namespace detail {

/// Trapezoid integral over [t, T] of weight(s) * stats.F(s), with the profile
/// interpolated linearly.
template <class Weight>
double integrate_profile(const CrossStats& s, double t, Weight&& w) {
  if (s.times.size() < 2) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < s.times.size(); ++k) {
    double a = s.times[k], b = s.times[k + 1];
    if (b <= t) continue;
    double fa = s.F[k], fb = s.F[k + 1];
    if (a < t) {
      fa = fa + (fb - fa) * (t - a) / (b - a);
      a = t;
    }
    acc += 0.5 * (b - a) * (w(a, fa) + w(b, fb));
  }
  return acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

/// n C_t sum_{i<j} [(T-t) E|D_ij G|^2 + int (s-t) E|D_ij F|^2 ds].
inline double gap_bound_general(const ConstantsLedger& c, const CrossStats& s, int n, double t = 0.0) {
  const double inner = (c.T - t) * s.G + detail::integrate_profile(s, t, [t](double u, double f) { return (u - t) * f; });
  return n * c.C_t(t) * inner;
}

/// n (T-t) [ sqrt((T-t+c0) S_G) + int sqrt((s-t+c0) S_F(s)) ds ]^2, quadratic Lagrangians only.
inline double gap_bound_quadratic(const ControlProblem& p, const ConstantsLedger& c, const CrossStats& s,
                                  double t = 0.0) {
  for (int i = 0; i < p.n; ++i)
    require(p.lagrangian(i).is_quadratic(), Errc::NotQuadratic, "the sharper bound needs |a|^2/2 Lagrangians");
  const double c0 = c.c0_poincare;
  const double a = std::sqrt((c.T - t + c0) * s.G);
  const double b = detail::integrate_profile(s, t, [t, c0](double u, double f) { return std::sqrt((u - t + c0) * f); });
  return p.n * (c.T - t) * (a + b) * (a + b);
}

/// Doubly stochastic pairwise interaction: the general bound with
/// n sum_{i<j} |D_ij .|^2 <= (4/n) |D^2 g2|^2 Tr(J^2).
inline double gap_bound_hetero(const Eigen::MatrixXd& J, double g2_hess, double f2_hess, const ConstantsLedger& c,
                               double t = 0.0) {
  if (J.size() == 0 || J.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  require(is_doubly_stochastic(J), Errc::NotDoublyStochastic, "interaction matrix is not doubly stochastic");
  const int n = static_cast<int>(J.rows());
  const double tr = (J * J).trace();
  const double h = c.T - t;
  return c.C_t(t) * (4.0 * tr / n) * (h * g2_hess * g2_hess + 0.5 * h * h * f2_hess * f2_hess);
}

/// C(m)/n for mean-field costs with the given Lions second-derivative bounds.
inline double gap_bound_meanfield(std::optional<double> dmm_G, std::optional<double> dmm_F, const ConstantsLedger& c,
                                  int n, double t = 0.0) {
  require(dmm_G.has_value() && dmm_F.has_value(), Errc::MissingLionsBounds, "mean-field bound needs D_mm norms");
  const double h = c.T - t;
  const double C = (0.5 * h * *dmm_G * *dmm_G + 0.25 * h * h * *dmm_F * *dmm_F) * c.dpp_H * c.C_P_m *
                   std::exp(h * (1.0 + 2.0 * c.C_S + 2.0 * c.dxp_H));
  return C / n;
}

/// k C_T2(m) R(t, m).
inline double chaos_bound(const ConstantsLedger& c, double R, int k) { return k * c.C_T2_m * R; }

struct ControlBound {
  double C1 = 0.0, C2 = 0.0;
  double value = 0.0;
};

/// C1 n^2 sum |D_ij F|^2 + C2 n^2 sum |D_ij G|^2 with sup norms.
inline ControlBound control_gap_bound(const ControlProblem& p, const ConstantsLedger& c) {
  ControlBound b;
  b.C1 = c.C_P * c.T * c.T * c.T / (2.0 * c.C_L * c.C_L);
  b.C2 = c.C_P * c.T / (c.C_L * c.C_L);
  const double n2 = double(p.n) * p.n;
  const double sf = p.F.is_zero() ? 0.0 : cross_derivative_table(p.F, p.n).sum_squares();
  const double sg = p.G.is_zero() ? 0.0 : cross_derivative_table(p.G, p.n).sum_squares();
  b.value = b.C1 * n2 * sf + b.C2 * n2 * sg;
  return b;
}

struct Smallness {
  bool passes = false;
  double margin = 0.0;
};

/// C_F and C_G here are semi-concavity constants.
inline Smallness smallness_check(double C_L, double C_F, double C_G, double T) {
  Smallness s;
  s.margin = C_L - 0.5 * C_F * T * T - C_G * T;
  s.passes = s.margin > 0.0;
  return s;
}

inline Smallness smallness_check(const ConstantsLedger& c) { return smallness_check(c.C_L, c.C_F, c.C_G, c.T); }

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

enum class Verdict { Holds, HoldsWithinCI, Violated };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Holds: return "Holds";
    case Verdict::HoldsWithinCI: return "HoldsWithinCI";
    case Verdict::Violated: return "Violated";
  }
  return "?";
}

struct BoundReport {
  std::string theorem;
  GapEstimate gap;
  double bound = 0.0;
  double slack = 0.0;
  Verdict verdict = Verdict::Holds;
  std::string inputs;  ///< which statistics fed the bound

  nlohmann::json to_json(const std::string& inputs_hash = {}) const {
    return {{"theorem", theorem}, {"gap", gap.value},         {"gap_stderr", gap.stderr_},
            {"method", method_name(gap.method)}, {"bound", bound}, {"slack", slack},
            {"verdict", verdict_name(verdict)}, {"inputs", inputs}, {"inputs_hash", inputs_hash}};
  }
};

inline BoundReport compare(std::string theorem, const GapEstimate& gap, double bound, std::string inputs = {}) {
  BoundReport r;
  r.theorem = std::move(theorem);
  r.gap = gap;
  r.bound = bound;
  r.slack = bound - gap.value;
  r.inputs = std::move(inputs);
  if (gap.value <= bound)
    r.verdict = Verdict::Holds;
  else if (gap.value - 3.0 * gap.stderr_ <= bound)
    r.verdict = Verdict::HoldsWithinCI;
  else
    r.verdict = Verdict::Violated;
  return r;
}

}  // namespace distgap
