#pragma once

// Reference values: the Gibbs integral for quadratic actions without running
// cost, matrix Riccati solutions for quadratic data, and the mean/variance
// reduction of quadratic mean-field problems.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "distgap/error.hpp"
#include "distgap/marginal.hpp"
#include "distgap/model.hpp"
#include "distgap/quadrature.hpp"
#include "distgap/rng.hpp"

namespace distgap {

// ---------------------------------------------------------------------------
// Gibbs value
// ---------------------------------------------------------------------------

struct GibbsConfig {
  int nodes = 32;
  bool doubling_check = true;
  double doubling_tol = 1e-8;
  std::size_t tensor_budget = std::size_t{1} << 24;  ///< largest tensor rule evaluated
  std::size_t mc_samples = 1000000;
  std::uint64_t seed = 0x61BB5u;
  bool control_variate = true;
  int outer_nodes = 12;  ///< per random coordinate when integrating over a Gaussian start
};

struct GibbsValue {
  double value = 0.0;
  double stderr_ = 0.0;
  std::string method;  ///< "gauss-hermite" or "monte-carlo"
  int nodes = 0;
  double doubling_delta = 0.0;
  std::size_t samples = 0;
};

namespace detail {

inline double gibbs_tensor(const CostSpec& G, int n, const double* x0, double tau, int q) {
  const int D = n * G.dim();
  const GaussRule& r = gauss_hermite(q);
  std::size_t total = 1;
  for (int k = 0; k < D; ++k) total *= static_cast<std::size_t>(q);
  const double st = std::sqrt(tau);
  std::vector<int> idx(static_cast<std::size_t>(D), 0);
  std::vector<double> x(x0, x0 + D);
  for (int k = 0; k < D; ++k) x[k] = x0[k] + st * r.nodes[0];
  // Running log-sum-exp.
  double m = -std::numeric_limits<double>::infinity(), s = 0.0;
  for (std::size_t c = 0; c < total; ++c) {
    double w = 1.0;
    for (int k = 0; k < D; ++k) w *= r.weights[idx[k]];
    const double a = -n * G.value(x.data());
    if (a > m) {
      s = s * std::exp(m - a) + w;
      m = a;
    } else {
      s += w * std::exp(a - m);
    }
    for (int k = D - 1; k >= 0; --k) {
      if (++idx[k] < q) {
        x[k] = x0[k] + st * r.nodes[idx[k]];
        break;
      }
      idx[k] = 0;
      x[k] = x0[k] + st * r.nodes[0];
    }
  }
  return -(m + std::log(s)) / n;
}

inline GibbsValue gibbs_mc(const CostSpec& G, int n, const double* x0, double tau, const GibbsConfig& cfg) {
  const int D = n * G.dim();
  const double st = std::sqrt(tau);
  const double g0 = G.value(x0);
  // Quadratic model of G at x0 gives a control variate with a closed-form mean.
  std::vector<double> grad(static_cast<std::size_t>(D));
  G.gradient(x0, grad.data());
  Eigen::MatrixXd H = G.hessian(x0);
  Eigen::VectorXd g = Eigen::Map<Eigen::VectorXd>(grad.data(), D);
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(D, D) + n * tau * H;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  const bool use_cv = cfg.control_variate && llt.info() == Eigen::Success;
  double cv_mean = 0.0;
  if (use_cv) {
    Eigen::VectorXd b = n * st * g;
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    cv_mean = std::exp(-0.5 * logdet + 0.5 * b.dot(llt.solve(b)));
  }
  KeyedRng rng(cfg.seed);
  const std::size_t N = cfg.mc_samples;
  std::vector<double> z(static_cast<std::size_t>(D)), x(static_cast<std::size_t>(D));
  std::vector<double> f(N), h(N);
  for (std::size_t s = 0; s < N; ++s) {
    rng.normals(static_cast<std::uint32_t>(s), 0, static_cast<std::uint32_t>(s >> 32), Stream::Quadrature, z.data(), D);
    for (int k = 0; k < D; ++k) x[k] = x0[k] + st * z[k];
    f[s] = std::exp(-n * (G.value(x.data()) - g0));
    if (use_cv) {
      Eigen::Map<Eigen::VectorXd> zv(z.data(), D);
      const double qd = st * g.dot(zv) + 0.5 * tau * zv.dot(H * zv);
      h[s] = std::exp(-n * qd);
    }
  }
  double beta = 0.0;
  if (use_cv) {
    double mf = 0.0, mh = 0.0;
    for (std::size_t s = 0; s < N; ++s) {
      mf += f[s];
      mh += h[s];
    }
    mf /= N;
    mh /= N;
    double cov = 0.0, var = 0.0;
    for (std::size_t s = 0; s < N; ++s) {
      cov += (f[s] - mf) * (h[s] - mh);
      var += (h[s] - mh) * (h[s] - mh);
    }
    beta = var > 0.0 ? cov / var : 0.0;
  }
  double mean = 0.0;
  for (std::size_t s = 0; s < N; ++s) mean += f[s] - beta * (h[s] - cv_mean);
  mean /= N;
  double var = 0.0;
  for (std::size_t s = 0; s < N; ++s) {
    const double e = f[s] - beta * (h[s] - cv_mean) - mean;
    var += e * e;
  }
  var /= (N - 1);
  if (!(mean > 0.0)) fail(Errc::NonfiniteCost, "Gibbs estimate is not positive");
  GibbsValue out;
  out.value = g0 - std::log(mean) / n;
  out.stderr_ = std::sqrt(var / N) / (n * mean);
  out.method = use_cv ? "monte-carlo+control-variate" : "monte-carlo";
  out.samples = N;
  return out;
}

inline GibbsValue gibbs_at_point(const CostSpec& G, int n, const double* x0, double tau, const GibbsConfig& cfg) {
  GibbsValue out;
  if (tau <= 0.0) {
    out.value = G.value(x0);
    out.method = "terminal";
    return out;
  }
  const int D = n * G.dim();
  auto tensor_size = [&](int q) {
    double s = 1.0;
    for (int k = 0; k < D; ++k) s *= q;
    return s;
  };
  if (tensor_size(cfg.nodes) <= static_cast<double>(cfg.tensor_budget)) {
    out.method = "gauss-hermite";
    out.value = gibbs_tensor(G, n, x0, tau, cfg.nodes);
    out.nodes = cfg.nodes;
    if (cfg.doubling_check && tensor_size(2 * cfg.nodes) <= static_cast<double>(cfg.tensor_budget)) {
      const double fine = gibbs_tensor(G, n, x0, tau, 2 * cfg.nodes);
      out.doubling_delta = std::abs(fine - out.value);
      if (out.doubling_delta >= cfg.doubling_tol) {
        out.value = fine;
        out.nodes = 2 * cfg.nodes;
      }
    }
    return out;
  }
  return gibbs_mc(G, n, x0, tau, cfg);
}

}  // namespace detail

/// -(1/n) log E exp(-n G(x0 + sqrt(T - t) Z)) at a point x0.
inline GibbsValue cole_hopf_value(const ControlProblem& p, double t, const std::vector<double>& x0,
                                  const GibbsConfig& cfg = {}) {
  require(p.all_quadratic(), Errc::NonQuadraticLagrangian, "Gibbs formula needs |a|^2/2 actions");
  require(p.F.is_zero(), Errc::NonQuadraticLagrangian, "Gibbs formula needs zero running cost");
  require(static_cast<int>(x0.size()) == p.n * p.d, Errc::DimensionMismatch, "x0 has n*d entries");
  return detail::gibbs_at_point(p.G, p.n, x0.data(), p.T - t, cfg);
}

/// Lift of the Gibbs value over independent initial laws. Gaussian coordinates
/// are integrated with an outer tensor rule; the inner value is taken pointwise.
inline GibbsValue cole_hopf_value(const ControlProblem& p, double t, const std::vector<InitialLaw>& m0,
                                  const GibbsConfig& cfg = {}) {
  require(static_cast<int>(m0.size()) == p.n, Errc::DimensionMismatch, "one law per agent");
  std::vector<double> center(static_cast<std::size_t>(p.n * p.d));
  std::vector<int> random_axes;
  std::vector<double> sd;
  for (int i = 0; i < p.n; ++i) {
    require(m0[i].kind() != LawKind::Particles, Errc::InvalidArgument, "Gibbs lift takes Dirac or Gaussian laws");
    for (int k = 0; k < p.d; ++k) {
      center[i * p.d + k] = m0[i].mean()[k];
      if (m0[i].variance()[k] > 0.0) {
        random_axes.push_back(i * p.d + k);
        sd.push_back(std::sqrt(m0[i].variance()[k]));
      }
    }
  }
  if (random_axes.empty()) return cole_hopf_value(p, t, center, cfg);
  const int R = static_cast<int>(random_axes.size());
  const int q = cfg.outer_nodes;
  double outer = 1.0;
  for (int k = 0; k < R; ++k) outer *= q;
  require(outer <= 4096.0, Errc::QuadratureDimCap, "too many random initial coordinates for the Gibbs lift");
  const GaussRule& r = gauss_hermite(q);
  std::vector<int> idx(static_cast<std::size_t>(R), 0);
  GibbsValue acc;
  acc.method = "outer-gauss-hermite";
  double var = 0.0;
  for (std::size_t c = 0; c < static_cast<std::size_t>(outer); ++c) {
    std::vector<double> x = center;
    double w = 1.0;
    for (int k = 0; k < R; ++k) {
      x[random_axes[k]] += sd[k] * r.nodes[idx[k]];
      w *= r.weights[idx[k]];
    }
    GibbsValue v = cole_hopf_value(p, t, x, cfg);
    acc.value += w * v.value;
    var += w * w * v.stderr_ * v.stderr_;
    acc.doubling_delta = std::max(acc.doubling_delta, v.doubling_delta);
    acc.nodes = v.nodes;
    acc.method = "outer-gauss-hermite/" + v.method;
    for (int k = R - 1; k >= 0; --k) {
      if (++idx[k] < q) break;
      idx[k] = 0;
    }
  }
  acc.stderr_ = std::sqrt(var);
  return acc;
}

// ---------------------------------------------------------------------------
// Riccati
// ---------------------------------------------------------------------------

/// Quadratic model c + b.x + x^T Q x / 2 of a cost on (R^d)^n.
struct QuadraticForm {
  Eigen::MatrixXd Q;
  Eigen::VectorXd b;
  double c = 0.0;
};

/// Reads off the quadratic model of a cost and checks it reproduces the cost.
inline QuadraticForm quadratic_form(const CostSpec& cost) {
  const int D = cost.agents() * cost.dim();
  QuadraticForm f;
  std::vector<double> z(static_cast<std::size_t>(D), 0.0), g(static_cast<std::size_t>(D));
  f.c = cost.value(z.data());
  cost.gradient(z.data(), g.data());
  f.b = Eigen::Map<Eigen::VectorXd>(g.data(), D);
  f.Q = cost.hessian(z.data());
  f.Q = 0.5 * (f.Q + f.Q.transpose());
  KeyedRng rng(0x9AD5u);
  for (int s = 0; s < 8; ++s) {
    rng.normals(static_cast<std::uint32_t>(s), 0, 0, Stream::Auxiliary, z.data(), D);
    Eigen::Map<Eigen::VectorXd> x(z.data(), D);
    const double model = f.c + f.b.dot(x) + 0.5 * x.dot(f.Q * x);
    const double v = cost.value(z.data());
    require(std::abs(model - v) <= 1e-9 * (1.0 + std::abs(v)), Errc::NonLqFunctional, "cost is not a quadratic form");
  }
  return f;
}

/// V(t, x) = x^T P(t) x / 2 + beta(t).x + r(t) on a stored time grid.
class RiccatiSolution {
 public:
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> P, dP;
  std::vector<Eigen::VectorXd> beta, dbeta;
  std::vector<double> offset, doffset;

  Eigen::MatrixXd P_at(double t) const {
    Eigen::MatrixXd out;
    hermite(t, P, dP, out);
    return out;
  }
  Eigen::VectorXd beta_at(double t) const {
    Eigen::VectorXd out;
    hermite(t, beta, dbeta, out);
    return out;
  }
  double offset_at(double t) const {
    double out = 0.0;
    hermite(t, offset, doffset, out);
    return out;
  }

  double value(double t, const Eigen::VectorXd& x) const {
    return 0.5 * x.dot(P_at(t) * x) + beta_at(t).dot(x) + offset_at(t);
  }
  Eigen::VectorXd gradient(double t, const Eigen::VectorXd& x) const { return P_at(t) * x + beta_at(t); }

 private:
  template <class T>
  void hermite(double t, const std::vector<T>& y, const std::vector<T>& dy, T& out) const {
    const std::size_t K = times.size();
    if (t <= times.front()) {
      out = y.front();
      return;
    }
    if (t >= times.back()) {
      out = y.back();
      return;
    }
    std::size_t k = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin()) - 1;
    if (k + 1 >= K) k = K - 2;
    const double h = times[k + 1] - times[k];
    const double s = (t - times[k]) / h;
    const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
    const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
    out = h00 * y[k] + h10 * h * dy[k] + h01 * y[k + 1] + h11 * h * dy[k + 1];
  }
};

struct RiccatiConfig {
  long steps = 100000;
  int stored = 1001;
};

/// Backward RK4 for  P' = n P Rinv P - Q_F,  beta' = n P Rinv beta - b_F,
/// r' = -tr(P)/2 + (n/2) beta^T Rinv beta - c_F  with terminal data from G.
inline RiccatiSolution lq_riccati(const QuadraticForm& Gq, const QuadraticForm& Fq, const Eigen::MatrixXd& Rinv,
                                  int n, double T, const RiccatiConfig& cfg = {}) {
  const int D = static_cast<int>(Gq.Q.rows());
  require(Fq.Q.rows() == D && Rinv.rows() == D, Errc::DimensionMismatch, "Riccati data sizes");
  struct State {
    Eigen::MatrixXd P;
    Eigen::VectorXd b;
    double r;
  };
  auto rhs = [&](const State& s) {
    State d;
    const Eigen::MatrixXd PR = s.P * Rinv;
    d.P = n * PR * s.P - Fq.Q;
    d.b = n * PR * s.b - Fq.b;
    d.r = -0.5 * s.P.trace() + 0.5 * n * s.b.dot(Rinv * s.b) - Fq.c;
    return d;
  };
  auto axpy = [](const State& s, double h, const State& d) {
    return State{s.P + h * d.P, s.b + h * d.b, s.r + h * d.r};
  };
  const long K = cfg.steps;
  const long every = std::max(1L, K / (cfg.stored - 1));
  const double h = T / K;
  State s{Gq.Q, Gq.b, Gq.c};
  RiccatiSolution sol;
  auto store = [&](double t) {
    State d = rhs(s);
    sol.times.push_back(t);
    sol.P.push_back(s.P);
    sol.dP.push_back(d.P);
    sol.beta.push_back(s.b);
    sol.dbeta.push_back(d.b);
    sol.offset.push_back(s.r);
    sol.doffset.push_back(d.r);
  };
  store(T);
  for (long k = K; k > 0; --k) {
    // Integrate toward t - h: derivative with respect to t, step -h.
    const State k1 = rhs(s);
    const State k2 = rhs(axpy(s, -0.5 * h, k1));
    const State k3 = rhs(axpy(s, -0.5 * h, k2));
    const State k4 = rhs(axpy(s, -h, k3));
    s.P -= h / 6.0 * (k1.P + 2 * k2.P + 2 * k3.P + k4.P);
    s.b -= h / 6.0 * (k1.b + 2 * k2.b + 2 * k3.b + k4.b);
    s.r -= h / 6.0 * (k1.r + 2 * k2.r + 2 * k3.r + k4.r);
    s.P = 0.5 * (s.P + s.P.transpose());
    if (!s.P.allFinite() || s.P.cwiseAbs().maxCoeff() > 1e12)
      fail(Errc::RiccatiBlowUp, "Riccati solution escapes in finite time");
    if ((K - k + 1) % every == 0 || k == 1) store((k - 1) * h);
  }
  std::reverse(sol.times.begin(), sol.times.end());
  std::reverse(sol.P.begin(), sol.P.end());
  std::reverse(sol.dP.begin(), sol.dP.end());
  std::reverse(sol.beta.begin(), sol.beta.end());
  std::reverse(sol.dbeta.begin(), sol.dbeta.end());
  std::reverse(sol.offset.begin(), sol.offset.end());
  std::reverse(sol.doffset.begin(), sol.doffset.end());
  sol.times.front() = 0.0;
  sol.times.back() = T;
  return sol;
}

inline Eigen::MatrixXd inverse_action_weights(const ControlProblem& p) {
  const int D = p.n * p.d;
  Eigen::MatrixXd Rinv = Eigen::MatrixXd::Zero(D, D);
  for (int i = 0; i < p.n; ++i) {
    const LagrangianSpec& l = p.lagrangian(i);
    require(l.kind() != LagrangianKind::Custom, Errc::NonLqFunctional, "Riccati needs quadratic actions");
    Rinv.block(i * p.d, i * p.d, p.d, p.d) = l.weight_matrix().inverse();
  }
  return Rinv;
}

inline RiccatiSolution lq_riccati(const ControlProblem& p, const RiccatiConfig& cfg = {}) {
  return lq_riccati(quadratic_form(p.G), quadratic_form(p.F), inverse_action_weights(p), p.n, p.T, cfg);
}

/// E over independent Gaussian or Dirac starts of the Riccati value.
inline double riccati_lift(const RiccatiSolution& s, const std::vector<InitialLaw>& m0, double t = 0.0) {
  const Eigen::MatrixXd P = s.P_at(t);
  const Eigen::VectorXd b = s.beta_at(t);
  const int D = static_cast<int>(P.rows());
  Eigen::VectorXd mu(D), var(D);
  int k = 0;
  for (const InitialLaw& l : m0)
    for (int c = 0; c < l.dim(); ++c, ++k) {
      mu[k] = l.mean()[c];
      var[k] = l.variance()[c];
    }
  require(k == D, Errc::DimensionMismatch, "initial laws vs Riccati dimension");
  return 0.5 * mu.dot(P * mu) + 0.5 * P.diagonal().dot(var) + b.dot(mu) + s.offset_at(t);
}

// ---------------------------------------------------------------------------
// Quadratic mean-field problems
// ---------------------------------------------------------------------------

/// Per-coordinate reduction of a quadratic functional of a law:
/// (q_var / 2) Var + (q_mean / 2) mean^2 + q_lin mean + q_const.
struct MeanVarianceForm {
  std::vector<double> q_var, q_mean, q_lin;
  double q_const = 0.0;
};

/// Reduction of <m, g1> + <m (x) m, g2(x - y)> + (c/2)|<m, x>|^2.
inline MeanVarianceForm mean_variance_form(const Atom& g1, const Atom& g2, double mean_coef, int d) {
  MeanVarianceForm f;
  f.q_var.assign(static_cast<std::size_t>(d), 0.0);
  f.q_mean.assign(static_cast<std::size_t>(d), 0.0);
  f.q_lin.assign(static_cast<std::size_t>(d), 0.0);
  auto ok = [](const Atom& a) { return a.is_zero() || a.kind == AtomKind::Linear || a.kind == AtomKind::Quadratic; };
  require(ok(g1) && ok(g2), Errc::NonLqFunctional, "mean-field atoms must be linear or quadratic");
  std::vector<double> e(static_cast<std::size_t>(d), 0.0), gr(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) {
    const double a = g1.kind == AtomKind::Quadratic ? g1.scale : 0.0;
    const double kap = g2.kind == AtomKind::Quadratic ? g2.scale : 0.0;
    f.q_var[k] = a + 2.0 * kap;
    f.q_mean[k] = a + mean_coef;
    if (g1.kind == AtomKind::Linear) {
      g1.gradient(e.data(), d, gr.data());
      f.q_lin[k] = gr[k];
    }
  }
  return f;
}

/// Limit functional of a mean-field cost.
inline MeanVarianceForm mean_variance_form(const CostSpec& c) {
  require(c.kind() == CostKind::MeanField || c.is_zero(), Errc::NonLqFunctional, "needs a mean-field cost");
  if (c.is_zero()) return mean_variance_form(Atom::zero(), Atom::zero(), 0.0, c.dim());
  return mean_variance_form(c.own().front(), c.pair(), c.mean_coef(), c.dim());
}

struct MeanFieldLqValue {
  double value = 0.0;
  double variance_part = 0.0;
  double mean_part = 0.0;
};

/// U(t, m0) for a Gaussian (or Dirac) start and quadratic mean-field data.
inline MeanFieldLqValue meanfield_lq(const MeanVarianceForm& G, const MeanVarianceForm& F,
                                     const LagrangianSpec& lag, const InitialLaw& m0, double T, double t = 0.0,
                                     long steps = 100000) {
  require(m0.kind() != LawKind::Particles, Errc::NonGaussianInitial, "mean-field LQ needs a Gaussian start");
  require(lag.kind() != LagrangianKind::Custom, Errc::NonLqFunctional, "mean-field LQ needs a quadratic action");
  const Eigen::MatrixXd R = lag.weight_matrix();
  const int d = m0.dim();
  require(static_cast<int>(G.q_var.size()) == d, Errc::DimensionMismatch, "functional vs law dimension");
  MeanFieldLqValue out;
  const double tau = T - t;
  const double h = tau / steps;
  for (int k = 0; k < d; ++k) {
    require(std::abs(R.row(k).sum() - R(k, k)) < 1e-14, Errc::NonLqFunctional, "action weight must be diagonal");
    const double r = R(k, k);
    // State (P, rho_v, p, beta, rho_m) integrated backward in time.
    std::array<double, 5> y{G.q_var[k], 0.0, G.q_mean[k], G.q_lin[k], 0.0};
    auto f = [&](const std::array<double, 5>& s) {
      return std::array<double, 5>{s[0] * s[0] / r - F.q_var[k], -0.5 * s[0], s[2] * s[2] / r - F.q_mean[k],
                                   s[2] * s[3] / r - F.q_lin[k], s[3] * s[3] / (2.0 * r)};
    };
    for (long step = 0; step < steps; ++step) {
      auto add = [](const std::array<double, 5>& a, double c, const std::array<double, 5>& b) {
        std::array<double, 5> o;
        for (int j = 0; j < 5; ++j) o[j] = a[j] + c * b[j];
        return o;
      };
      const auto k1 = f(y);
      const auto k2 = f(add(y, -0.5 * h, k1));
      const auto k3 = f(add(y, -0.5 * h, k2));
      const auto k4 = f(add(y, -h, k3));
      for (int j = 0; j < 5; ++j) y[j] -= h / 6.0 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);
      require(std::isfinite(y[0]) && std::isfinite(y[2]), Errc::RiccatiBlowUp, "mean-field Riccati escapes");
    }
    const double s0 = m0.variance()[k], mu = m0.mean()[k];
    out.variance_part += 0.5 * y[0] * s0 + y[1];
    out.mean_part += 0.5 * y[2] * mu * mu + y[3] * mu + y[4];
  }
  out.value = out.variance_part + out.mean_part + G.q_const + F.q_const * tau;
  return out;
}

}  // namespace distgap
