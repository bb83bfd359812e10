#pragma once

// Control problems: Lagrangians and their Hamiltonians, running/terminal
// costs with their derivative metadata, and the interaction structure.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "distgap/atoms.hpp"
#include "distgap/error.hpp"
#include "distgap/rng.hpp"

namespace distgap {

// ---------------------------------------------------------------------------
// Lagrangians
// ---------------------------------------------------------------------------

enum class LagrangianKind { Quadratic, QuadraticWeighted, Custom };

/// Sup-norm bounds on the second derivatives that enter the constants.
struct DerivativeBounds {
  double dxx_L = 0.0;
  double dxp_H = 0.0;
  double dpp_H = 1.0;
};

/// Black-box Lagrangian. Gradients in a are mandatory; the rest are optional
/// (Hessian by finite differences of grad_a, x-gradient taken as zero).
struct CustomLagrangian {
  std::function<double(const double* x, const double* a)> value;
  std::function<void(const double* x, const double* a, double* grad_a)> grad_a;
  std::function<void(const double* x, const double* a, double* hess_aa)> hess_aa;
  std::function<void(const double* x, const double* a, double* grad_x)> grad_x;
};

struct HamiltonianValue {
  double value = 0.0;
  std::vector<double> minimizer;  ///< a* = -D_p H(x, p)
};

class LagrangianSpec {
 public:
  static LagrangianSpec quadratic(int d) {
    LagrangianSpec l;
    l.kind_ = LagrangianKind::Quadratic;
    l.d_ = d;
    l.modulus_ = 1.0;
    l.bounds_ = {0.0, 0.0, 1.0};
    return l;
  }

  /// L(a) = a^T R a / 2 with R symmetric positive definite.
  static LagrangianSpec weighted(const Eigen::MatrixXd& R) {
    require(R.rows() == R.cols() && R.rows() > 0, Errc::InvalidArgument, "R must be square");
    require((R - R.transpose()).cwiseAbs().maxCoeff() <= 1e-12, Errc::AsymmetricMatrix, "R not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
    require(es.eigenvalues().minCoeff() > 0.0, Errc::InvalidArgument, "R not positive definite");
    LagrangianSpec l;
    l.kind_ = LagrangianKind::QuadraticWeighted;
    l.d_ = static_cast<int>(R.rows());
    l.R_ = R;
    l.Rinv_ = R.inverse();
    l.modulus_ = es.eigenvalues().minCoeff();
    l.bounds_ = {0.0, 0.0, 1.0 / es.eigenvalues().minCoeff()};
    return l;
  }

  static LagrangianSpec custom(int d, CustomLagrangian fns, double convexity_modulus, DerivativeBounds b) {
    require(static_cast<bool>(fns.value) && static_cast<bool>(fns.grad_a), Errc::InvalidArgument,
            "custom Lagrangian needs value and grad_a");
    require(convexity_modulus > 0.0, Errc::InvalidArgument, "convexity modulus must be positive");
    LagrangianSpec l;
    l.kind_ = LagrangianKind::Custom;
    l.d_ = d;
    l.custom_ = std::move(fns);
    l.modulus_ = convexity_modulus;
    l.bounds_ = b;
    return l;
  }

  LagrangianKind kind() const { return kind_; }
  int dim() const { return d_; }
  double convexity_modulus() const { return modulus_; }
  const DerivativeBounds& bounds() const { return bounds_; }
  const Eigen::MatrixXd& weight() const { return R_; }
  /// R of a quadratic action (identity for the plain kind).
  Eigen::MatrixXd weight_matrix() const {
    if (kind_ == LagrangianKind::Quadratic) return Eigen::MatrixXd::Identity(d_, d_);
    require(kind_ == LagrangianKind::QuadraticWeighted, Errc::NonLqFunctional, "action is not quadratic");
    return R_;
  }
  bool is_quadratic() const { return kind_ == LagrangianKind::Quadratic; }

  double value(const double* x, const double* a) const {
    switch (kind_) {
      case LagrangianKind::Quadratic: {
        double s = 0.0;
        for (int k = 0; k < d_; ++k) s += a[k] * a[k];
        return 0.5 * s;
      }
      case LagrangianKind::QuadraticWeighted: {
        Eigen::Map<const Eigen::VectorXd> av(a, d_);
        return 0.5 * av.dot(R_ * av);
      }
      case LagrangianKind::Custom: return custom_.value(x, a);
    }
    return 0.0;
  }

  void grad_x(const double* x, const double* a, double* out) const {
    if (kind_ == LagrangianKind::Custom && custom_.grad_x) {
      custom_.grad_x(x, a, out);
      return;
    }
    for (int k = 0; k < d_; ++k) out[k] = 0.0;
  }

  /// H(x,p) = sup_a (-a.p - L(x,a)); writes the maximizing a (= -D_p H) to a_star.
  double hamiltonian(const double* x, const double* p, double* a_star) const {
    switch (kind_) {
      case LagrangianKind::Quadratic: {
        double s = 0.0;
        for (int k = 0; k < d_; ++k) {
          a_star[k] = -p[k];
          s += p[k] * p[k];
        }
        return 0.5 * s;
      }
      case LagrangianKind::QuadraticWeighted: {
        Eigen::Map<const Eigen::VectorXd> pv(p, d_);
        Eigen::VectorXd a = -(Rinv_ * pv);
        for (int k = 0; k < d_; ++k) a_star[k] = a[k];
        return 0.5 * pv.dot(Rinv_ * pv);
      }
      case LagrangianKind::Custom: return custom_hamiltonian(x, p, a_star);
    }
    return 0.0;
  }

  HamiltonianValue eval(const std::vector<double>& x, const std::vector<double>& p) const {
    require(static_cast<int>(x.size()) == d_ && static_cast<int>(p.size()) == d_, Errc::DimensionMismatch,
            "hamiltonian_eval dimension");
    HamiltonianValue hv;
    hv.minimizer.resize(d_);
    hv.value = hamiltonian(x.data(), p.data(), hv.minimizer.data());
    return hv;
  }

  std::string kind_name() const {
    switch (kind_) {
      case LagrangianKind::Quadratic: return "quadratic";
      case LagrangianKind::QuadraticWeighted: return "weighted";
      case LagrangianKind::Custom: return "custom";
    }
    return "?";
  }

  std::string label;  ///< free-form tag (used for named custom families)

 private:
  // psi(a) = a.p + L(x,a) is strictly convex; its minimizer is a*.
  double psi(const double* x, const double* p, const double* a) const {
    double s = custom_.value(x, a);
    for (int k = 0; k < d_; ++k) s += a[k] * p[k];
    return s;
  }

  void custom_hessian(const double* x, const double* a, Eigen::MatrixXd& h) const {
    h.resize(d_, d_);
    if (custom_.hess_aa) {
      custom_.hess_aa(x, a, h.data());
      h = 0.5 * (h + h.transpose()).eval();
      return;
    }
    std::vector<double> ap(a, a + d_), gp(d_), gm(d_);
    for (int k = 0; k < d_; ++k) {
      const double e = 1e-6 * std::max(1.0, std::abs(a[k]));
      ap[k] = a[k] + e;
      custom_.grad_a(x, ap.data(), gp.data());
      ap[k] = a[k] - e;
      custom_.grad_a(x, ap.data(), gm.data());
      ap[k] = a[k];
      for (int j = 0; j < d_; ++j) h(j, k) = (gp[j] - gm[j]) / (2.0 * e);
    }
    h = 0.5 * (h + h.transpose()).eval();
  }

  double custom_hamiltonian(const double* x, const double* p, double* a_star) const {
    constexpr double kTol = 1e-10;
    Eigen::VectorXd a(d_), g(d_);
    for (int k = 0; k < d_; ++k) a[k] = -p[k] / modulus_;
    Eigen::MatrixXd h;
    bool ok = false;
    for (int it = 0; it < 100; ++it) {
      custom_.grad_a(x, a.data(), g.data());
      for (int k = 0; k < d_; ++k) g[k] += p[k];
      if (g.norm() <= kTol) {
        ok = true;
        break;
      }
      custom_hessian(x, a.data(), h);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
      Eigen::VectorXd step = ldlt.solve(g);
      const double f0 = psi(x, p, a.data());
      double t = 1.0;
      Eigen::VectorXd trial = a - step;
      while (psi(x, p, trial.data()) > f0 + 1e-14 * std::abs(f0) && t > 1e-8) {
        t *= 0.5;
        trial = a - t * step;
      }
      if (t <= 1e-8) break;
      a = trial;
      if (!a.allFinite() || a.norm() > 1e8) break;
    }
    if (!ok) {
      golden_coordinate_descent(x, p, a);
      custom_.grad_a(x, a.data(), g.data());
      for (int k = 0; k < d_; ++k) g[k] += p[k];
      if (!a.allFinite() || a.norm() > 1e8 || g.norm() > 1e-6)
        fail(Errc::InnerOptimizerDiverged, "inner sup did not converge");
    }
    for (int k = 0; k < d_; ++k) a_star[k] = a[k];
    return -psi(x, p, a.data());
  }

  void golden_coordinate_descent(const double* x, const double* p, Eigen::VectorXd& a) const {
    if (!a.allFinite()) a.setZero();
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int sweep = 0; sweep < 200; ++sweep) {
      double moved = 0.0;
      for (int k = 0; k < d_; ++k) {
        auto f = [&](double v) {
          Eigen::VectorXd b = a;
          b[k] = v;
          return psi(x, p, b.data());
        };
        double width = 1.0;
        const double c = a[k];
        while (width < 1e8 && (f(c - width) < f(c) || f(c + width) < f(c))) width *= 2.0;
        double lo = c - width, hi = c + width;
        double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
        double f1 = f(x1), f2 = f(x2);
        while (hi - lo > 1e-12 * std::max(1.0, std::abs(c))) {
          if (f1 < f2) {
            hi = x2; x2 = x1; f2 = f1;
            x1 = hi - gr * (hi - lo); f1 = f(x1);
          } else {
            lo = x1; x1 = x2; f1 = f2;
            x2 = lo + gr * (hi - lo); f2 = f(x2);
          }
        }
        const double nv = 0.5 * (lo + hi);
        moved = std::max(moved, std::abs(nv - a[k]));
        a[k] = nv;
      }
      if (moved < 1e-10) return;
    }
  }

  LagrangianKind kind_ = LagrangianKind::Quadratic;
  int d_ = 1;
  Eigen::MatrixXd R_, Rinv_;
  CustomLagrangian custom_;
  double modulus_ = 1.0;
  DerivativeBounds bounds_;
};

inline HamiltonianValue hamiltonian_eval(const LagrangianSpec& l, const std::vector<double>& x,
                                         const std::vector<double>& p) {
  return l.eval(x, p);
}

// ---------------------------------------------------------------------------
// Interaction graphs
// ---------------------------------------------------------------------------

/// Adjacency of the circulant m-regular graph on n vertices (offsets +-1..+-m/2,
/// plus the antipodal offset when m is odd).
inline Eigen::MatrixXd circulant_adjacency(int n, int m) {
  require(n >= 2 && m >= 1 && m < n, Errc::InvalidArgument, "circulant graph needs 1 <= m < n");
  require(m % 2 == 0 || n % 2 == 0, Errc::InvalidArgument, "odd degree needs even n");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int o = 1; o <= m / 2; ++o) {
      A(i, (i + o) % n) = 1.0;
      A(i, (i - o + n) % n) = 1.0;
    }
    if (m % 2 == 1) A(i, (i + n / 2) % n) = 1.0;
  }
  return A;
}

inline Eigen::MatrixXd complete_adjacency(int n) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Ones(n, n);
  A.diagonal().setZero();
  return A;
}

inline bool is_doubly_stochastic(const Eigen::MatrixXd& J, double tol = 1e-12) {
  if (J.rows() == 0) return false;
  for (int i = 0; i < J.rows(); ++i)
    if (std::abs(J.row(i).sum() - 1.0) > tol) return false;
  return true;
}

inline void validate_interaction(const Eigen::MatrixXd& J) {
  require(J.rows() == J.cols(), Errc::DimensionMismatch, "J must be square");
  for (int i = 0; i < J.rows(); ++i) {
    require(J(i, i) == 0.0, Errc::NonzeroDiagonal, "J has a nonzero diagonal entry");
    for (int j = 0; j < J.cols(); ++j) {
      require(J(i, j) >= 0.0, Errc::NegativeEntry, "J has a negative entry");
      require(std::abs(J(i, j) - J(j, i)) <= 1e-12, Errc::AsymmetricMatrix, "J is not symmetric");
    }
  }
}

// ---------------------------------------------------------------------------
// Costs
// ---------------------------------------------------------------------------

enum class CostKind { Separable, PairwiseGraph, MeanField, Custom };

/// How the pair term of a mean-field functional is read off the empirical
/// measure: including the diagonal (plain empirical measure) or over distinct pairs.
enum class PairNormalization { Empirical, DistinctPairs };

struct CustomCost {
  std::function<double(const double* x)> value;
  std::function<void(const double* x, double* grad)> gradient;
  std::function<void(const double* x, int i, int j, double* block)> hessian_block;
  std::optional<double> spectral_bound;  ///< declared C with n D^2 <= C I
  std::optional<Eigen::MatrixXd> cross_norms;
  std::optional<double> cross_sup;
};

struct CrossTable {
  Eigen::MatrixXd norms;  ///< entry (i,j), i<j: sup |D_ij .| (Frobenius)
  bool estimated = false; ///< sampled lower estimate rather than closed form
  double sum_squares() const {
    double s = 0.0;
    for (int i = 0; i < norms.rows(); ++i)
      for (int j = i + 1; j < norms.cols(); ++j) s += norms(i, j) * norms(i, j);
    return s;
  }
};

/// Structured cost
///   (1/n) sum_i f_i(x^i) + (1/n) sum_{i!=j} J_ij g(x^i - x^j) + (c/2)|mean(x)|^2 + const
/// which covers separable, graph-pairwise and pairwise mean-field costs; or a black box.
class CostSpec {
 public:
  static CostSpec zero(int n, int d) { return separable(n, d, Atom::zero()); }

  static CostSpec separable(int n, int d, const Atom& f) {
    return separable(n, d, std::vector<Atom>(static_cast<std::size_t>(n), f));
  }

  static CostSpec separable(int n, int d, std::vector<Atom> f) {
    require(static_cast<int>(f.size()) == n, Errc::DimensionMismatch, "one atom per agent");
    CostSpec c(CostKind::Separable, n, d);
    c.own_ = std::move(f);
    return c;
  }

  static CostSpec pairwise(int n, int d, const Atom& g1, const Atom& g2, const Eigen::MatrixXd& J) {
    require(J.rows() == n, Errc::DimensionMismatch, "J must be n x n");
    validate_interaction(J);
    CostSpec c(CostKind::PairwiseGraph, n, d);
    c.own_.assign(static_cast<std::size_t>(n), g1);
    c.pair_ = g2;
    c.J_ = J;
    return c;
  }

  /// <m, g1> + <m (x) m, g2(x - y)> + (c/2)|<m, x>|^2 read on the empirical measure.
  static CostSpec mean_field(int n, int d, const Atom& g1, const Atom& g2, double mean_coef,
                             PairNormalization norm) {
    CostSpec c(CostKind::MeanField, n, d);
    c.own_.assign(static_cast<std::size_t>(n), g1);
    c.pair_ = g2;
    c.mean_coef_ = mean_coef;
    c.norm_ = norm;
    c.J_ = Eigen::MatrixXd::Zero(n, n);
    if (n > 1) {
      const double w = norm == PairNormalization::Empirical ? 1.0 / n : 1.0 / (n - 1);
      c.J_ = w * complete_adjacency(n);
    }
    if (norm == PairNormalization::Empirical) {
      std::vector<double> z(static_cast<std::size_t>(d), 0.0);
      c.constant_ = g2.value(z.data(), d) / n;
    }
    return c;
  }

  static CostSpec custom(int n, int d, CustomCost fns) {
    require(static_cast<bool>(fns.value) && static_cast<bool>(fns.gradient), Errc::InvalidArgument,
            "custom cost needs value and gradient");
    CostSpec c(CostKind::Custom, n, d);
    c.custom_ = std::move(fns);
    return c;
  }

  CostKind kind() const { return kind_; }
  int agents() const { return n_; }
  int dim() const { return d_; }
  const std::vector<Atom>& own() const { return own_; }
  const Atom& pair() const { return pair_; }
  const Eigen::MatrixXd& interaction() const { return J_; }
  double mean_coef() const { return mean_coef_; }
  double constant() const { return constant_; }
  PairNormalization normalization() const { return norm_; }
  const CustomCost& custom_fns() const { return custom_; }
  bool is_structured() const { return kind_ != CostKind::Custom; }

  bool doubly_stochastic() const { return kind_ != CostKind::Custom && J_.size() > 0 && is_doubly_stochastic(J_); }

  bool is_separable() const {
    if (kind_ == CostKind::Custom) {
      return custom_.cross_norms && custom_.cross_norms->cwiseAbs().maxCoeff() == 0.0;
    }
    return mean_coef_ == 0.0 && (pair_.is_zero() || J_.size() == 0 || J_.cwiseAbs().maxCoeff() == 0.0);
  }

  bool is_zero() const {
    if (kind_ == CostKind::Custom) return false;
    if (!is_separable() || constant_ != 0.0) return false;
    for (const auto& a : own_) if (!a.is_zero()) return false;
    return true;
  }

  double value(const double* x) const {
    if (kind_ == CostKind::Custom) return custom_.value(x);
    const double inv_n = 1.0 / n_;
    double s = 0.0;
    for (int i = 0; i < n_; ++i) s += own_[i].value(x + i * d_, d_);
    s *= inv_n;
    if (!pair_.is_zero()) {
      std::vector<double> u(d_);
      double p = 0.0;
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j) {
          if (i == j || J_(i, j) == 0.0) continue;
          for (int k = 0; k < d_; ++k) u[k] = x[i * d_ + k] - x[j * d_ + k];
          p += J_(i, j) * pair_.value(u.data(), d_);
        }
      s += inv_n * p;
    }
    if (mean_coef_ != 0.0) {
      double m2 = 0.0;
      for (int k = 0; k < d_; ++k) {
        double mk = 0.0;
        for (int i = 0; i < n_; ++i) mk += x[i * d_ + k];
        mk *= inv_n;
        m2 += mk * mk;
      }
      s += 0.5 * mean_coef_ * m2;
    }
    return s + constant_;
  }

  double value(const std::vector<double>& x) const { return value(x.data()); }

  /// Full gradient, n*d entries.
  void gradient(const double* x, double* g) const {
    if (kind_ == CostKind::Custom) {
      custom_.gradient(x, g);
      return;
    }
    const double inv_n = 1.0 / n_;
    std::vector<double> tmp(d_), u(d_);
    for (int i = 0; i < n_; ++i) {
      own_[i].gradient(x + i * d_, d_, tmp.data());
      for (int k = 0; k < d_; ++k) g[i * d_ + k] = inv_n * tmp[k];
    }
    if (!pair_.is_zero()) {
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j) {
          if (i == j || J_(i, j) == 0.0) continue;
          for (int k = 0; k < d_; ++k) u[k] = x[i * d_ + k] - x[j * d_ + k];
          pair_.gradient(u.data(), d_, tmp.data());
          for (int k = 0; k < d_; ++k) {
            g[i * d_ + k] += inv_n * J_(i, j) * tmp[k];
            g[j * d_ + k] -= inv_n * J_(i, j) * tmp[k];
          }
        }
    }
    if (mean_coef_ != 0.0) {
      for (int k = 0; k < d_; ++k) {
        double mk = 0.0;
        for (int i = 0; i < n_; ++i) mk += x[i * d_ + k];
        mk *= inv_n;
        for (int i = 0; i < n_; ++i) g[i * d_ + k] += mean_coef_ * mk * inv_n;
      }
    }
  }

  /// Block D_{x^i x^j} (row-major d x d).
  void hessian_block(const double* x, int i, int j, double* h) const {
    if (kind_ == CostKind::Custom) {
      if (custom_.hessian_block) {
        custom_.hessian_block(x, i, j, h);
        return;
      }
      numeric_hessian_block(x, i, j, h);
      return;
    }
    const double inv_n = 1.0 / n_;
    const int dd = d_ * d_;
    std::vector<double> tmp(dd), u(d_);
    for (int k = 0; k < dd; ++k) h[k] = 0.0;
    if (i == j) {
      own_[i].hessian(x + i * d_, d_, tmp.data());
      for (int k = 0; k < dd; ++k) h[k] = inv_n * tmp[k];
      if (!pair_.is_zero()) {
        for (int l = 0; l < n_; ++l) {
          if (l == i) continue;
          const double w = J_(i, l) + J_(l, i);
          if (w == 0.0) continue;
          for (int k = 0; k < d_; ++k) u[k] = x[i * d_ + k] - x[l * d_ + k];
          pair_.hessian(u.data(), d_, tmp.data());
          for (int k = 0; k < dd; ++k) h[k] += inv_n * w * tmp[k];
        }
      }
    } else if (!pair_.is_zero()) {
      const double w = J_(i, j) + J_(j, i);
      if (w != 0.0) {
        for (int k = 0; k < d_; ++k) u[k] = x[i * d_ + k] - x[j * d_ + k];
        pair_.hessian(u.data(), d_, tmp.data());
        for (int k = 0; k < dd; ++k) h[k] = -inv_n * w * tmp[k];
      }
    }
    if (mean_coef_ != 0.0)
      for (int k = 0; k < d_; ++k) h[k * d_ + k] += mean_coef_ * inv_n * inv_n;
  }

  Eigen::MatrixXd hessian(const double* x) const {
    const int D = n_ * d_;
    Eigen::MatrixXd H(D, D);
    std::vector<double> blk(d_ * d_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) {
        hessian_block(x, i, j, blk.data());
        for (int a = 0; a < d_; ++a)
          for (int b = 0; b < d_; ++b) H(i * d_ + a, j * d_ + b) = blk[a * d_ + b];
      }
    return H;
  }

  /// Constant C with n D^2 <= C I everywhere.
  double spectral_bound() const {
    if (kind_ == CostKind::Custom) {
      if (!custom_.spectral_bound) fail(Errc::MissingBound, "custom cost without declared spectral bound");
      return *custom_.spectral_bound;
    }
    double own_sup = 0.0;
    for (const auto& a : own_) own_sup = std::max(own_sup, a.hessian_sup_op());
    double rmax = 0.0;
    for (int i = 0; i < J_.rows(); ++i) rmax = std::max(rmax, J_.row(i).sum());
    return own_sup + 4.0 * rmax * pair_.hessian_sup_op() + std::max(mean_coef_, 0.0);
  }

  bool has_spectral_bound() const { return kind_ != CostKind::Custom || custom_.spectral_bound.has_value(); }

  /// sup |D^2 g| for the pair atom (Frobenius, matches cross_norms).
  double pair_hessian_sup() const { return pair_.hessian_sup_frobenius(d_); }

  std::string kind_name() const {
    switch (kind_) {
      case CostKind::Separable: return "separable";
      case CostKind::PairwiseGraph: return "pairwise";
      case CostKind::MeanField: return "meanfield";
      case CostKind::Custom: return "custom";
    }
    return "?";
  }

 private:
  CostSpec(CostKind k, int n, int d) : kind_(k), n_(n), d_(d) {
    require(n >= 1 && d >= 1, Errc::InvalidArgument, "cost needs n >= 1 and d >= 1");
    J_ = Eigen::MatrixXd::Zero(n, n);
  }

  void numeric_hessian_block(const double* x, int i, int j, double* h) const {
    const int D = n_ * d_;
    std::vector<double> xp(x, x + D), gp(D), gm(D);
    for (int b = 0; b < d_; ++b) {
      const int col = j * d_ + b;
      const double e = 1e-5 * std::max(1.0, std::abs(x[col]));
      xp[col] = x[col] + e;
      custom_.gradient(xp.data(), gp.data());
      xp[col] = x[col] - e;
      custom_.gradient(xp.data(), gm.data());
      xp[col] = x[col];
      for (int a = 0; a < d_; ++a) h[a * d_ + b] = (gp[i * d_ + a] - gm[i * d_ + a]) / (2.0 * e);
    }
  }

  CostKind kind_;
  int n_;
  int d_;
  std::vector<Atom> own_;
  Atom pair_;
  Eigen::MatrixXd J_;
  double mean_coef_ = 0.0;
  double constant_ = 0.0;
  PairNormalization norm_ = PairNormalization::Empirical;
  CustomCost custom_;
};

/// sup-norm table of the cross blocks D_ij (i < j).
inline CrossTable cross_derivative_table(const CostSpec& cost, int n) {
  require(cost.agents() == n, Errc::DimensionMismatch, "cost agent count");
  const int d = cost.dim();
  CrossTable t;
  t.norms = Eigen::MatrixXd::Zero(n, n);
  if (cost.is_structured()) {
    const double g2 = cost.pair_hessian_sup();
    const double mean_part = std::abs(cost.mean_coef()) * std::sqrt(static_cast<double>(d)) / (double(n) * n);
    const auto& J = cost.interaction();
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        double v = (J(i, j) + J(j, i)) * g2 / n + mean_part;
        if (cost.pair().is_zero() && cost.mean_coef() == 0.0) v = 0.0;
        t.norms(i, j) = t.norms(j, i) = v;
      }
    return t;
  }
  if (cost.custom_fns().cross_norms) {
    t.norms = *cost.custom_fns().cross_norms;
    return t;
  }
  // Sampled sup over expanding Gaussian clouds.
  t.estimated = true;
  KeyedRng rng(0xC1055u);
  std::vector<double> x(static_cast<std::size_t>(n * d)), blk(static_cast<std::size_t>(d * d));
  std::vector<double> level_max;
  for (int level = 0; level < 4; ++level) {
    const double radius = std::ldexp(1.0, level);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int s = 0; s < 256; ++s) {
      rng.normals(static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(level), 0, Stream::Auxiliary,
                  x.data(), n * d);
      for (double& v : x) v *= radius;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          cost.hessian_block(x.data(), i, j, blk.data());
          double f = 0.0;
          for (double b : blk) f += b * b;
          m(i, j) = std::max(m(i, j), std::sqrt(f));
        }
    }
    t.norms = t.norms.cwiseMax(m);
    level_max.push_back(m.maxCoeff());
  }
  const auto k = level_max.size();
  if (level_max[k - 2] > 0.0 && level_max[k - 1] > 1.5 * level_max[k - 2] && level_max[k - 2] > 1.5 * level_max[k - 3])
    fail(Errc::UnboundedHessian, "sampled cross norms keep growing with the cloud radius");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) t.norms(i, j) = t.norms(j, i);
  return t;
}

// ---------------------------------------------------------------------------
// Problems
// ---------------------------------------------------------------------------

struct ControlProblem {
  std::string name;
  int n = 1;
  int d = 1;
  double T = 1.0;
  std::vector<LagrangianSpec> lagrangians;  ///< one shared entry or n entries
  CostSpec F = CostSpec::zero(1, 1);
  CostSpec G = CostSpec::zero(1, 1);
  bool convex_flag = false;

  const LagrangianSpec& lagrangian(int i) const {
    return lagrangians.size() == 1 ? lagrangians.front() : lagrangians[static_cast<std::size_t>(i)];
  }

  bool all_quadratic() const {
    for (const auto& l : lagrangians) if (!l.is_quadratic()) return false;
    return true;
  }

  bool cole_hopf_case() const { return all_quadratic() && F.is_zero(); }
  bool separable() const { return F.is_separable() && G.is_separable(); }

  /// Identical data for every agent and a cost invariant under a transitive
  /// group of relabelings (circulant J). Marginals then coincide at the optimum.
  bool exchangeable() const {
    if (lagrangians.size() != 1) return false;
    auto circulant_ok = [&](const CostSpec& c) {
      if (!c.is_structured()) return false;
      for (int i = 1; i < n; ++i)
        if (c.own()[i].kind != c.own()[0].kind || c.own()[i].scale != c.own()[0].scale ||
            c.own()[i].coef != c.own()[0].coef)
          return false;
      const auto& J = c.interaction();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (J(i, j) != J(0, (j - i + n) % n)) return false;
      return true;
    };
    return circulant_ok(F) && circulant_ok(G);
  }

  void validate() const {
    require(n >= 1 && d >= 1 && T > 0.0, Errc::InvalidArgument, "need n >= 1, d >= 1, T > 0");
    require(lagrangians.size() == 1 || static_cast<int>(lagrangians.size()) == n, Errc::DimensionMismatch,
            "one shared Lagrangian or one per agent");
    for (const auto& l : lagrangians) require(l.dim() == d, Errc::DimensionMismatch, "Lagrangian dimension");
    require(F.agents() == n && F.dim() == d && G.agents() == n && G.dim() == d, Errc::DimensionMismatch,
            "cost dimensions");
    if (convex_flag) {
      KeyedRng rng(0x5EEDu);
      std::vector<double> x(static_cast<std::size_t>(n * d));
      for (int s = 0; s < 16; ++s) {
        rng.normals(static_cast<std::uint32_t>(s), 0, 0, Stream::Auxiliary, x.data(), n * d);
        for (double& v : x) v *= 2.0;
        for (const CostSpec* c : {&F, &G}) {
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c->hessian(x.data()));
          require(es.eigenvalues().minCoeff() >= -1e-9, Errc::InvalidArgument,
                  "convexity asserted but a cost Hessian is not positive semidefinite");
        }
      }
    }
  }
};

/// F^n(x) = sum F1(x^i)/n + sum J_ij F2(x^i - x^j)/n and likewise G^n.
inline ControlProblem build_hetero_problem(const Atom& G1, const Atom& G2, const Atom& F1, const Atom& F2,
                                           const Eigen::MatrixXd& J, const LagrangianSpec& lagrangian,
                                           double T) {
  validate_interaction(J);
  const int n = static_cast<int>(J.rows());
  const int d = lagrangian.dim();
  ControlProblem p;
  p.name = "hetero";
  p.n = n;
  p.d = d;
  p.T = T;
  p.lagrangians = {lagrangian};
  p.F = CostSpec::pairwise(n, d, F1, F2, J);
  p.G = CostSpec::pairwise(n, d, G1, G2, J);
  p.convex_flag = true;
  return p;
}

}  // namespace distgap
