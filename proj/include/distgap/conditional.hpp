#pragma once

// Expectations of costs against products of per-agent node weights on a
// shared grid: full product expectations, conditional expectations given one
// agent's state, and the linear derivative of pairwise mean-field functionals.

#include <complex>
#include <memory>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "distgap/error.hpp"
#include "distgap/grid.hpp"
#include "distgap/model.hpp"
#include "distgap/rng.hpp"

namespace distgap {

/// Discrete convolution (k * m)(x_a) = sum_b k(x_a - x_b) m_b on a uniform
/// grid of rank 1 or 2, by zero-padded FFT.
class GridConvolver {
 public:
  GridConvolver() = default;

  /// `kernel(u, out)` writes `ncomp` values of the kernel at displacement u.
  template <class Kernel>
  GridConvolver(const TensorGrid& g, int ncomp, Kernel&& kernel) : ncomp_(ncomp) {
    rank_ = g.rank();
    require(rank_ == 1 || rank_ == 2, Errc::InvalidArgument, "kernel convolution supports rank 1 or 2");
    for (int a = 0; a < rank_; ++a) {
      N_[a] = g.axis(a).points;
      h_[a] = g.axis(a).h();
      P_[a] = 1;
      while (P_[a] < 2 * N_[a] - 1) P_[a] *= 2;
    }
    if (rank_ == 1) {
      N_[1] = 1;
      P_[1] = 1;
    }
    const std::size_t PP = static_cast<std::size_t>(P_[0]) * P_[1];
    spectra_.assign(static_cast<std::size_t>(ncomp), std::vector<std::complex<double>>(PP));
    std::vector<double> u(2), val(static_cast<std::size_t>(ncomp));
    std::vector<std::vector<std::complex<double>>> tables(static_cast<std::size_t>(ncomp),
                                                          std::vector<std::complex<double>>(PP, 0.0));
    // Displacements -(N-1)..(N-1) stored circularly.
    for (int i = -(N_[0] - 1); i <= N_[0] - 1; ++i)
      for (int j = -(N_[1] - 1); j <= N_[1] - 1; ++j) {
        u[0] = i * h_[0];
        if (rank_ == 2) u[1] = j * h_[1];
        kernel(u.data(), val.data());
        const std::size_t a = static_cast<std::size_t>((i + P_[0]) % P_[0]);
        const std::size_t b = static_cast<std::size_t>((j + P_[1]) % P_[1]);
        for (int c = 0; c < ncomp; ++c) tables[c][a * P_[1] + b] = val[c];
      }
    for (int c = 0; c < ncomp; ++c) {
      spectra_[c] = tables[c];
      transform(spectra_[c], false);
    }
  }

  bool empty() const { return ncomp_ == 0; }
  int components() const { return ncomp_; }

  /// out[node * ncomp + c] = sum_b k_c(x_node - x_b) m_b.
  void apply(const std::vector<double>& m, std::vector<double>& out) const {
    const std::size_t PP = static_cast<std::size_t>(P_[0]) * P_[1];
    std::vector<std::complex<double>> buf(PP, 0.0);
    for (int i = 0; i < N_[0]; ++i)
      for (int j = 0; j < N_[1]; ++j) buf[static_cast<std::size_t>(i) * P_[1] + j] = m[static_cast<std::size_t>(i) * N_[1] + j];
    transform(buf, false);
    const std::size_t M = static_cast<std::size_t>(N_[0]) * N_[1];
    out.assign(M * static_cast<std::size_t>(ncomp_), 0.0);
    std::vector<std::complex<double>> prod(PP);
    for (int c = 0; c < ncomp_; ++c) {
      for (std::size_t k = 0; k < PP; ++k) prod[k] = buf[k] * spectra_[c][k];
      transform(prod, true);
      for (int i = 0; i < N_[0]; ++i)
        for (int j = 0; j < N_[1]; ++j)
          out[(static_cast<std::size_t>(i) * N_[1] + j) * ncomp_ + c] = prod[static_cast<std::size_t>(i) * P_[1] + j].real();
    }
  }

 private:
  void transform(std::vector<std::complex<double>>& a, bool inverse) const {
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> line, res;
    for (int i = 0; i < P_[0] && P_[1] > 1; ++i) {
      line.assign(a.begin() + static_cast<std::ptrdiff_t>(i) * P_[1], a.begin() + static_cast<std::ptrdiff_t>(i + 1) * P_[1]);
      if (inverse)
        fft.inv(res, line);
      else
        fft.fwd(res, line);
      std::copy(res.begin(), res.end(), a.begin() + static_cast<std::ptrdiff_t>(i) * P_[1]);
    }
    line.resize(static_cast<std::size_t>(P_[0]));
    for (int j = 0; j < P_[1]; ++j) {
      for (int i = 0; i < P_[0]; ++i) line[i] = a[static_cast<std::size_t>(i) * P_[1] + j];
      if (inverse)
        fft.inv(res, line);
      else
        fft.fwd(res, line);
      for (int i = 0; i < P_[0]; ++i) a[static_cast<std::size_t>(i) * P_[1] + j] = res[i];
    }
  }

  int rank_ = 1;
  int ncomp_ = 0;
  int N_[2] = {1, 1};
  int P_[2] = {1, 1};
  double h_[2] = {1.0, 1.0};
  std::vector<std::vector<std::complex<double>>> spectra_;
};

using AgentWeights = std::vector<const std::vector<double>*>;

/// Expectations of a cost on (R^d)^n against independent agents whose laws are
/// node weights on a shared d-dimensional grid.
class ConditionalCost {
 public:
  ConditionalCost(const CostSpec& cost, const TensorGrid& grid, int custom_samples = 64,
                  std::uint64_t seed = 0xC0DDu)
      : cost_(&cost), grid_(grid), n_(cost.agents()), d_(cost.dim()), samples_(custom_samples), rng_(seed) {
    require(grid.rank() == d_, Errc::DimensionMismatch, "grid rank must equal the agent dimension");
    const std::size_t M = grid.size();
    std::vector<double> x(static_cast<std::size_t>(d_));
    if (cost.is_structured()) {
      own_.assign(static_cast<std::size_t>(n_), std::vector<double>(M));
      own_grad_.assign(static_cast<std::size_t>(n_), std::vector<double>(M * d_));
      for (int i = 0; i < n_; ++i)
        for (std::size_t k = 0; k < M; ++k) {
          grid.point(k, x.data());
          own_[i][k] = cost.own()[i].value(x.data(), d_);
          cost.own()[i].gradient(x.data(), d_, own_grad_[i].data() + k * d_);
        }
      const Atom& g = cost.pair();
      if (!g.is_zero() && cost.interaction().cwiseAbs().maxCoeff() > 0.0) {
        const int d = d_;
        // Value and gradient of g at +u and at -u (the reflection).
        pair_ = std::make_unique<GridConvolver>(grid, 2 + 2 * d, [&g, d](const double* u, double* out) {
          std::vector<double> mu(u, u + d);
          for (double& v : mu) v = -v;
          out[0] = g.value(u, d);
          out[1] = g.value(mu.data(), d);
          g.gradient(u, d, out + 2);
          g.gradient(mu.data(), d, out + 2 + d);
        });
      }
      x_.assign(M * d_, 0.0);
      for (std::size_t k = 0; k < M; ++k) grid.point(k, x_.data() + k * d_);
    }
  }

  int agents() const { return n_; }

  /// E[C] under the product of the given weights.
  double product_expectation(const AgentWeights& m, std::uint32_t level = 0) const {
    check(m);
    if (!cost_->is_structured()) return custom_product(m, level);
    const std::size_t M = grid_.size();
    double s = 0.0;
    for (int j = 0; j < n_; ++j) s += dot(*m[j], own_[j]);
    s /= n_;
    if (pair_) {
      const auto& J = cost_->interaction();
      std::vector<double> conv;
      for (int k = 0; k < n_; ++k) {
        bool needed = false;
        for (int j = 0; j < n_; ++j) needed = needed || (j != k && J(j, k) != 0.0);
        if (!needed) continue;
        pair_->apply(*m[k], conv);
        for (int j = 0; j < n_; ++j) {
          if (j == k || J(j, k) == 0.0) continue;
          double e = 0.0;
          for (std::size_t a = 0; a < M; ++a) e += (*m[j])[a] * conv[a * pair_->components()];
          s += J(j, k) * e / n_;
        }
      }
    }
    if (cost_->mean_coef() != 0.0) {
      double sq = 0.0, var = 0.0;
      for (int c = 0; c < d_; ++c) {
        double mu = 0.0;
        for (int j = 0; j < n_; ++j) {
          const double mj = moment(*m[j], c, 1);
          mu += mj;
          var += moment(*m[j], c, 2) - mj * mj;
        }
        sq += mu * mu;
      }
      s += 0.5 * cost_->mean_coef() * (sq + var) / (double(n_) * n_);
    }
    return s + cost_->constant();
  }

  /// out[node] = E[C | x^i = node] given the other agents' weights.
  /// `total` is the product expectation when already known (NaN to recompute).
  void conditional(int i, const AgentWeights& m, std::vector<double>& out,
                   double total = std::numeric_limits<double>::quiet_NaN(), std::uint32_t level = 0) const {
    check(m);
    if (!cost_->is_structured()) {
      custom_conditional(i, m, out, nullptr, level);
      return;
    }
    std::vector<double> h;
    own_part(i, m, h, nullptr);
    if (std::isnan(total)) total = product_expectation(m, level);
    const double shift = total - dot(*m[i], h);
    out.resize(h.size());
    for (std::size_t k = 0; k < h.size(); ++k) out[k] = h[k] + shift;
  }

  /// out[node * d + c] = E[D_{x^i} C | x^i = node].
  void conditional_gradient(int i, const AgentWeights& m, std::vector<double>& out, std::uint32_t level = 0) const {
    check(m);
    if (!cost_->is_structured()) {
      std::vector<double> dummy;
      custom_conditional(i, m, dummy, &out, level);
      return;
    }
    std::vector<double> h;
    own_part(i, m, h, &out);
  }

 private:
  void check(const AgentWeights& m) const {
    require(static_cast<int>(m.size()) == n_, Errc::DimensionMismatch, "one weight vector per agent");
    for (const auto* w : m) require(w && w->size() == grid_.size(), Errc::DimensionMismatch, "weights vs grid");
  }

  static double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
  }

  double moment(const std::vector<double>& m, int c, int power) const {
    double s = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double x = x_[k * d_ + c];
      s += m[k] * (power == 1 ? x : x * x);
    }
    return s;
  }

  /// Every term of C that involves agent i, averaged over the others, as a function of x^i.
  void own_part(int i, const AgentWeights& m, std::vector<double>& h, std::vector<double>* grad) const {
    const std::size_t M = grid_.size();
    const double inv_n = 1.0 / n_;
    h.resize(M);
    for (std::size_t k = 0; k < M; ++k) h[k] = inv_n * own_[i][k];
    if (grad) {
      grad->resize(M * d_);
      for (std::size_t k = 0; k < M * d_; ++k) (*grad)[k] = inv_n * own_grad_[i][k];
    }
    if (pair_) {
      const auto& J = cost_->interaction();
      const int nc = pair_->components();
      std::vector<double> conv;
      for (int j = 0; j < n_; ++j) {
        if (j == i || (J(i, j) == 0.0 && J(j, i) == 0.0)) continue;
        pair_->apply(*m[j], conv);
        const double a = inv_n * J(i, j), b = inv_n * J(j, i);
        for (std::size_t k = 0; k < M; ++k) {
          const double* c = conv.data() + k * nc;
          h[k] += a * c[0] + b * c[1];
          if (grad)
            for (int q = 0; q < d_; ++q) (*grad)[k * d_ + q] += a * c[2 + q] - b * c[2 + d_ + q];
        }
      }
    }
    if (cost_->mean_coef() != 0.0) {
      const double c = cost_->mean_coef() * inv_n * inv_n;
      std::vector<double> rest(static_cast<std::size_t>(d_), 0.0);
      for (int j = 0; j < n_; ++j)
        if (j != i)
          for (int q = 0; q < d_; ++q) rest[q] += moment(*m[j], q, 1);
      for (std::size_t k = 0; k < M; ++k)
        for (int q = 0; q < d_; ++q) {
          const double x = x_[k * d_ + q];
          h[k] += 0.5 * c * (x * x + 2.0 * x * rest[q]);
          if (grad) (*grad)[k * d_ + q] += c * (x + rest[q]);
        }
    }
  }

  // Black-box costs: common samples of the other agents, drawn per level.
  void draw_others(const AgentWeights& m, std::uint32_t level, std::vector<double>& states) const {
    const std::size_t M = grid_.size();
    states.assign(static_cast<std::size_t>(samples_) * n_ * d_, 0.0);
    std::vector<double> cum(M), x(static_cast<std::size_t>(d_));
    for (int j = 0; j < n_; ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < M; ++k) cum[k] = (c += (*m[j])[k]);
      for (int s = 0; s < samples_; ++s) {
        const double u = rng_.uniform(static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(j), level,
                                      Stream::Auxiliary) * c;
        std::size_t k = static_cast<std::size_t>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        if (k >= M) k = M - 1;
        grid_.point(k, x.data());
        for (int q = 0; q < d_; ++q) states[(static_cast<std::size_t>(s) * n_ + j) * d_ + q] = x[q];
      }
    }
  }

  double custom_product(const AgentWeights& m, std::uint32_t level) const {
    std::vector<double> states;
    draw_others(m, level, states);
    double s = 0.0;
    for (int k = 0; k < samples_; ++k) s += cost_->value(states.data() + static_cast<std::size_t>(k) * n_ * d_);
    return s / samples_;
  }

  void custom_conditional(int i, const AgentWeights& m, std::vector<double>& out, std::vector<double>* grad,
                          std::uint32_t level) const {
    const std::size_t M = grid_.size();
    std::vector<double> states, x(static_cast<std::size_t>(d_)), g(static_cast<std::size_t>(n_ * d_));
    draw_others(m, level, states);
    out.assign(M, 0.0);
    if (grad) grad->assign(M * d_, 0.0);
    for (std::size_t k = 0; k < M; ++k) {
      grid_.point(k, x.data());
      for (int s = 0; s < samples_; ++s) {
        double* st = states.data() + static_cast<std::size_t>(s) * n_ * d_;
        for (int q = 0; q < d_; ++q) st[i * d_ + q] = x[q];
        out[k] += cost_->value(st) / samples_;
        if (grad) {
          cost_->gradient(st, g.data());
          for (int q = 0; q < d_; ++q) (*grad)[k * d_ + q] += g[i * d_ + q] / samples_;
        }
      }
    }
  }

  const CostSpec* cost_;
  TensorGrid grid_;
  int n_, d_;
  int samples_;
  KeyedRng rng_;
  std::vector<std::vector<double>> own_, own_grad_;
  std::vector<double> x_;
  std::unique_ptr<GridConvolver> pair_;
};

/// Functional <m, g1> + <m (x) m, g2(x - y)> + (c/2)|<m, x>|^2 of one law on a grid.
class PairFunctional {
 public:
  PairFunctional(const Atom& g1, const Atom& g2, double mean_coef, const TensorGrid& grid)
      : g1_(g1), g2_(g2), c_(mean_coef), grid_(grid), d_(grid.rank()) {
    const std::size_t M = grid.size();
    x_.resize(M * d_);
    f1_.resize(M);
    for (std::size_t k = 0; k < M; ++k) {
      grid.point(k, x_.data() + k * d_);
      f1_[k] = g1.value(x_.data() + k * d_, d_);
    }
    if (!g2.is_zero()) {
      const int d = d_;
      const Atom g = g2;
      conv_ = std::make_unique<GridConvolver>(grid, 2, [g, d](const double* u, double* out) {
        std::vector<double> mu(u, u + d);
        for (double& v : mu) v = -v;
        out[0] = g.value(u, d);
        out[1] = g.value(mu.data(), d);
      });
    }
  }

  static PairFunctional from_cost(const CostSpec& c, const TensorGrid& grid) {
    require(c.kind() == CostKind::MeanField || c.is_zero(), Errc::InvalidArgument, "needs a mean-field cost");
    if (c.is_zero()) return PairFunctional(Atom::zero(), Atom::zero(), 0.0, grid);
    return PairFunctional(c.own().front(), c.pair(), c.mean_coef(), grid);
  }

  double value(const std::vector<double>& m) const {
    double s = 0.0;
    const std::size_t M = grid_.size();
    for (std::size_t k = 0; k < M; ++k) s += m[k] * f1_[k];
    if (conv_) {
      std::vector<double> cv;
      conv_->apply(m, cv);
      for (std::size_t k = 0; k < M; ++k) s += m[k] * cv[2 * k];
    }
    if (c_ != 0.0) {
      const auto mu = mean(m);
      for (double v : mu) s += 0.5 * c_ * v * v;
    }
    return s;
  }

  /// Linear derivative at m, at every node.
  void derivative(const std::vector<double>& m, std::vector<double>& out) const {
    const std::size_t M = grid_.size();
    out = f1_;
    if (conv_) {
      std::vector<double> cv;
      conv_->apply(m, cv);
      for (std::size_t k = 0; k < M; ++k) out[k] += cv[2 * k] + cv[2 * k + 1];
    }
    if (c_ != 0.0) {
      const auto mu = mean(m);
      for (std::size_t k = 0; k < M; ++k)
        for (int q = 0; q < d_; ++q) out[k] += c_ * mu[q] * x_[k * d_ + q];
    }
  }

  bool is_zero() const { return g1_.is_zero() && g2_.is_zero() && c_ == 0.0; }

 private:
  std::vector<double> mean(const std::vector<double>& m) const {
    std::vector<double> mu(static_cast<std::size_t>(d_), 0.0);
    for (std::size_t k = 0; k < m.size(); ++k)
      for (int q = 0; q < d_; ++q) mu[q] += m[k] * x_[k * d_ + q];
    return mu;
  }

  Atom g1_, g2_;
  double c_;
  TensorGrid grid_;
  int d_;
  std::vector<double> x_, f1_;
  std::unique_ptr<GridConvolver> conv_;
};

}  // namespace distgap
