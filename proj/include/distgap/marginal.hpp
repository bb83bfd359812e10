#pragma once

// Initial laws and time-indexed per-agent marginal flows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "distgap/error.hpp"
#include "distgap/grid.hpp"
#include "distgap/quadrature.hpp"
#include "distgap/rng.hpp"

namespace distgap {

enum class LawKind { Dirac, Gaussian, Particles };

class InitialLaw {
 public:
  static InitialLaw dirac(std::vector<double> x) {
    InitialLaw l;
    l.kind_ = LawKind::Dirac;
    l.d_ = static_cast<int>(x.size());
    l.mean_ = std::move(x);
    l.var_.assign(l.mean_.size(), 0.0);
    return l;
  }

  /// Independent coordinates with the given means and variances.
  static InitialLaw gaussian(std::vector<double> mean, std::vector<double> var) {
    require(mean.size() == var.size() && !mean.empty(), Errc::DimensionMismatch, "gaussian law sizes");
    for (double v : var) require(v >= 0.0, Errc::InvalidArgument, "negative variance");
    InitialLaw l;
    l.kind_ = LawKind::Gaussian;
    l.d_ = static_cast<int>(mean.size());
    l.mean_ = std::move(mean);
    l.var_ = std::move(var);
    return l;
  }

  static InitialLaw particles(int d, std::vector<double> pts, std::vector<double> w = {}) {
    require(d >= 1 && !pts.empty() && pts.size() % static_cast<std::size_t>(d) == 0, Errc::DimensionMismatch,
            "particle law sizes");
    const std::size_t P = pts.size() / static_cast<std::size_t>(d);
    if (w.empty()) w.assign(P, 1.0 / static_cast<double>(P));
    require(w.size() == P, Errc::DimensionMismatch, "particle weights");
    double tot = 0.0;
    for (double v : w) {
      require(v >= 0.0, Errc::InvalidArgument, "negative particle weight");
      tot += v;
    }
    for (double& v : w) v /= tot;
    InitialLaw l;
    l.kind_ = LawKind::Particles;
    l.d_ = d;
    l.points_ = std::move(pts);
    l.weights_ = std::move(w);
    l.mean_.assign(static_cast<std::size_t>(d), 0.0);
    l.var_.assign(static_cast<std::size_t>(d), 0.0);
    for (std::size_t p = 0; p < P; ++p)
      for (int k = 0; k < d; ++k) l.mean_[k] += l.weights_[p] * l.points_[p * d + k];
    for (std::size_t p = 0; p < P; ++p)
      for (int k = 0; k < d; ++k) {
        const double e = l.points_[p * d + k] - l.mean_[k];
        l.var_[k] += l.weights_[p] * e * e;
      }
    std::vector<double> cum(P);
    double c = 0.0;
    for (std::size_t p = 0; p < P; ++p) cum[p] = (c += l.weights_[p]);
    l.cumulative_ = std::move(cum);
    return l;
  }

  LawKind kind() const { return kind_; }
  int dim() const { return d_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& variance() const { return var_; }
  const std::vector<double>& points() const { return points_; }
  const std::vector<double>& weights() const { return weights_; }

  double max_variance() const { return var_.empty() ? 0.0 : *std::max_element(var_.begin(), var_.end()); }

  /// Poincare constant: zero for Diracs, the largest variance for Gaussians.
  /// Particle clouds need a declared value.
  std::optional<double> poincare_constant() const {
    if (declared_poincare_) return declared_poincare_;
    if (kind_ == LawKind::Dirac) return 0.0;
    if (kind_ == LawKind::Gaussian) return max_variance();
    return std::nullopt;
  }

  /// Constant c in W2^2(mu, nu) <= c H(nu | mu).
  std::optional<double> t2_constant() const {
    if (declared_t2_) return declared_t2_;
    if (kind_ == LawKind::Dirac) return 0.0;
    if (kind_ == LawKind::Gaussian) return 2.0 * max_variance();
    return std::nullopt;
  }

  void declare_constants(double poincare, double t2) {
    declared_poincare_ = poincare;
    declared_t2_ = t2;
  }

  /// Per-dimension interval holding all but a negligible tail.
  std::pair<double, double> effective_range(int k) const {
    if (kind_ == LawKind::Particles) {
      double lo = points_[k], hi = points_[k];
      for (std::size_t p = 0; p < weights_.size(); ++p) {
        lo = std::min(lo, points_[p * d_ + k]);
        hi = std::max(hi, points_[p * d_ + k]);
      }
      return {lo, hi};
    }
    const double s = 6.0 * std::sqrt(var_[k]);
    return {mean_[k] - s, mean_[k] + s};
  }

  void sample(const KeyedRng& rng, std::uint32_t particle, std::uint32_t agent, double* out) const {
    switch (kind_) {
      case LawKind::Dirac:
        for (int k = 0; k < d_; ++k) out[k] = mean_[k];
        return;
      case LawKind::Gaussian:
        rng.normals(particle, agent, 0, Stream::Initial, out, d_);
        for (int k = 0; k < d_; ++k) out[k] = mean_[k] + std::sqrt(var_[k]) * out[k];
        return;
      case LawKind::Particles: {
        const double u = rng.uniform(particle, agent, 1, Stream::Initial);
        auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
        std::size_t p = static_cast<std::size_t>(it - cumulative_.begin());
        if (p >= weights_.size()) p = weights_.size() - 1;
        for (int k = 0; k < d_; ++k) out[k] = points_[p * d_ + k];
        return;
      }
    }
  }

  /// Weighted points reproducing the law: the cloud itself, the Dirac, or a
  /// tensor Gauss-Hermite rule with q nodes per axis.
  void quadrature(int q, std::vector<double>& pts, std::vector<double>& w) const {
    pts.clear();
    w.clear();
    if (kind_ == LawKind::Dirac || (kind_ == LawKind::Gaussian && max_variance() == 0.0)) {
      pts = mean_;
      w = {1.0};
      return;
    }
    if (kind_ == LawKind::Particles) {
      pts = points_;
      w = weights_;
      return;
    }
    const GaussRule& r = gauss_hermite(q);
    std::size_t total = 1;
    for (int k = 0; k < d_; ++k) total *= static_cast<std::size_t>(q);
    pts.resize(total * d_);
    w.resize(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t rem = idx;
      double ww = 1.0;
      for (int k = d_ - 1; k >= 0; --k) {
        const std::size_t j = rem % static_cast<std::size_t>(q);
        rem /= static_cast<std::size_t>(q);
        pts[idx * d_ + k] = mean_[k] + std::sqrt(var_[k]) * r.nodes[j];
        ww *= r.weights[j];
      }
      w[idx] = ww;
    }
  }

  /// Node weights on a d-dimensional grid (cloud-in-cell of the quadrature points).
  std::vector<double> on_grid(const TensorGrid& g, int q = 32) const {
    require(g.rank() == d_, Errc::DimensionMismatch, "law dimension vs grid");
    std::vector<double> pts, w;
    if (kind_ == LawKind::Gaussian && max_variance() > 0.0) {
      // Density at nodes, normalized; exact cell masses are not needed at grid scale.
      std::vector<double> out(g.size(), 0.0), x(static_cast<std::size_t>(d_));
      double tot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        g.point(i, x.data());
        double e = 0.0;
        for (int k = 0; k < d_; ++k) {
          if (var_[k] == 0.0) continue;
          e += (x[k] - mean_[k]) * (x[k] - mean_[k]) / var_[k];
        }
        out[i] = std::exp(-0.5 * e);
        tot += out[i];
      }
      bool degenerate = false;
      for (int k = 0; k < d_; ++k) degenerate = degenerate || var_[k] < 4.0 * g.axis(k).h() * g.axis(k).h();
      if (!degenerate && tot > 0.0) {
        for (double& v : out) v /= tot;
        return out;
      }
    }
    quadrature(q, pts, w);
    std::vector<double> out(g.size(), 0.0);
    for (std::size_t p = 0; p < w.size(); ++p) g.deposit(pts.data() + p * d_, w[p], out.data());
    return out;
  }

  std::string describe() const {
    std::ostringstream os;
    os << (kind_ == LawKind::Dirac ? "dirac" : kind_ == LawKind::Gaussian ? "gaussian" : "particles");
    return os.str();
  }

 private:
  LawKind kind_ = LawKind::Dirac;
  int d_ = 1;
  std::vector<double> mean_, var_, points_, weights_, cumulative_;
  std::optional<double> declared_poincare_, declared_t2_;
};

/// Per-agent, per-time marginals as node weights on each agent's grid.
struct MarginalFlow {
  int n = 0;
  int d = 1;
  std::vector<double> times;
  std::vector<TensorGrid> supports;  ///< one per agent, or one shared
  std::vector<std::vector<std::vector<double>>> weights;  ///< [agent][time][node]

  const TensorGrid& grid(int agent) const {
    return supports.size() == 1 ? supports.front() : supports[static_cast<std::size_t>(agent)];
  }

  const std::vector<double>& at(int agent, int k) const {
    return weights[static_cast<std::size_t>(agent)][static_cast<std::size_t>(k)];
  }

  std::vector<double> mean(int agent, int k) const {
    std::vector<double> m(static_cast<std::size_t>(d), 0.0), x(static_cast<std::size_t>(d));
    const auto& w = at(agent, k);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] == 0.0) continue;
      grid(agent).point(i, x.data());
      for (int c = 0; c < d; ++c) m[c] += w[i] * x[c];
    }
    return m;
  }

  void check() const {
    for (int i = 0; i < n; ++i)
      for (std::size_t k = 0; k < times.size(); ++k) {
        double s = 0.0;
        for (double v : weights[i][k]) {
          require(v >= -1e-14, Errc::InvalidArgument, "negative flow weight");
          s += v;
        }
        require(std::abs(s - 1.0) <= 1e-12, Errc::InvalidArgument, "flow weights do not sum to one");
      }
  }

  /// CSV: agent,time,bin_center[_k...],weight (only nonzero weights).
  void write_csv(std::ostream& os, int time_stride = 1) const {
    os << "agent,time";
    if (d == 1) {
      os << ",bin_center";
    } else {
      for (int c = 0; c < d; ++c) os << ",bin_center_" << c;
    }
    os << ",weight\r\n";
    os << std::setprecision(17);
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int i = 0; i < n; ++i)
      for (std::size_t k = 0; k < times.size(); k += static_cast<std::size_t>(time_stride))
        for (std::size_t j = 0; j < weights[i][k].size(); ++j) {
          const double w = weights[i][k][j];
          if (w <= 0.0) continue;
          grid(i).point(j, x.data());
          os << i << ',' << times[k];
          for (double v : x) os << ',' << v;
          os << ',' << w << "\r\n";
        }
  }
};

}  // namespace distgap
