#pragma once

// Quadratic Wasserstein distances between equal-weight samples and between
// histograms on a line.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "distgap/error.hpp"

namespace distgap {

struct TransportResult {
  double cost = 0.0;            ///< W2^2
  bool exact = true;
  double regularization = 0.0;  ///< entropic parameter when not exact
  int iterations = 0;
};

/// Exact minimum-cost assignment (Hungarian, O(N^3)); returns the mean cost.
inline double assignment_cost(const Eigen::MatrixXd& C) {
  const int N = static_cast<int>(C.rows());
  require(C.cols() == N, Errc::DimensionMismatch, "assignment needs a square cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(N + 1, 0.0), v(N + 1, 0.0), minv(N + 1);
  std::vector<int> p(N + 1, 0), way(N + 1, 0);
  std::vector<char> used(N + 1);
  for (int i = 1; i <= N; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= N; ++j) {
        if (used[j]) continue;
        const double cur = C(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= N; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= N; ++j) total += C(p[j] - 1, j - 1);
  return total / N;
}

/// Log-domain Sinkhorn between uniform marginals; returns <plan, C>.
inline TransportResult sinkhorn_cost(const Eigen::MatrixXd& C, double rel_eps = 1e-3, int max_iter = 5000,
                                     double tol = 1e-9) {
  const int N = static_cast<int>(C.rows()), M = static_cast<int>(C.cols());
  std::vector<double> all(C.data(), C.data() + C.size());
  std::nth_element(all.begin(), all.begin() + all.size() / 2, all.end());
  const double scale = std::max(all[all.size() / 2], 1e-300);
  const double eps = rel_eps * scale;
  const double la = -std::log(static_cast<double>(N)), lb = -std::log(static_cast<double>(M));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(N), g = Eigen::VectorXd::Zero(M);
  TransportResult r;
  r.exact = false;
  r.regularization = eps;
  auto lse_row = [&](int i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < M; ++j) m = std::max(m, (g[j] - C(i, j)) / eps + lb);
    double s = 0.0;
    for (int j = 0; j < M; ++j) s += std::exp((g[j] - C(i, j)) / eps + lb - m);
    return m + std::log(s);
  };
  auto lse_col = [&](int j) {
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < N; ++i) m = std::max(m, (f[i] - C(i, j)) / eps + la);
    double s = 0.0;
    for (int i = 0; i < N; ++i) s += std::exp((f[i] - C(i, j)) / eps + la - m);
    return m + std::log(s);
  };
  for (int it = 0; it < max_iter; ++it) {
    for (int i = 0; i < N; ++i) f[i] = -eps * lse_row(i);
    for (int j = 0; j < M; ++j) g[j] = -eps * lse_col(j);
    r.iterations = it + 1;
    if (it % 10 == 9) {
      double err = 0.0;
      for (int i = 0; i < N; ++i) err += std::abs(std::exp(la + f[i] / eps + lse_row(i)) - std::exp(la));
      if (err < tol) break;
    }
  }
  double cost = 0.0;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < M; ++j) cost += std::exp((f[i] + g[j] - C(i, j)) / eps + la + lb) * C(i, j);
  r.cost = cost;
  return r;
}

/// W2^2 from a cost matrix between two equal-size clouds.
inline TransportResult transport_from_costs(const Eigen::MatrixXd& C, int exact_limit = 256) {
  TransportResult r;
  if (C.rows() <= exact_limit) {
    r.cost = assignment_cost(C);
    return r;
  }
  return sinkhorn_cost(C);
}

/// W2^2 between equal-weight samples (rows of `dim` coordinates).
inline TransportResult wasserstein2_squared(const std::vector<double>& a, const std::vector<double>& b, int dim,
                                            int exact_limit = 256) {
  require(dim >= 1 && a.size() % dim == 0 && b.size() % dim == 0, Errc::DimensionMismatch, "sample dimension");
  std::size_t Na = a.size() / dim, Nb = b.size() / dim;
  const std::size_t N = std::min(Na, Nb);
  require(N >= 1, Errc::InvalidArgument, "empty sample");
  TransportResult r;
  if (dim == 1) {
    std::vector<double> x(a.begin(), a.begin() + N), y(b.begin(), b.begin() + N);
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double s = 0.0;
    for (std::size_t k = 0; k < N; ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
    r.cost = s / N;
    return r;
  }
  Eigen::MatrixXd C(N, N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (int k = 0; k < dim; ++k) s += (a[i * dim + k] - b[j * dim + k]) * (a[i * dim + k] - b[j * dim + k]);
      C(i, j) = s;
    }
  return transport_from_costs(C, exact_limit);
}

inline double wasserstein2(const std::vector<double>& a, const std::vector<double>& b, int dim) {
  return std::sqrt(std::max(0.0, wasserstein2_squared(a, b, dim).cost));
}

/// Exact W2^2 between two discrete laws on the same sorted nodes.
inline double w2_squared_histograms(const std::vector<double>& nodes, const std::vector<double>& a,
                                    const std::vector<double>& b) {
  const std::size_t K = nodes.size();
  double ta = 0.0, tb = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    ta += a[k];
    tb += b[k];
  }
  std::size_t i = 0, j = 0;
  double ra = K ? a[0] / ta : 0.0, rb = K ? b[0] / tb : 0.0, s = 0.0;
  while (i < K && j < K) {
    if (ra <= 0.0) {
      if (++i < K) ra = a[i] / ta;
      continue;
    }
    if (rb <= 0.0) {
      if (++j < K) rb = b[j] / tb;
      continue;
    }
    const double m = std::min(ra, rb);
    const double dx = nodes[i] - nodes[j];
    s += m * dx * dx;
    ra -= m;
    rb -= m;
    if (ra <= 1e-300 && rb <= 1e-300) {
      ra = rb = 0.0;
    }
  }
  return s;
}

}  // namespace distgap
