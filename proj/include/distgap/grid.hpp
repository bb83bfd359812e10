#pragma once

// Uniform tensor grids, tridiagonal solves and multilinear interpolation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "distgap/error.hpp"

namespace distgap {

struct Axis {
  double lo = -1.0;
  double hi = 1.0;
  int points = 5;

  double h() const { return (hi - lo) / (points - 1); }
  double node(int k) const { return lo + k * h(); }
};

class TensorGrid {
 public:
  TensorGrid() = default;
  explicit TensorGrid(std::vector<Axis> axes) : axes_(std::move(axes)) {
    strides_.assign(axes_.size(), 1);
    size_ = 1;
    for (std::size_t a = axes_.size(); a-- > 0;) {
      require(axes_[a].points >= 3 && axes_[a].lo < axes_[a].hi, Errc::InvalidArgument, "bad grid axis");
      strides_[a] = size_;
      size_ *= static_cast<std::size_t>(axes_[a].points);
    }
  }

  int rank() const { return static_cast<int>(axes_.size()); }
  std::size_t size() const { return size_; }
  const Axis& axis(int a) const { return axes_[static_cast<std::size_t>(a)]; }
  const std::vector<Axis>& axes() const { return axes_; }
  std::size_t stride(int a) const { return strides_[static_cast<std::size_t>(a)]; }

  int coord(std::size_t idx, int a) const {
    return static_cast<int>((idx / strides_[static_cast<std::size_t>(a)]) % static_cast<std::size_t>(axes_[a].points));
  }

  void point(std::size_t idx, double* x) const {
    for (int a = 0; a < rank(); ++a) x[a] = axes_[a].node(coord(idx, a));
  }

  /// Locate x on axis a: lower cell index and fractional offset, clamped.
  void locate(int a, double x, int& k, double& frac) const {
    const Axis& ax = axes_[static_cast<std::size_t>(a)];
    const double s = (x - ax.lo) / ax.h();
    if (s <= 0.0) {
      k = 0;
      frac = 0.0;
      return;
    }
    if (s >= ax.points - 1) {
      k = ax.points - 2;
      frac = 1.0;
      return;
    }
    k = static_cast<int>(s);
    if (k > ax.points - 2) k = ax.points - 2;
    frac = s - k;
  }

  /// Multilinear interpolation of `ncomp` interleaved components stored per node
  /// (data[idx * ncomp + c]) at x, clamped to the box.
  void interpolate(const double* data, int ncomp, const double* x, double* out) const {
    const int r = rank();
    std::array<int, 8> k{};
    std::array<double, 8> f{};
    for (int a = 0; a < r; ++a) locate(a, x[a], k[a], f[a]);
    for (int c = 0; c < ncomp; ++c) out[c] = 0.0;
    const int corners = 1 << r;
    for (int m = 0; m < corners; ++m) {
      double w = 1.0;
      std::size_t idx = 0;
      for (int a = 0; a < r; ++a) {
        const int bit = (m >> a) & 1;
        w *= bit ? f[a] : 1.0 - f[a];
        idx += static_cast<std::size_t>(k[a] + bit) * strides_[static_cast<std::size_t>(a)];
      }
      if (w == 0.0) continue;
      const double* p = data + idx * static_cast<std::size_t>(ncomp);
      for (int c = 0; c < ncomp; ++c) out[c] += w * p[c];
    }
  }

  /// Values are continued linearly past the box along each axis (edge slopes).
  double interpolate_extrapolated(const double* values, const double* x) const {
    const int r = rank();
    std::array<int, 8> k{};
    std::array<double, 8> f{};
    for (int a = 0; a < r; ++a) {
      const Axis& ax = axes_[static_cast<std::size_t>(a)];
      double s = (x[a] - ax.lo) / ax.h();
      int kk = static_cast<int>(std::floor(s));
      kk = std::clamp(kk, 0, ax.points - 2);
      k[a] = kk;
      f[a] = s - kk;
    }
    double v = 0.0;
    const int corners = 1 << r;
    for (int m = 0; m < corners; ++m) {
      double w = 1.0;
      std::size_t idx = 0;
      for (int a = 0; a < r; ++a) {
        const int bit = (m >> a) & 1;
        w *= bit ? f[a] : 1.0 - f[a];
        idx += static_cast<std::size_t>(k[a] + bit) * strides_[static_cast<std::size_t>(a)];
      }
      v += w * values[idx];
    }
    return v;
  }

  /// Cloud-in-cell deposit of mass w at x onto per-node weights.
  void deposit(const double* x, double w, double* weights) const {
    const int r = rank();
    std::array<int, 8> k{};
    std::array<double, 8> f{};
    for (int a = 0; a < r; ++a) locate(a, x[a], k[a], f[a]);
    const int corners = 1 << r;
    for (int m = 0; m < corners; ++m) {
      double c = w;
      std::size_t idx = 0;
      for (int a = 0; a < r; ++a) {
        const int bit = (m >> a) & 1;
        c *= bit ? f[a] : 1.0 - f[a];
        idx += static_cast<std::size_t>(k[a] + bit) * strides_[static_cast<std::size_t>(a)];
      }
      weights[idx] += c;
    }
  }

  bool contains(const double* x) const {
    for (int a = 0; a < rank(); ++a)
      if (x[a] < axes_[a].lo || x[a] > axes_[a].hi) return false;
    return true;
  }

 private:
  std::vector<Axis> axes_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

/// Solve a tridiagonal system in place (Thomas). lo[0] and up[n-1] are ignored.
inline void solve_tridiagonal(std::vector<double>& lo, std::vector<double>& di, std::vector<double>& up,
                              std::vector<double>& rhs) {
  const std::size_t n = di.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = lo[i] / di[i - 1];
    di[i] -= m * up[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= di[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - up[i] * rhs[i + 1]) / di[i];
}

}  // namespace distgap
