#pragma once

// Closed-form convex scalar functions on R^d with symbolic derivatives.

#include <cmath>
#include <string>
#include <vector>

#include "distgap/error.hpp"

namespace distgap {

enum class AtomKind { Zero, Linear, Quadratic, SqrtOnePlusSq, LogCosh };

inline const char* atom_name(AtomKind k) {
  switch (k) {
    case AtomKind::Zero: return "zero";
    case AtomKind::Linear: return "linear";
    case AtomKind::Quadratic: return "quadratic";
    case AtomKind::SqrtOnePlusSq: return "sqrt1p";
    case AtomKind::LogCosh: return "logcosh";
  }
  return "?";
}

inline AtomKind atom_from_name(const std::string& s) {
  if (s == "zero") return AtomKind::Zero;
  if (s == "linear") return AtomKind::Linear;
  if (s == "quadratic") return AtomKind::Quadratic;
  if (s == "sqrt1p") return AtomKind::SqrtOnePlusSq;
  if (s == "logcosh") return AtomKind::LogCosh;
  fail(Errc::SchemaError, "unknown atom '" + s + "'");
}

/// scale * phi(u) where phi is one of
///   linear     c.u
///   quadratic  |u|^2 / 2
///   sqrt1p     sqrt(1 + |u|^2)
///   logcosh    sum_k log cosh(u_k)
struct Atom {
  AtomKind kind = AtomKind::Zero;
  double scale = 1.0;
  std::vector<double> coef;  ///< linear coefficients (Linear only)

  static Atom zero() { return {}; }
  static Atom linear(std::vector<double> c) { return {AtomKind::Linear, 1.0, std::move(c)}; }
  static Atom quadratic(double s) { return {AtomKind::Quadratic, s, {}}; }
  static Atom sqrt1p(double s) { return {AtomKind::SqrtOnePlusSq, s, {}}; }
  static Atom logcosh(double s) { return {AtomKind::LogCosh, s, {}}; }

  bool is_zero() const {
    if (kind == AtomKind::Zero || scale == 0.0) return true;
    if (kind == AtomKind::Linear) {
      for (double c : coef) if (c != 0.0) return false;
      return true;
    }
    return false;
  }

  bool is_even() const { return kind != AtomKind::Linear || is_zero(); }

  double value(const double* u, int d) const {
    switch (kind) {
      case AtomKind::Zero: return 0.0;
      case AtomKind::Linear: {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += coef_at(k) * u[k];
        return scale * s;
      }
      case AtomKind::Quadratic: return 0.5 * scale * norm2(u, d);
      case AtomKind::SqrtOnePlusSq: return scale * std::sqrt(1.0 + norm2(u, d));
      case AtomKind::LogCosh: {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += log_cosh(u[k]);
        return scale * s;
      }
    }
    return 0.0;
  }

  void gradient(const double* u, int d, double* g) const {
    switch (kind) {
      case AtomKind::Zero:
        for (int k = 0; k < d; ++k) g[k] = 0.0;
        return;
      case AtomKind::Linear:
        for (int k = 0; k < d; ++k) g[k] = scale * coef_at(k);
        return;
      case AtomKind::Quadratic:
        for (int k = 0; k < d; ++k) g[k] = scale * u[k];
        return;
      case AtomKind::SqrtOnePlusSq: {
        const double r = std::sqrt(1.0 + norm2(u, d));
        for (int k = 0; k < d; ++k) g[k] = scale * u[k] / r;
        return;
      }
      case AtomKind::LogCosh:
        for (int k = 0; k < d; ++k) g[k] = scale * std::tanh(u[k]);
        return;
    }
  }

  /// Row-major d x d Hessian.
  void hessian(const double* u, int d, double* h) const {
    for (int k = 0; k < d * d; ++k) h[k] = 0.0;
    switch (kind) {
      case AtomKind::Zero:
      case AtomKind::Linear: return;
      case AtomKind::Quadratic:
        for (int k = 0; k < d; ++k) h[k * d + k] = scale;
        return;
      case AtomKind::SqrtOnePlusSq: {
        const double q = 1.0 + norm2(u, d);
        const double r3 = q * std::sqrt(q);
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b) h[a * d + b] = scale * ((a == b ? q : 0.0) - u[a] * u[b]) / r3;
        return;
      }
      case AtomKind::LogCosh:
        for (int k = 0; k < d; ++k) {
          const double c = std::cosh(u[k]);
          h[k * d + k] = scale / (c * c);
        }
        return;
    }
  }

  /// sup over u of the largest Hessian eigenvalue in absolute value.
  double hessian_sup_op() const {
    switch (kind) {
      case AtomKind::Zero:
      case AtomKind::Linear: return 0.0;
      default: return std::abs(scale);
    }
  }

  /// sup over u of the Frobenius norm of the Hessian (attained at u = 0).
  double hessian_sup_frobenius(int d) const { return hessian_sup_op() * std::sqrt(static_cast<double>(d)); }

  bool is_quadratic_form() const {
    return kind == AtomKind::Zero || kind == AtomKind::Quadratic || kind == AtomKind::Linear;
  }

 private:
  double coef_at(int k) const {
    if (coef.empty()) return 0.0;
    return k < static_cast<int>(coef.size()) ? coef[k] : coef.back();
  }

  static double norm2(const double* u, int d) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += u[k] * u[k];
    return s;
  }

  static double log_cosh(double x) {
    const double a = std::abs(x);
    return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
  }
};

}  // namespace distgap
