#pragma once

// Problem builders shared by the test files.

#include <cmath>
#include <vector>

#include "distgap.hpp"

namespace distgap::fixtures {

inline ControlProblem make_problem(int n, CostSpec F, CostSpec G, double T = 1.0) {
  ControlProblem p;
  p.name = "test";
  p.n = n;
  p.d = 1;
  p.T = T;
  p.lagrangians = {LagrangianSpec::quadratic(1)};
  p.F = std::move(F);
  p.G = std::move(G);
  p.convex_flag = true;
  return p;
}

/// Two agents, G(x) = sqrt(1 + (x1 - x2)^2) / 2 + 0.1 (x1 + x2), F = 0.
inline ControlProblem benchmark() {
  return make_problem(2, CostSpec::zero(2, 1),
                      CostSpec::pairwise(2, 1, Atom::linear({0.2}), Atom::sqrt1p(0.5), complete_adjacency(2)));
}

/// G(x) = (c / n) sum x^i.
inline ControlProblem linear_terminal(int n, double c) {
  return make_problem(n, CostSpec::zero(n, 1), CostSpec::separable(n, 1, Atom::linear({c})));
}

/// n = 1, G(x) = q x^2 / 2.
inline ControlProblem scalar_lq(double q, double T = 1.0) {
  return make_problem(1, CostSpec::zero(1, 1), CostSpec::separable(1, 1, Atom::quadratic(q)), T);
}

inline std::vector<InitialLaw> diracs(int n, double x = 0.0) { return std::vector<InitialLaw>(n, InitialLaw::dirac({x})); }

/// Scalar Riccati for n = 1, G = q x^2/2, F = 0: V(t,x) = q x^2 / (2(1 + q(T-t))) + log(1 + q(T-t)) / 2.
inline double scalar_lq_value(double q, double T, double t, double x) {
  const double s = 1.0 + q * (T - t);
  return q * x * x / (2.0 * s) + 0.5 * std::log(s);
}

}  // namespace distgap::fixtures
