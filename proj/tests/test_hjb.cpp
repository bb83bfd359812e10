#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace distgap;

namespace {

int level_at(const ValueGrid& V, double t) {
  for (int s = 0; s < V.snapshots(); ++s)
    if (std::abs(V.times()[s] - t) < 1e-12) return s;
  return -1;
}

// G + shift(x). The solver reads only values, so the gradient is left unshifted.
CostSpec perturbed(const CostSpec& G, std::function<double(const double*)> shift) {
  CustomCost c;
  c.value = [G, shift](const double* x) { return G.value(x) + shift(x); };
  c.gradient = [G](const double* x, double* g) { G.gradient(x, g); };
  return CostSpec::custom(G.agents(), G.dim(), c);
}

// Boundary rows extrapolate linearly and are not monotone; stay 20% inside.
bool interior(const TensorGrid& g, std::size_t idx) {
  for (int a = 0; a < g.rank(); ++a) {
    const int j = g.coord(idx, a), N = g.axis(a).points;
    const int skip = (N - 1) / 5;
    if (j < skip || j > N - 1 - skip) return false;
  }
  return true;
}

GridSpec small_grid(const ControlProblem& p, int points = 61, int steps = 100) {
  return default_grid(p, fixtures::diracs(p.n), points, steps);
}

}  // namespace

TEST(FullHjb, TerminalLevelEqualsCost) {
  const auto p = fixtures::benchmark();
  const ValueGrid V = solve_full_hjb(p, small_grid(p));
  const int s = level_at(V, p.T);
  ASSERT_GE(s, 0);
  std::vector<double> x(2);
  for (std::size_t idx = 0; idx < V.grid().size(); idx += 7) {
    V.grid().point(idx, x.data());
    EXPECT_EQ(V.values(s)[idx], p.G.value(x.data()));
  }
}

TEST(FullHjb, LinearCostIsAffineInTime) {
  const double c = 0.6;
  const auto p = fixtures::linear_terminal(2, c);
  const ValueGrid V = solve_full_hjb(p, small_grid(p, 61, 200));
  std::vector<double> x(2);
  double worst = 0.0;
  for (int s = 0; s < V.snapshots(); s += 20)
    for (std::size_t idx = 0; idx < V.grid().size(); ++idx) {
      V.grid().point(idx, x.data());
      if (std::abs(x[0]) > 4.0 || std::abs(x[1]) > 4.0) continue;
      const double exact = p.G.value(x.data()) - c * c * (p.T - V.times()[s]) / 2.0;
      worst = std::max(worst, std::abs(V.values(s)[idx] - exact));
    }
  EXPECT_LT(worst, 1e-3);
}

TEST(FullHjb, ScalarQuadraticMatchesRiccati) {
  const double q = 1.0;
  const auto p = fixtures::scalar_lq(q);
  const ValueGrid V = solve_full_hjb(p, small_grid(p, 401, 400));
  for (int k = 0; k < 20; ++k) {
    const double t = 0.05 * k, x = -1.5 + 0.15 * k;
    EXPECT_NEAR(V.value(t, &x), fixtures::scalar_lq_value(q, 1.0, t, x), 1e-3) << "t=" << t << " x=" << x;
  }
}

TEST(FullHjb, AddingConstantShiftsValue) {
  const auto p = fixtures::benchmark();
  auto q = p;
  q.G = perturbed(p.G, [](const double*) { return 0.75; });
  q.convex_flag = false;
  const ValueGrid V = solve_full_hjb(p, small_grid(p, 41, 60));
  const ValueGrid W = solve_full_hjb(q, small_grid(p, 41, 60));
  double worst = 0.0;
  for (int s = 0; s < V.snapshots(); ++s)
    for (std::size_t idx = 0; idx < V.grid().size(); ++idx)
      worst = std::max(worst, std::abs(W.values(s)[idx] - V.values(s)[idx] - 0.75));
  EXPECT_LT(worst, 1e-10);
}

TEST(FullHjb, ComparisonUnderRaisedTerminalCost) {
  const auto p = fixtures::benchmark();
  const double eps = 0.05;
  for (int trial = 0; trial < 3; ++trial) {
    auto q = p;
    const double a = 1.0 + trial, b = 2.0 - 0.5 * trial;
    q.G = perturbed(p.G, [=](const double* x) { return eps * 0.5 * (1.0 + std::sin(a * x[0]) * std::cos(b * x[1])); });
    q.convex_flag = false;
    const ValueGrid V = solve_full_hjb(p, small_grid(p, 41, 60));
    const ValueGrid W = solve_full_hjb(q, small_grid(p, 41, 60));
    for (int s = 0; s < V.snapshots(); ++s)
      for (std::size_t idx = 0; idx < V.grid().size(); ++idx) {
        if (!interior(V.grid(), idx)) continue;
        const double d = W.values(s)[idx] - V.values(s)[idx];
        EXPECT_GE(d, -1e-12);
        EXPECT_LE(d, eps + 1e-12);
      }
  }
}

TEST(FullHjb, GradientCacheMatchesCentralDifferences) {
  const auto p = fixtures::benchmark();
  const ValueGrid V = solve_full_hjb(p, small_grid(p));
  const TensorGrid& g = V.grid();
  double worst = 0.0;
  for (int s = 0; s < V.snapshots(); s += 10)
    for (std::size_t idx = 0; idx < g.size(); ++idx)
      for (int a = 0; a < 2; ++a) {
        const int j = g.coord(idx, a);
        if (j == 0 || j == g.axis(a).points - 1) continue;
        const std::size_t st = g.stride(a);
        const double fd = (V.values(s)[idx + st] - V.values(s)[idx - st]) / (2.0 * g.axis(a).h());
        worst = std::max(worst, std::abs(V.gradients(s)[idx * 2 + a] - fd));
      }
  EXPECT_LE(worst, 1e-12);
}

TEST(FullHjb, RejectsOversizedGrids) {
  const int n = 5;
  const auto p = fixtures::linear_terminal(n, 0.1);
  try {
    solve_full_hjb(p, default_grid(p, fixtures::diracs(n), 11, 10));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::GridTooLarge);
  }
  const auto q = fixtures::benchmark();
  GridSpec g = small_grid(q);
  g.memory_cap_bytes = 1024;
  EXPECT_THROW(solve_full_hjb(q, g), Error);
}

TEST(FullHjb, BlobRoundTrip) {
  const auto p = fixtures::benchmark();
  const ValueGrid V = solve_full_hjb(p, small_grid(p, 21, 20));
  std::stringstream ss;
  V.write_blob(ss);
  const ValueGrid W = ValueGrid::read_blob(ss);
  ASSERT_EQ(W.snapshots(), V.snapshots());
  for (int s = 0; s < V.snapshots(); ++s) EXPECT_EQ(W.values(s), V.values(s));
  EXPECT_EQ(V.sidecar()["rank"], 2);
}

TEST(Lift, DiracIsPointValue) {
  const auto p = fixtures::benchmark();
  const ValueGrid V = solve_full_hjb(p, small_grid(p));
  const std::vector<InitialLaw> m0{InitialLaw::dirac({0.3}), InitialLaw::dirac({-0.45})};
  const double x[2] = {0.3, -0.45};
  EXPECT_NEAR(lift_value(V, m0), V.value(0.0, x), 1e-12);
}

TEST(Lift, LinearValueOverGaussians) {
  const double c = 0.6;
  const auto p = fixtures::linear_terminal(2, c);
  const std::vector<InitialLaw> m0{InitialLaw::gaussian({0.2}, {0.1}), InitialLaw::gaussian({-0.5}, {0.3})};
  const ValueGrid V = solve_full_hjb(p, default_grid(p, m0, 81, 100));
  EXPECT_NEAR(lift_value(V, m0), c * (0.2 - 0.5) / 2.0 - c * c / 2.0, 1e-3);
}

TEST(Lift, SymmetricInMarginalOrderUpToSplitting) {
  // Axis sweeps run in a fixed order, so exchange symmetry holds to O(dt).
  const auto p = fixtures::benchmark();
  const std::vector<InitialLaw> a{InitialLaw::gaussian({0.2}, {0.1}), InitialLaw::gaussian({-0.3}, {0.2})};
  const std::vector<InitialLaw> b{a[1], a[0]};
  std::vector<double> asym;
  for (int steps : {50, 100, 200}) {
    const ValueGrid V = solve_full_hjb(p, small_grid(p, 61, steps));
    asym.push_back(std::abs(lift_value(V, a) - lift_value(V, b)));
  }
  EXPECT_LT(asym[0], 1e-3);
  EXPECT_LT(asym[1], 0.7 * asym[0]);
  EXPECT_LT(asym[2], 0.7 * asym[1]);
}

TEST(Spectral, AffineValueHasFlatHessian) {
  const auto p = fixtures::linear_terminal(2, 0.6);
  const ValueGrid V = solve_full_hjb(p, small_grid(p));
  const auto r = check_spectral_sandwich(V, 0.0, 2);
  EXPECT_TRUE(r.holds());
  EXPECT_NEAR(r.min_eigenvalue, 0.0, 1e-6);
  EXPECT_NEAR(r.max_eigenvalue, 0.0, 1e-6);
}

TEST(Spectral, ScalarQuadraticBetweenZeroAndRiccati) {
  const double q = 1.0;
  const auto p = fixtures::scalar_lq(q);
  const ValueGrid V = solve_full_hjb(p, small_grid(p, 201, 200));
  const auto L = constants_ledger(p, fixtures::diracs(1));
  const auto r = check_spectral_sandwich(V, L.C_S, 1);
  EXPECT_TRUE(r.holds());
  EXPECT_NEAR(r.max_eigenvalue, q, 1e-2);
  EXPECT_NEAR(r.min_eigenvalue, q / (1.0 + q), 1e-2);
}

TEST(Spectral, CoupledBenchmarkWithinSlack) {
  const auto p = fixtures::benchmark();
  const ValueGrid V = solve_full_hjb(p, small_grid(p, 81, 160));
  const auto L = constants_ledger(p, fixtures::diracs(2));
  const auto r = check_spectral_sandwich(V, L.C_S, 2);
  EXPECT_TRUE(r.holds()) << r.violations.size() << " violations, min " << r.min_eigenvalue;
  EXPECT_GE(r.min_eigenvalue, -r.slack);
}
