#include <gtest/gtest.h>

#include "support.hpp"

using namespace distgap;

namespace {

ControlProblem coupled(double T = 1.0) {
  auto p = fixtures::benchmark();
  p.T = T;
  p.F = CostSpec::pairwise(2, 1, Atom::zero(), Atom::logcosh(0.5), complete_adjacency(2));
  return p;
}

std::vector<InitialLaw> gaussians(int n) { return std::vector<InitialLaw>(n, InitialLaw::gaussian({0.0}, {0.3})); }

GapEstimate estimate(double v, double se) {
  GapEstimate g;
  g.value = v;
  g.stderr_ = se;
  return g;
}

}  // namespace

TEST(Ledger, SpectralConstantExample) {
  const auto c = make_ledger(2.0, 1.0, 0.5, 1.0, 0.0, 0.0, 1.0);
  EXPECT_EQ(c.C_S, 2.0);
}

TEST(Ledger, PoincareConstantLimit) {
  const auto c = make_ledger(1.7, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
  EXPECT_EQ(c.rate(), 0.0);
  EXPECT_DOUBLE_EQ(c.C_P, 1.7);
  // Continuous across the series switch.
  EXPECT_NEAR(poincare_growth(1.7, 1e-9), poincare_growth(1.7, 1e-7), 1e-6);
  EXPECT_NEAR(poincare_growth(1.0, 0.5), std::expm1(1.0), 1e-15);
}

TEST(Ledger, PointMassStartAddsNothing) {
  const auto p = coupled();
  const auto c = constants_ledger(p, fixtures::diracs(2));
  EXPECT_EQ(c.C_P_m, c.C_P);
  EXPECT_EQ(c.C_T2_m, 0.0);
  const auto g = constants_ledger(p, gaussians(2));
  EXPECT_GT(g.C_P_m, c.C_P);
}

TEST(Ledger, SpectralIdentityOnEveryConstruction) {
  for (double T : {0.3, 1.0, 2.5})
    for (double cg : {0.0, 0.7})
      for (double cf : {0.0, 1.3}) {
        const auto c = make_ledger(T, 1.0, cf, cg, 0.2, 0.0, 1.0);
        EXPECT_EQ(c.C_S, cg + T * (0.2 + cf));
      }
}

TEST(GeneralBound, ZeroForSeparableCosts) {
  const auto p = fixtures::make_problem(3, CostSpec::separable(3, 1, Atom::logcosh(1.0)),
                                        CostSpec::separable(3, 1, Atom::sqrt1p(1.0)));
  const auto c = constants_ledger(p, gaussians(3));
  EXPECT_EQ(gap_bound_general(c, cross_stats_sup(p), 3), 0.0);
  EXPECT_EQ(gap_bound_quadratic(p, c, cross_stats_sup(p)), 0.0);
  EXPECT_EQ(control_gap_bound(p, c).value, 0.0);
}

TEST(GeneralBound, SupNormDominatesSampledStatistics) {
  const auto p = coupled();
  SimConfig sc;
  sc.particles = 4000;
  sc.steps = 40;
  sc.store = StoreMode::Stride;
  sc.stride = 4;
  for (std::uint64_t seed : {1, 2, 3}) {
    sc.seed = seed;
    const auto e = euler_maruyama(Drift::zero(), gaussians(2), 1, sc);
    const auto s = cross_stats(p, e), u = cross_stats_sup(p);
    EXPECT_LE(s.G, u.G);
    for (double f : s.F) EXPECT_LE(f, u.F.front());
    const auto c = constants_ledger(p, gaussians(2));
    EXPECT_LE(gap_bound_general(c, s, 2), gap_bound_general(c, u, 2));
  }
}

TEST(QuadraticBound, PointStartReduction) {
  const auto p = fixtures::benchmark();
  const auto c = constants_ledger(p, fixtures::diracs(2));
  const auto s = cross_stats_sup(p);
  for (double t : {0.0, 0.4})
    EXPECT_NEAR(gap_bound_quadratic(p, c, s, t), 2 * (1 - t) * (1 - t) * s.G, 1e-15);
}

TEST(QuadraticBound, RejectsWeightedActions) {
  auto p = fixtures::benchmark();
  p.lagrangians = {LagrangianSpec::weighted(Eigen::MatrixXd::Constant(1, 1, 2.0))};
  const auto c = constants_ledger(p, fixtures::diracs(2));
  try {
    gap_bound_quadratic(p, c, cross_stats_sup(p));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NotQuadratic);
  }
}

TEST(HeteroBound, InverseInDegree) {
  const int n = 8;
  const auto c = make_ledger(1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.3, 0.3);
  std::vector<double> scaled;
  for (int m : {2, 4, 6}) scaled.push_back(m * gap_bound_hetero(circulant_adjacency(n, m) / double(m), 1.0, 0.5, c));
  EXPECT_NEAR(scaled[0], scaled[1], 1e-12 * scaled[0]);
  EXPECT_NEAR(scaled[1], scaled[2], 1e-12 * scaled[0]);
  EXPECT_EQ(gap_bound_hetero(Eigen::MatrixXd::Zero(n, n), 1.0, 0.5, c), 0.0);
}

TEST(HeteroBound, RingOverCompleteGraph) {
  const int n = 8;
  const auto c = make_ledger(1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.3, 0.3);
  const double ring = gap_bound_hetero(circulant_adjacency(n, 2) / 2.0, 1.0, 0.5, c);
  const double full = gap_bound_hetero(complete_adjacency(n) / double(n - 1), 1.0, 0.5, c);
  EXPECT_NEAR(ring / full, (n - 1) / 2.0, 1e-12);
}

TEST(HeteroBound, RequiresDoublyStochastic) {
  const auto c = make_ledger(1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0);
  try {
    gap_bound_hetero(complete_adjacency(4), 1.0, 0.0, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NotDoublyStochastic);
  }
}

TEST(MeanFieldBound, QuadraticInNorms) {
  const auto c = make_ledger(1.0, 1.0, 0.5, 1.0, 0.0, 0.0, 1.0, 0.3, 0.3);
  EXPECT_EQ(gap_bound_meanfield(0.0, 0.0, c, 10), 0.0);
  const double full = gap_bound_meanfield(2.0, 1.0, c, 10), half = gap_bound_meanfield(1.0, 0.5, c, 10);
  EXPECT_NEAR(full / half, 4.0, 1e-12);
  EXPECT_NEAR(gap_bound_meanfield(2.0, 1.0, c, 20), full / 2.0, 1e-15);
  try {
    gap_bound_meanfield(std::nullopt, 1.0, c, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingLionsBounds);
  }
}

TEST(Smallness, Examples) {
  auto s = smallness_check(1.0, 0.0, 0.0, 3.0);
  EXPECT_TRUE(s.passes);
  EXPECT_EQ(s.margin, 1.0);
  s = smallness_check(1.0, 1.0, 0.4, 1.0);
  EXPECT_TRUE(s.passes);
  EXPECT_NEAR(s.margin, 0.1, 1e-15);
  s = smallness_check(1.0, 1.0, 0.0, 2.0);
  EXPECT_FALSE(s.passes);
  EXPECT_EQ(s.margin, -1.0);
}

TEST(Bounds, NonnegativeAndNondecreasingInHorizon) {
  const int n = 8;
  const Eigen::MatrixXd J = circulant_adjacency(n, 2) / 2.0;
  std::vector<double> prev(7, 0.0);
  for (double T : {0.25, 0.5, 1.0, 1.5, 2.0}) {
    const auto p = coupled(T);
    const auto c = constants_ledger(p, gaussians(2));
    const auto s = cross_stats_sup(p);
    const std::vector<double> now{gap_bound_general(c, s, 2),
                                  gap_bound_quadratic(p, c, s),
                                  gap_bound_hetero(J, 1.0, 0.5, c),
                                  gap_bound_meanfield(2.0, 1.0, c, n),
                                  chaos_bound(c, gap_bound_general(c, s, 2), 2),
                                  control_gap_bound(p, c).value,
                                  c.C_t(0.0)};
    for (std::size_t k = 0; k < now.size(); ++k) {
      EXPECT_GE(now[k], 0.0) << k;
      EXPECT_GE(now[k], prev[k]) << "bound " << k << " at T=" << T;
    }
    prev = now;
  }
}

TEST(Compare, VerdictRules) {
  EXPECT_EQ(compare("x", estimate(0.5, 0.1), 1.0).verdict, Verdict::Holds);
  EXPECT_EQ(compare("x", estimate(1.0, 0.0), 1.0).verdict, Verdict::Holds);
  EXPECT_EQ(compare("x", estimate(1.2, 0.1), 1.0).verdict, Verdict::HoldsWithinCI);
  EXPECT_EQ(compare("x", estimate(1.4, 0.1), 1.0).verdict, Verdict::Violated);
  EXPECT_NEAR(compare("x", estimate(0.25, 0.0), 1.0).slack, 0.75, 1e-15);
}
