#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace distgap;

namespace {

std::vector<double> random_weights(std::mt19937_64& gen, std::size_t M, double sparsity) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(M, 0.0);
  double s = 0.0;
  for (double& v : w) {
    v = u(gen) < sparsity ? 0.0 : u(gen);
    s += v;
  }
  if (s == 0.0) {
    w[M / 2] = 1.0;
    s = 1.0;
  }
  for (double& v : w) v /= s;
  return w;
}

Drift ou_drift(double k) {
  Drift d;
  d.mode = DriftMode::PerAgent;
  d.agent = [k](double, int, int, const double* x, double* out) { out[0] = -k * x[0]; };
  return d;
}

SimConfig config(std::size_t N, int steps, std::uint64_t seed) {
  SimConfig c;
  c.particles = N;
  c.steps = steps;
  c.seed = seed;
  c.store = StoreMode::Stride;
  c.stride = 5;
  return c;
}

}  // namespace

TEST(EqError, NonnegativeOnRandomSnapshots) {
  const auto p = fixtures::benchmark();
  const ValueGrid V = solve_full_hjb(p, default_grid(p, fixtures::diracs(2), 41, 40));
  const std::size_t M = V.grid().axis(0).points;
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> t(0.0, 1.0), sp(0.0, 0.95);
  for (int trial = 0; trial < 1000; ++trial) {
    const double s = sp(gen);
    const std::vector<std::vector<double>> w{random_weights(gen, M, s), random_weights(gen, M, s)};
    EXPECT_GE(eq_error(V, w, t(gen)), 0.0);
  }
}

TEST(EqError, VanishesForSeparableValues) {
  const auto p = fixtures::make_problem(2, CostSpec::zero(2, 1), CostSpec::separable(2, 1, Atom::logcosh(1.0)));
  const ValueGrid V = solve_full_hjb(p, default_grid(p, fixtures::diracs(2), 41, 40));
  const std::size_t M = V.grid().axis(0).points;
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<std::vector<double>> w{random_weights(gen, M, 0.5), random_weights(gen, M, 0.5)};
    EXPECT_NEAR(eq_error(V, w, 0.3), 0.0, 1e-12);
  }
}

TEST(EqError, VanishesAtPointMasses) {
  const auto p = fixtures::benchmark();
  const ValueGrid V = solve_full_hjb(p, default_grid(p, fixtures::diracs(2), 41, 40));
  const std::size_t M = V.grid().axis(0).points;
  std::vector<double> a(M, 0.0), b(M, 0.0);
  a[12] = 1.0;
  b[27] = 1.0;
  EXPECT_EQ(eq_error(V, {a, b}, 0.5), 0.0);
}

TEST(ChaosGap, SelfDistanceIsZero) {
  const auto X = euler_maruyama(ou_drift(1.0), fixtures::diracs(3), 1, config(512, 20, 4));
  const auto g = marginal_chaos_gap(X, X, 2, 64, 128, 4);
  EXPECT_NEAR(g.value, 0.0, 1e-14);
  EXPECT_TRUE(g.exact_transport);
}

TEST(ChaosGap, GrowsWithSubsetSize) {
  const auto X = euler_maruyama(ou_drift(1.0), fixtures::diracs(3), 1, config(512, 20, 4));
  const auto Y = euler_maruyama(Drift::zero(), fixtures::diracs(3), 1, config(512, 20, 4));
  double prev = 0.0;
  for (int k = 1; k <= 3; ++k) {
    const double v = marginal_chaos_gap(X, Y, k, 64, 128, 4).value;
    EXPECT_GE(v, prev) << k;
    prev = v;
  }
  EXPECT_GT(prev, 0.0);
}

TEST(ControlGap, FieldAgainstItselfIsZero) {
  const auto p = fixtures::benchmark();
  const auto g = control_l2_gap(p, ou_drift(0.7), ou_drift(0.7), fixtures::diracs(2), config(500, 20, 6));
  EXPECT_EQ(g.common_state.value, 0.0);
  EXPECT_EQ(g.paired.value, 0.0);
}

TEST(ControlGap, ConstantOffset) {
  // Fields differing by a constant c per agent give c^2 T.
  const auto p = fixtures::benchmark();
  Drift shifted = ou_drift(0.7);
  shifted.agent = [](double, int, int, const double* x, double* out) { out[0] = -0.7 * x[0] + 0.4; };
  const auto g = control_l2_gap(p, ou_drift(0.7), shifted, fixtures::diracs(2), config(500, 20, 6));
  EXPECT_NEAR(g.common_state.value, 0.16, 1e-12);
}

TEST(Poincare, StandardGaussianRatioNearOne) {
  const std::size_t N = 20000;
  std::mt19937_64 gen(7);
  std::normal_distribution<double> z;
  std::vector<double> s(N);
  for (double& v : s) v = z(gen);
  const auto r = empirical_poincare(s, 1);
  EXPECT_NEAR(r.ratio, 1.0, 4.0 * std::sqrt(2.0 / N));
  EXPECT_EQ(r.worst, "linear_0");
  EXPECT_LE(r.ci_lo, r.ratio);
  EXPECT_GE(r.ci_hi, r.ratio);
}

TEST(Poincare, ScalesWithVariance) {
  const std::size_t N = 20000;
  std::mt19937_64 gen(8);
  std::normal_distribution<double> z(0.0, 0.5);
  std::vector<double> s(2 * N);
  for (double& v : s) v = z(gen);
  EXPECT_NEAR(empirical_poincare(s, 2).ratio, 0.25, 0.25 * 4.0 * std::sqrt(2.0 / N));
}

TEST(Poincare, PointMassAndTinySamples) {
  // A point mass has zero variance under every test function; one sample carries no information.
  EXPECT_NEAR(empirical_poincare(std::vector<double>(100, 0.3), 1).ratio, 0.0, 1e-20);
  try {
    empirical_poincare(std::vector<double>{0.3}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateSample);
  }
}
