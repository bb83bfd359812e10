#include <gtest/gtest.h>

#include "support.hpp"

using namespace distgap;

namespace {

DistributedConfig small_config() {
  DistributedConfig c;
  c.points = 201;
  c.steps = 200;
  c.store_every = 2;
  return c;
}

FbsdeConfig small_fbsde(std::size_t N = 20000) {
  FbsdeConfig c;
  c.particles = N;
  c.steps = 50;
  return c;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double N = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= N;
  mb /= N;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Distributed, SeparableConvergesAtOnceToAgentValues) {
  const double q = 1.0;
  const auto p = fixtures::make_problem(2, CostSpec::zero(2, 1), CostSpec::separable(2, 1, Atom::quadratic(q)));
  const auto m0 = std::vector<InitialLaw>{InitialLaw::dirac({0.5}), InitialLaw::dirac({-0.2})};
  const auto s = solve_distributed_pde(p, m0, small_config());
  EXPECT_EQ(s.iterations, 1);
  const double exact = 0.5 * (fixtures::scalar_lq_value(q, 1.0, 0.0, 0.5) + fixtures::scalar_lq_value(q, 1.0, 0.0, -0.2));
  EXPECT_NEAR(s.value, exact, 2e-3);
  const auto R = lq_riccati(p);
  Eigen::VectorXd x(2);
  x << 0.5, -0.2;
  EXPECT_NEAR(s.value, R.value(0.0, x), 2e-3);
}

TEST(Distributed, SymmetricShortcutMatchesPerAgentSolve) {
  const auto p = fixtures::benchmark();
  auto cfg = small_config();
  const auto a = solve_distributed_pde(p, fixtures::diracs(2), cfg);
  cfg.use_symmetry = false;
  const auto b = solve_distributed_pde(p, fixtures::diracs(2), cfg);
  EXPECT_TRUE(a.symmetric_shortcut);
  EXPECT_FALSE(b.symmetric_shortcut);
  EXPECT_NEAR(a.value, b.value, 1e-8);
  EXPECT_NEAR(b.agent_lifts[0], b.agent_lifts[1], 1e-8);
}

TEST(Distributed, PicardIsDeterministic) {
  const auto p = fixtures::benchmark();
  const auto a = solve_distributed_pde(p, fixtures::diracs(2), small_config());
  const auto b = solve_distributed_pde(p, fixtures::diracs(2), small_config());
  EXPECT_EQ(a.residuals, b.residuals);
  EXPECT_EQ(a.value, b.value);
}

TEST(Distributed, CostOrdering) {
  // Full optimum <= distributed optimum, and the distributed feedback realizes its own value.
  const auto p = fixtures::benchmark();
  const auto s = solve_distributed_pde(p, fixtures::diracs(2), small_config());
  const double full = cole_hopf_value(p, 0.0, std::vector<double>{0.0, 0.0}).value;
  EXPECT_LE(full, s.value);
  SimConfig sc;
  sc.particles = 100000;
  sc.steps = 100;
  sc.seed = 3;
  const auto J = evaluate_cost(p, distributed_control(s, p), fixtures::diracs(2), sc);
  EXPECT_NEAR(J.value, s.value, 4.0 * J.stderr_ + 5e-3);
  EXPECT_LE(full, J.value + 4.0 * J.stderr_);
}

TEST(IntermediateProcess, ZeroValueGivesBrownianAgents) {
  const auto p = fixtures::make_problem(2, CostSpec::zero(2, 1), CostSpec::zero(2, 1));
  const ValueGrid V = solve_full_hjb(p, default_grid(p, fixtures::diracs(2), 41, 40));
  HatXConfig hc;
  hc.steps = 50;
  const std::size_t N = 40000;
  const auto r = simulate_hatX(V, p, fixtures::diracs(2), N, 5, hc);
  for (int i = 0; i < 2; ++i) {
    const auto c = r.ensemble.agent_cloud(i, r.ensemble.levels() - 1);
    double m = 0.0, v = 0.0;
    for (double x : c) m += x;
    m /= N;
    for (double x : c) v += (x - m) * (x - m);
    v /= N - 1;
    EXPECT_NEAR(v, 1.0, 4.0 * std::sqrt(2.0 / N));
  }
}

TEST(IntermediateProcess, AgentsStayIndependent) {
  const auto p = fixtures::benchmark();
  const ValueGrid V = solve_full_hjb(p, default_grid(p, fixtures::diracs(2), 81, 100));
  HatXConfig hc;
  hc.steps = 50;
  const std::size_t N = 20000;
  const auto r = simulate_hatX(V, p, fixtures::diracs(2), N, 9, hc);
  const int last = r.ensemble.levels() - 1;
  EXPECT_LE(std::abs(correlation(r.ensemble.agent_cloud(0, last), r.ensemble.agent_cloud(1, last))),
            3.0 / std::sqrt(double(N)));
}

TEST(Fbsde, LinearCostHasConstantAdjoint) {
  const double c = 0.6;
  const int n = 2;
  const auto p = fixtures::linear_terminal(n, c);
  const auto s = solve_mkv_fbsde(p, fixtures::diracs(n), small_fbsde());
  EXPECT_TRUE(s.converged);
  for (double y : s.y0) EXPECT_NEAR(y, c / n, 1e-10);
  EXPECT_NEAR(s.value, -c * c / 2.0, 4.0 * s.value_stderr + 1e-10);
}

TEST(Fbsde, ScalarQuadraticMatchesRiccati) {
  // Y_0 = q x0 / (1 + qT) from a point start.
  const double q = 1.0, x0 = 1.0;
  const auto p = fixtures::scalar_lq(q);
  const auto s = solve_mkv_fbsde(p, fixtures::diracs(1, x0), small_fbsde());
  EXPECT_TRUE(s.converged);
  EXPECT_NEAR(s.y0[0], q * x0 / (1.0 + q), 1e-2);
  EXPECT_NEAR(s.value, fixtures::scalar_lq_value(q, 1.0, 0.0, x0), 4.0 * s.value_stderr + 1e-2);
}
