#include <gtest/gtest.h>

#include "support.hpp"

using namespace distgap;

TEST(ColeHopf, ZeroCostGivesZero) {
  const auto p = fixtures::make_problem(2, CostSpec::zero(2, 1), CostSpec::zero(2, 1));
  EXPECT_NEAR(cole_hopf_value(p, 0.0, std::vector<double>{0.4, -1.0}).value, 0.0, 1e-14);
}

TEST(ColeHopf, LinearCostMatchesMomentGeneratingFunction) {
  // E exp(-c sum z_i) over z ~ N(0, tau I_n) gives -(1/n) log(.) = -c^2 tau / 2.
  const double c = 0.7;
  for (int n : {1, 2, 3}) {
    const auto p = fixtures::linear_terminal(n, c);
    for (double t : {0.0, 0.4}) {
      const std::vector<double> x0(n, 0.0);
      EXPECT_NEAR(cole_hopf_value(p, t, x0).value, -c * c * (1.0 - t) / 2.0, 1e-10) << "n=" << n << " t=" << t;
    }
  }
}

TEST(ColeHopf, GaussianStartIntegratesLinearValue) {
  const double c = 0.5;
  const auto p = fixtures::linear_terminal(2, c);
  const std::vector<InitialLaw> m0{InitialLaw::gaussian({0.3}, {0.2}), InitialLaw::gaussian({-0.1}, {0.5})};
  EXPECT_NEAR(cole_hopf_value(p, 0.0, m0).value, c * (0.3 - 0.1) / 2.0 - c * c / 2.0, 1e-10);
}

TEST(ColeHopf, QuadratureIsConverged) {
  const auto p = fixtures::benchmark();
  const std::vector<double> x0{0.0, 0.0};
  const auto v = cole_hopf_value(p, 0.0, x0);
  EXPECT_EQ(v.method, "gauss-hermite");
  // A doubling change above 1e-8 switches to the finer rule.
  if (v.doubling_delta >= 1e-8) EXPECT_EQ(v.nodes, 64);
  EXPECT_NEAR(v.value, detail::gibbs_tensor(p.G, 2, x0.data(), 1.0, 128), 1e-8);
}

TEST(ColeHopf, TranslationCovariant) {
  const auto p = fixtures::benchmark();
  const std::vector<double> v{0.8, -0.3};
  CustomCost shifted;
  shifted.value = [&p, v](const double* x) {
    const double y[2] = {x[0] - v[0], x[1] - v[1]};
    return p.G.value(y);
  };
  shifted.gradient = [&p, v](const double* x, double* g) {
    const double y[2] = {x[0] - v[0], x[1] - v[1]};
    p.G.gradient(y, g);
  };
  auto q = p;
  q.G = CostSpec::custom(2, 1, shifted);
  q.convex_flag = false;
  const std::vector<double> x0{0.2, 0.5}, x1{x0[0] + v[0], x0[1] + v[1]};
  EXPECT_NEAR(cole_hopf_value(q, 0.0, x1).value, cole_hopf_value(p, 0.0, x0).value, 1e-12);
}

TEST(ColeHopf, MonotoneInTerminalCost) {
  const auto lo = fixtures::benchmark();
  auto hi = lo;
  hi.G = CostSpec::pairwise(2, 1, Atom::linear({0.2}), Atom::sqrt1p(0.6), complete_adjacency(2));
  const std::vector<double> x0{0.1, -0.4};
  EXPECT_LT(cole_hopf_value(lo, 0.0, x0).value, cole_hopf_value(hi, 0.0, x0).value);
}

TEST(ColeHopf, RequiresQuadraticActionAndNoRunningCost) {
  auto p = fixtures::benchmark();
  p.F = CostSpec::separable(2, 1, Atom::quadratic(1.0));
  EXPECT_THROW(cole_hopf_value(p, 0.0, std::vector<double>{0.0, 0.0}), Error);
  p = fixtures::benchmark();
  p.lagrangians = {LagrangianSpec::weighted(Eigen::MatrixXd::Constant(1, 1, 2.0))};
  EXPECT_THROW(cole_hopf_value(p, 0.0, std::vector<double>{0.0, 0.0}), Error);
}

TEST(ColeHopf, MonteCarloAgreesWithQuadrature) {
  const auto p = fixtures::benchmark();
  const std::vector<double> x0{0.0, 0.0};
  GibbsConfig mc;
  mc.tensor_budget = 1;
  mc.mc_samples = 200000;
  const auto a = cole_hopf_value(p, 0.0, x0);
  const auto b = cole_hopf_value(p, 0.0, x0, mc);
  EXPECT_GT(b.stderr_, 0.0);
  EXPECT_NEAR(b.value, a.value, 4.0 * b.stderr_ + 1e-6);
}

TEST(Riccati, ScalarClosedForm) {
  const double q = 1.0;
  const auto R = lq_riccati(fixtures::scalar_lq(q));
  for (double t : {0.0, 0.37, 0.9, 1.0})
    for (double x : {-1.0, 0.0, 0.5, 2.0}) {
      Eigen::VectorXd xv(1);
      xv << x;
      EXPECT_NEAR(R.value(t, xv), fixtures::scalar_lq_value(q, 1.0, t, x), 1e-10) << "t=" << t << " x=" << x;
    }
}

TEST(Riccati, TerminalConditionAndZeroData) {
  const auto p = fixtures::make_problem(2, CostSpec::zero(2, 1),
                                        CostSpec::pairwise(2, 1, Atom::quadratic(0.5), Atom::quadratic(1.0),
                                                           complete_adjacency(2)));
  const auto R = lq_riccati(p);
  Eigen::VectorXd x(2);
  x << 0.7, -0.2;
  EXPECT_NEAR(R.value(1.0, x), p.G.value(x.data()), 1e-14);
  const auto Z = lq_riccati(fixtures::make_problem(2, CostSpec::zero(2, 1), CostSpec::zero(2, 1)));
  EXPECT_EQ(Z.value(0.0, x), 0.0);
}

TEST(Riccati, SymmetricPositiveSemidefinitePath) {
  const auto p = fixtures::make_problem(2, CostSpec::pairwise(2, 1, Atom::zero(), Atom::quadratic(0.3), complete_adjacency(2)),
                                        CostSpec::pairwise(2, 1, Atom::quadratic(0.5), Atom::quadratic(1.0),
                                                           complete_adjacency(2)));
  const auto R = lq_riccati(p);
  for (std::size_t k = 0; k < R.times.size(); k += 50) {
    EXPECT_LE((R.P[k] - R.P[k].transpose()).cwiseAbs().maxCoeff(), 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R.P[k]);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(Riccati, AgreesWithGibbsOnCoupledQuadratic) {
  const auto p = fixtures::make_problem(2, CostSpec::zero(2, 1),
                                        CostSpec::pairwise(2, 1, Atom::quadratic(0.5), Atom::quadratic(1.0),
                                                           complete_adjacency(2)));
  const auto R = lq_riccati(p);
  const std::vector<double> x0{0.4, -0.3};
  Eigen::VectorXd x(2);
  x << x0[0], x0[1];
  EXPECT_NEAR(R.value(0.0, x), cole_hopf_value(p, 0.0, x0).value, 1e-8);
}

TEST(Riccati, LiftOverGaussianStart) {
  const double q = 2.0;
  const auto R = lq_riccati(fixtures::scalar_lq(q));
  const double mu = 0.3, var = 0.2;
  const double s = 1.0 + q;
  EXPECT_NEAR(riccati_lift(R, {InitialLaw::gaussian({mu}, {var})}), q * (mu * mu + var) / (2 * s) + 0.5 * std::log(s),
              1e-10);
}

TEST(MeanFieldLq, ZeroDataGivesZero) {
  const auto Z = mean_variance_form(Atom::zero(), Atom::zero(), 0.0, 1);
  EXPECT_EQ(meanfield_lq(Z, Z, LagrangianSpec::quadratic(1), InitialLaw::gaussian({0.5}, {0.3}), 1.0).value, 0.0);
}

TEST(MeanFieldLq, SquaredMeanFromOrigin) {
  const auto G = mean_variance_form(Atom::zero(), Atom::zero(), 2.0, 1);
  const auto Z = mean_variance_form(Atom::zero(), Atom::zero(), 0.0, 1);
  EXPECT_NEAR(meanfield_lq(G, Z, LagrangianSpec::quadratic(1), InitialLaw::dirac({0.0}), 1.0).value, 0.0, 1e-14);
}

TEST(MeanFieldLq, SquaredMeanMatchesEulerLagrange) {
  // min (1/2) int |mu'|^2 + (c/2) mu_T^2 gives c mu0^2 / (2 (1 + c T)); the spread costs nothing.
  const double c = 1.5, mu0 = 0.8, T = 1.3;
  const auto G = mean_variance_form(Atom::zero(), Atom::zero(), c, 1);
  const auto Z = mean_variance_form(Atom::zero(), Atom::zero(), 0.0, 1);
  EXPECT_NEAR(meanfield_lq(G, Z, LagrangianSpec::quadratic(1), InitialLaw::gaussian({mu0}, {0.4}), T).value,
              c * mu0 * mu0 / (2.0 * (1.0 + c * T)), 1e-8);
}

TEST(MeanFieldLq, SeparableReducesToScalarRiccati) {
  const double q = 1.0, mu = 0.3, var = 0.2;
  const auto G = mean_variance_form(Atom::quadratic(q), Atom::zero(), 0.0, 1);
  const auto Z = mean_variance_form(Atom::zero(), Atom::zero(), 0.0, 1);
  const double s = 1.0 + q;
  EXPECT_NEAR(meanfield_lq(G, Z, LagrangianSpec::quadratic(1), InitialLaw::gaussian({mu}, {var}), 1.0).value,
              q * (mu * mu + var) / (2 * s) + 0.5 * std::log(s), 1e-8);
}

TEST(MeanFieldLq, RejectsParticleStarts) {
  const auto Z = mean_variance_form(Atom::zero(), Atom::zero(), 0.0, 1);
  try {
    meanfield_lq(Z, Z, LagrangianSpec::quadratic(1), InitialLaw::particles(1, {0.0, 1.0}), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonGaussianInitial);
  }
}
