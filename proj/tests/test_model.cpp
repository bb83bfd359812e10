#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "support.hpp"

using namespace distgap;

namespace {

Error code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  return Error(Errc::InvalidArgument, "no error");
}

// L(a) = a^4/4 + a^2/2 in one dimension.
LagrangianSpec quartic() {
  CustomLagrangian fns;
  fns.value = [](const double*, const double* a) { return a[0] * a[0] * a[0] * a[0] / 4.0 + a[0] * a[0] / 2.0; };
  fns.grad_a = [](const double*, const double* a, double* g) { g[0] = a[0] * a[0] * a[0] + a[0]; };
  fns.hess_aa = [](const double*, const double* a, double* h) { h[0] = 3.0 * a[0] * a[0] + 1.0; };
  return LagrangianSpec::custom(1, fns, 1.0, {0.0, 0.0, 1.0});
}

}  // namespace

TEST(Hamiltonian, QuadraticClosedForm) {
  const auto L = LagrangianSpec::quadratic(1);
  auto h = hamiltonian_eval(L, {0.0}, {2.0});
  EXPECT_DOUBLE_EQ(h.value, 2.0);
  EXPECT_DOUBLE_EQ(h.minimizer[0], -2.0);
  h = hamiltonian_eval(L, {3.7}, {0.0});
  EXPECT_DOUBLE_EQ(h.value, 0.0);
  EXPECT_DOUBLE_EQ(h.minimizer[0], 0.0);
}

TEST(Hamiltonian, QuadraticIsHalfSquareOnRandomInputs) {
  const auto L = LagrangianSpec::quadratic(2);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> z(0.0, 3.0);
  for (int k = 0; k < 1000; ++k) {
    const std::vector<double> x{z(gen), z(gen)}, p{z(gen), z(gen)};
    const auto h = hamiltonian_eval(L, x, p);
    EXPECT_NEAR(h.value, 0.5 * (p[0] * p[0] + p[1] * p[1]), 1e-14 * (1.0 + h.value));
  }
}

TEST(Hamiltonian, CustomMatchesGridSearch) {
  const auto L = quartic();
  const double p = 1.0;
  double best = -1e300, arg = 0.0;
  for (long k = 0; k <= 200000; ++k) {
    const double a = -10.0 + 1e-4 * k;
    const double v = -a * p - (a * a * a * a / 4.0 + a * a / 2.0);
    if (v > best) {
      best = v;
      arg = a;
    }
  }
  const auto h = hamiltonian_eval(L, {0.0}, {p});
  EXPECT_NEAR(h.value, best, 1e-8);
  EXPECT_NEAR(h.minimizer[0], arg, 1e-4);
}

TEST(Hamiltonian, ConvexInCostate) {
  const std::vector<LagrangianSpec> specs{LagrangianSpec::quadratic(1),
                                          LagrangianSpec::weighted(Eigen::MatrixXd::Constant(1, 1, 2.0)), quartic()};
  std::mt19937_64 gen(2);
  std::normal_distribution<double> z(0.0, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& L : specs)
    for (int k = 0; k < 200; ++k) {
      const double p = z(gen), q = z(gen), lam = u(gen);
      const double mid = hamiltonian_eval(L, {0.3}, {lam * p + (1 - lam) * q}).value;
      const double chord =
          lam * hamiltonian_eval(L, {0.3}, {p}).value + (1 - lam) * hamiltonian_eval(L, {0.3}, {q}).value;
      EXPECT_LE(mid, chord + 1e-9);
    }
}

TEST(Lagrangian, QuadraticBoundsAndModulus) {
  const auto L = LagrangianSpec::quadratic(3);
  EXPECT_EQ(L.bounds().dpp_H, 1.0);
  EXPECT_EQ(L.bounds().dxp_H, 0.0);
  EXPECT_EQ(L.bounds().dxx_L, 0.0);
  EXPECT_EQ(L.convexity_modulus(), 1.0);
  Eigen::MatrixXd R(2, 2);
  R << 1.0, 2.0, 0.0, 1.0;
  EXPECT_EQ(code_of([&] { LagrangianSpec::weighted(R); }).code(), Errc::AsymmetricMatrix);
}

TEST(Cost, PairwiseValueMatchesDefinition) {
  const auto p = fixtures::benchmark();
  const std::vector<double> x{0.3, -0.2};
  EXPECT_NEAR(p.G.value(x.data()), 0.5 * std::sqrt(1.0 + 0.25) + 0.1 * 0.1, 1e-15);
}

TEST(Cost, GradientAndHessianAgreeWithDifferences) {
  const Eigen::MatrixXd J = circulant_adjacency(4, 2) / 2.0;
  const auto G = CostSpec::pairwise(4, 1, Atom::logcosh(0.7), Atom::sqrt1p(0.9), J);
  const std::vector<double> x{0.3, -1.1, 0.4, 2.0};
  std::vector<double> g(4), xp = x, xm = x;
  G.gradient(x.data(), g.data());
  const Eigen::MatrixXd H = G.hessian(x.data());
  const double h = 1e-5;
  for (int i = 0; i < 4; ++i) {
    xp = x;
    xm = x;
    xp[i] += h;
    xm[i] -= h;
    EXPECT_NEAR(g[i], (G.value(xp.data()) - G.value(xm.data())) / (2 * h), 1e-8);
    std::vector<double> gp(4), gm(4);
    G.gradient(xp.data(), gp.data());
    G.gradient(xm.data(), gm.data());
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(H(j, i), (gp[j] - gm[j]) / (2 * h), 1e-7);
  }
}

TEST(CrossTable, SeparableIsZero) {
  const auto G = CostSpec::separable(3, 1, Atom::sqrt1p(2.0));
  EXPECT_EQ(cross_derivative_table(G, 3).norms.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CrossTable, CompleteGraphEntries) {
  const Eigen::MatrixXd J = complete_adjacency(3) / 2.0;
  const auto G = CostSpec::pairwise(3, 1, Atom::zero(), Atom::sqrt1p(1.0), J);
  const auto t = cross_derivative_table(G, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) EXPECT_NEAR(t.norms(i, j), (2.0 / 3.0) * 0.5 * 1.0, 1e-15);
}

TEST(CrossTable, SumScalesWithTraceOfJSquared) {
  // sum_{i<j} |D_ij G|^2 = (4/n^2) |g''|^2 sum_{i<j} J_ij^2 = (2/n^2) |g''|^2 Tr(J^2).
  const int n = 8;
  for (int m : {2, 4, 7}) {
    const Eigen::MatrixXd J = (m == 7 ? complete_adjacency(n) : circulant_adjacency(n, m)) / double(m);
    const auto G = CostSpec::pairwise(n, 1, Atom::zero(), Atom::quadratic(1.0), J);
    const double tr = (J * J).trace();
    EXPECT_NEAR(tr, double(n) / m, 1e-12);
    EXPECT_NEAR(cross_derivative_table(G, n).sum_squares(), 2.0 * tr / (n * n), 1e-12);
  }
}

TEST(CrossTable, MeanFieldEntriesShrinkLikeInverseSquare) {
  std::vector<double> entry;
  for (int n : {4, 8, 16}) {
    const auto G = CostSpec::mean_field(n, 1, Atom::zero(), Atom::sqrt1p(1.0), 0.0, PairNormalization::Empirical);
    entry.push_back(cross_derivative_table(G, n).norms(0, 1));
  }
  EXPECT_NEAR(entry[0] / entry[1], 4.0, 1e-12);
  EXPECT_NEAR(entry[1] / entry[2], 4.0, 1e-12);
}

TEST(Hetero, DecoupledPairIsSeparable) {
  Eigen::MatrixXd J(2, 2);
  J << 0, 1, 1, 0;
  const auto p = build_hetero_problem(Atom::quadratic(1.0), Atom::zero(), Atom::zero(), Atom::zero(), J,
                                      LagrangianSpec::quadratic(1), 1.0);
  EXPECT_TRUE(p.G.is_separable());
  EXPECT_EQ(cross_derivative_table(p.G, 2).sum_squares(), 0.0);
}

TEST(Hetero, RingIsDoublyStochastic) {
  const Eigen::MatrixXd J = circulant_adjacency(4, 2) / 2.0;
  const auto p = build_hetero_problem(Atom::zero(), Atom::sqrt1p(1.0), Atom::zero(), Atom::zero(), J,
                                      LagrangianSpec::quadratic(1), 1.0);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(J.row(i).sum(), 1.0, 1e-15);
  EXPECT_TRUE(p.G.doubly_stochastic());
}

TEST(Hetero, InvariantUnderGraphAutomorphisms) {
  const int n = 6;
  const Eigen::MatrixXd J = circulant_adjacency(n, 2) / 2.0;
  const auto p = build_hetero_problem(Atom::logcosh(1.0), Atom::sqrt1p(1.0), Atom::quadratic(0.5),
                                      Atom::quadratic(0.2), J, LagrangianSpec::quadratic(1), 1.0);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(n);
    for (double& v : x) v = z(gen);
    // Rotations and the reflection i -> -i generate the ring's automorphisms.
    for (int shift = 1; shift < n; ++shift) {
      std::vector<double> y(n), r(n);
      for (int i = 0; i < n; ++i) {
        y[(i + shift) % n] = x[i];
        r[(n - i) % n] = x[i];
      }
      EXPECT_NEAR(p.G.value(y.data()), p.G.value(x.data()), 1e-13);
      EXPECT_NEAR(p.F.value(r.data()), p.F.value(x.data()), 1e-13);
    }
  }
  EXPECT_TRUE(p.exchangeable());
}

TEST(Hetero, RejectsBadInteractionMatrices) {
  Eigen::MatrixXd J = complete_adjacency(3) / 2.0;
  auto build = [](const Eigen::MatrixXd& M) {
    return [M] {
      build_hetero_problem(Atom::zero(), Atom::sqrt1p(1.0), Atom::zero(), Atom::zero(), M,
                           LagrangianSpec::quadratic(1), 1.0);
    };
  };
  Eigen::MatrixXd A = J;
  A(0, 1) = 0.7;
  EXPECT_EQ(code_of(build(A)).code(), Errc::AsymmetricMatrix);
  Eigen::MatrixXd N = J;
  N(0, 1) = N(1, 0) = -0.5;
  EXPECT_EQ(code_of(build(N)).code(), Errc::NegativeEntry);
  Eigen::MatrixXd D = J;
  D(2, 2) = 0.1;
  EXPECT_EQ(code_of(build(D)).code(), Errc::NonzeroDiagonal);
}

TEST(Problem, ConvexFlagChecksHessians) {
  CustomCost c;
  c.value = [](const double* x) { return -x[0] * x[0]; };
  c.gradient = [](const double* x, double* g) { g[0] = -2.0 * x[0]; };
  c.hessian_block = [](const double*, int, int, double* h) { h[0] = -2.0; };
  auto p = fixtures::make_problem(1, CostSpec::zero(1, 1), CostSpec::custom(1, 1, c));
  EXPECT_EQ(code_of([&] { p.validate(); }).code(), Errc::InvalidArgument);
  p.convex_flag = false;
  EXPECT_NO_THROW(p.validate());
}
