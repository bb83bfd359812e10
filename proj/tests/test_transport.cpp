#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "support.hpp"

using namespace distgap;

namespace {

std::vector<double> cloud(std::mt19937_64& gen, int N, int dim, double shift = 0.0) {
  std::normal_distribution<double> z(shift, 1.0);
  std::vector<double> v(static_cast<std::size_t>(N * dim));
  for (double& x : v) x = z(gen);
  return v;
}

}  // namespace

TEST(Transport, IdenticalSetsCostNothing) {
  std::mt19937_64 gen(1);
  for (int dim : {1, 2, 3}) {
    const auto a = cloud(gen, 40, dim);
    auto b = a;
    // Same set in a different order.
    for (int k = 0; k + 1 < 40; k += 2)
      for (int c = 0; c < dim; ++c) std::swap(b[k * dim + c], b[(k + 1) * dim + c]);
    EXPECT_NEAR(wasserstein2_squared(a, b, dim).cost, 0.0, 1e-14) << dim;
  }
}

TEST(Transport, TranslatedPointMassesAreUnitApart) {
  for (int dim : {1, 2}) {
    std::vector<double> a(static_cast<std::size_t>(10 * dim), 0.0), b = a;
    for (int k = 0; k < 10; ++k) b[k * dim] = 1.0;
    EXPECT_NEAR(wasserstein2(a, b, dim), 1.0, 1e-14);
  }
}

TEST(Transport, MatchesBruteForceOverPermutations) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 5; ++trial) {
    const int N = 8, dim = 2;
    const auto a = cloud(gen, N, dim), b = cloud(gen, N, dim, 0.5);
    std::vector<int> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double s = 0.0;
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < dim; ++c) s += std::pow(a[i * dim + c] - b[perm[i] * dim + c], 2);
      best = std::min(best, s / N);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto r = wasserstein2_squared(a, b, dim);
    EXPECT_TRUE(r.exact);
    EXPECT_NEAR(r.cost, best, 1e-12);
  }
}

TEST(Transport, MetricAxioms) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> shift(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 1 + trial % 2;
    const auto a = cloud(gen, 12, dim, shift(gen)), b = cloud(gen, 12, dim, shift(gen)),
               c = cloud(gen, 12, dim, shift(gen));
    const double ab = wasserstein2(a, b, dim), ba = wasserstein2(b, a, dim);
    const double bc = wasserstein2(b, c, dim), ac = wasserstein2(a, c, dim);
    EXPECT_GE(ab, 0.0);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_LE(ac, ab + bc + 1e-12);
  }
}

TEST(Transport, HistogramsOfShiftedMass) {
  const std::vector<double> nodes{0.0, 1.0, 2.0, 3.0};
  EXPECT_NEAR(w2_squared_histograms(nodes, {1, 0, 0, 0}, {0, 0, 1, 0}), 4.0, 1e-14);
  EXPECT_NEAR(w2_squared_histograms(nodes, {0.5, 0.5, 0, 0}, {0, 0.5, 0.5, 0}), 1.0, 1e-14);
  EXPECT_NEAR(w2_squared_histograms(nodes, {1, 2, 3, 4}, {2, 4, 6, 8}), 0.0, 1e-14);
}
