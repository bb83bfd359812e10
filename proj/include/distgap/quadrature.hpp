#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <mutex>
#include <vector>

#include "distgap/error.hpp"

namespace distgap {

struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;  ///< sum to 1
};

/// Gauss-Hermite rule for the standard normal (Golub-Welsch on the Jacobi matrix).
inline const GaussRule& gauss_hermite(int q) {
  static std::mutex mu;
  static std::map<int, GaussRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(q);
  if (it != cache.end()) return it->second;
  require(q >= 1 && q <= 256, Errc::InvalidArgument, "Gauss-Hermite order out of range");
  Eigen::MatrixXd Jm = Eigen::MatrixXd::Zero(q, q);
  for (int k = 1; k < q; ++k) Jm(k, k - 1) = Jm(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Jm);
  GaussRule r;
  r.nodes.resize(q);
  r.weights.resize(q);
  double total = 0.0;
  for (int k = 0; k < q; ++k) {
    r.nodes[k] = es.eigenvalues()[k];
    const double v = es.eigenvectors()(0, k);
    r.weights[k] = v * v;
    total += r.weights[k];
  }
  for (double& w : r.weights) w /= total;
  // Symmetrize to remove eigen-solver asymmetry.
  for (int k = 0; k < q / 2; ++k) {
    const double x = 0.5 * (r.nodes[q - 1 - k] - r.nodes[k]);
    const double w = 0.5 * (r.weights[k] + r.weights[q - 1 - k]);
    r.nodes[k] = -x;
    r.nodes[q - 1 - k] = x;
    r.weights[k] = r.weights[q - 1 - k] = w;
  }
  if (q % 2 == 1) r.nodes[q / 2] = 0.0;
  return cache.emplace(q, std::move(r)).first->second;
}

}  // namespace distgap
