#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "bayesupdate/bayesupdate.hpp"
#include "oracles.hpp"
#include "report.hpp"

namespace bayesupdate::cli {

struct SelftestCheck {
  std::string name;
  double residual;
  double tolerance;
  bool pass() const { return std::isfinite(residual) && residual <= tolerance; }
};

namespace detail {

inline MatrixXd random_orthogonal(Eigen::Index n, RngStream& rng) {
  MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(g);
  return qr.householderQ();
}

inline MarkovChainParams random_binary_chain(int n, RngStream& rng) {
  MarkovChainParams p;
  const double a = 0.1 + 0.8 * rng.uniform();
  p.initial = Eigen::Vector2d(1.0 - a, a);
  for (int j = 1; j < n; ++j) {
    MatrixXd t(2, 2);
    for (int r = 0; r < 2; ++r) {
      const double v = 0.1 + 0.8 * rng.uniform();
      t(r, 0) = 1.0 - v;
      t(r, 1) = v;
    }
    p.transitions.push_back(t);
  }
  return p;
}

inline SiteLikelihood random_likelihood(int n, int k, RngStream& rng) {
  SiteLikelihood lik{MatrixXd(n, k)};
  for (Eigen::Index i = 0; i < lik.density.size(); ++i) lik.density.data()[i] = 0.05 + rng.uniform();
  return lik;
}

}  // namespace detail

/// Fast oracle checks. `perturb` adds a deliberate error to every computed
/// quantity so that the failure path can be exercised.
inline std::vector<SelftestCheck> run_selftest(double perturb = 0.0) {
  std::vector<SelftestCheck> out;
  RngStream rng(20240101, 0);

  {
    // Scalar Kalman: Q = 4, H = 1, R = 1, y = 5 gives mu* = 4, Q* = 0.8.
    GaussianParams th{VectorXd::Zero(1), MatrixXd::Constant(1, 1, 4.0)};
    const LikelihoodSpec lik = LikelihoodSpec::identity(1, 1.0);
    const PosteriorGaussian post = posterior_moments(th, lik, VectorXd::Constant(1, 5.0));
    const double r = std::max({std::abs(post.mu_star[0] + perturb - 4.0), std::abs(post.Q_star(0, 0) - 0.8),
                               std::abs(post.K(0, 0) - 0.8)});
    out.push_back({"scalar_kalman", r, 1e-12});
  }
  {
    // tr(B Z) at the Theorem-1 solution equals the singular-value sum and
    // bounds random orthogonal alternatives.
    const Eigen::Index n = 4;
    double r = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      MatrixXd z(n, n);
      for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
      const MatrixXd b = theorem1_solve(z);
      const double best = (b * z).trace() + perturb;
      const double sv = Eigen::JacobiSVD<MatrixXd>(z).singularValues().sum();
      r = std::max(r, std::abs(best - sv));
      for (int k = 0; k < 200; ++k) {
        const MatrixXd alt = detail::random_orthogonal(n, rng);
        r = std::max(r, (alt * z).trace() - best);
      }
    }
    out.push_back({"theorem1_bound_n4", r, 1e-10});
  }
  {
    // Forward-backward against enumeration on a length-6 binary chain.
    double r = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      const MarkovChainParams th = detail::random_binary_chain(6, rng);
      const SiteLikelihood lik = detail::random_likelihood(6, 2, rng);
      const ChainPosterior fb = forward_backward(th, lik);
      const oracle::EnumeratedPosterior ex = oracle::enumerate_posterior(th, lik);
      r = std::max(r, (fb.marginals.array() + perturb - ex.marginals.array()).abs().maxCoeff());
      for (std::size_t j = 0; j < ex.pair_marginals.size(); ++j) {
        r = std::max(r, (fb.pair_marginals[j] - ex.pair_marginals[j]).cwiseAbs().maxCoeff());
      }
    }
    out.push_back({"forward_backward_enum_n6", r, 1e-12});
  }
  {
    // Dynamic programme against a grid search over feasible policies, n = 2.
    double r = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
      const MarkovChainParams th = detail::random_binary_chain(2, rng);
      const ChainPosterior post = forward_backward(th, detail::random_likelihood(2, 2, rng));
      const TransitionPolicy pol = optimal_policy(th, post);
      const oracle::PolicyScore dp = oracle::score_policy(th, post, pol);
      const oracle::GridResult grid = oracle::grid_search_policy(th, post, 11);
      r = std::max({r, std::abs(dp.matches + perturb - grid.best), dp.constraint_residual});
    }
    out.push_back({"dp_vs_grid_n2", r, 1e-3});
  }
  return out;
}

inline int cmd_selftest(std::ostream& os, double perturb = 0.0) {
  bool ok = true;
  for (const SelftestCheck& c : run_selftest(perturb)) {
    os << (c.pass() ? "PASS " : "FAIL ") << c.name << " max_residual=" << format_number(c.residual)
       << " tolerance=" << format_number(c.tolerance) << '\n';
    ok = ok && c.pass();
  }
  return ok ? 0 : 1;
}

}  // namespace bayesupdate::cli
