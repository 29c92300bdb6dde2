#pragma once

// Brute-force reference computations used by the selftest command and the
// test suite. Each one works from first principles (enumeration or direct
// search) rather than through the library's recursions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bayesupdate/hmm_core.hpp"
#include "bayesupdate/hmm_update.hpp"

namespace bayesupdate::oracle {

struct EnumeratedPosterior {
  MatrixXd marginals;
  std::vector<MatrixXd> pair_marginals;
};

/// Posterior marginals by summing over all K^n state sequences.
inline EnumeratedPosterior enumerate_posterior(const MarkovChainParams& theta, const SiteLikelihood& lik) {
  const int n = theta.length();
  const int k = theta.categories();
  EnumeratedPosterior out{MatrixXd::Zero(n, k), std::vector<MatrixXd>(static_cast<std::size_t>(n - 1), MatrixXd::Zero(k, k))};
  std::vector<int> x(static_cast<std::size_t>(n), 0);
  double total = 0.0;
  for (;;) {
    double w = theta.initial[x[0]] * lik.density(0, x[0]);
    for (int j = 1; j < n; ++j) {
      w *= theta.transitions[static_cast<std::size_t>(j - 1)](x[static_cast<std::size_t>(j - 1)], x[static_cast<std::size_t>(j)]) *
           lik.density(j, x[static_cast<std::size_t>(j)]);
    }
    total += w;
    for (int j = 0; j < n; ++j) out.marginals(j, x[static_cast<std::size_t>(j)]) += w;
    for (int j = 0; j + 1 < n; ++j) {
      out.pair_marginals[static_cast<std::size_t>(j)](x[static_cast<std::size_t>(j)], x[static_cast<std::size_t>(j + 1)]) += w;
    }
    int pos = n - 1;
    while (pos >= 0 && ++x[static_cast<std::size_t>(pos)] == k) x[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
  out.marginals /= total;
  for (auto& p : out.pair_marginals) p /= total;
  return out;
}

/// Expected number of sites with x_new_j == x_j when x follows `theta` and
/// x_new is drawn by `policy`, by propagating the joint law of
/// (x_new_j, x_j) site by site. Also reports the largest deviation of the
/// updated pair (and first-site) laws from the target posterior.
struct PolicyScore {
  double matches = 0.0;
  double constraint_residual = 0.0;
};

inline PolicyScore score_policy(const MarkovChainParams& theta, const ChainPosterior& target,
                                const TransitionPolicy& policy) {
  const int n = theta.length();
  // joint(a, b) = P(x_new_j = a, x_j = b)
  Eigen::Matrix2d joint;
  for (int b = 0; b < 2; ++b) {
    for (int a = 0; a < 2; ++a) joint(a, b) = theta.initial[b] * policy.q1(b, a);
  }
  PolicyScore s;
  s.matches = joint.trace();
  s.constraint_residual = std::max(std::abs(joint(1, 0) + joint(1, 1) - target.marginals(0, 1)),
                                   std::abs(joint(0, 0) + joint(0, 1) - target.marginals(0, 0)));
  for (int j = 1; j < n; ++j) {
    const MatrixXd& p = theta.transitions[static_cast<std::size_t>(j - 1)];
    const auto& q = policy.site[static_cast<std::size_t>(j - 1)];
    Eigen::Matrix2d next = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d pair = Eigen::Matrix2d::Zero();
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        for (int b2 = 0; b2 < 2; ++b2) {
          for (int a2 = 0; a2 < 2; ++a2) {
            const double w = joint(a, b) * p(b, b2) * q[static_cast<std::size_t>(a)](b2, a2);
            next(a2, b2) += w;
            pair(a, a2) += w;
          }
        }
      }
    }
    s.constraint_residual =
        std::max(s.constraint_residual, (pair - target.pair_marginals[static_cast<std::size_t>(j - 1)]).cwiseAbs().maxCoeff());
    joint = next;
    s.matches += joint.trace();
  }
  return s;
}

namespace detail {

// Feasible values of u = P(1 | first input) when the mixture
// w0 * u + w1 * v must equal `target` with v in [0, 1].
inline std::pair<double, double> split_interval(double w0, double w1, double target) {
  if (w0 <= 0.0) return {0.0, 0.0};
  if (w1 <= 0.0) {
    const double u = std::clamp(target / w0, 0.0, 1.0);
    return {u, u};
  }
  return {std::clamp((target - w1) / w0, 0.0, 1.0), std::clamp(target / w0, 0.0, 1.0)};
}

inline double solve_other(double w0, double w1, double target, double u) {
  if (w1 <= 0.0) return 0.0;
  return std::clamp((target - w0 * u) / w1, 0.0, 1.0);
}

}  // namespace detail

/// Builds the feasible policy addressed by lam in [0, 1]^(2n - 1): lam[0]
/// positions q1(0, 1) inside its feasible interval and, for each site j >= 2
/// and previous updated value a, lam[2j - 3 + a] positions q(1 | a, x_j = 0).
/// The complementary entries follow from the pair-law equalities.
inline TransitionPolicy policy_from(const MarkovChainParams& theta, const ChainPosterior& target,
                                    const std::vector<double>& lam) {
  const int n = theta.length();
  TransitionPolicy pol = identity_policy(n);
  const double pi0 = theta.initial[0];
  const double pi1 = theta.initial[1];
  const auto [lo, hi] = detail::split_interval(pi0, pi1, target.marginals(0, 1));
  const double u = lo + lam[0] * (hi - lo);
  const double v = detail::solve_other(pi0, pi1, target.marginals(0, 1), u);
  pol.q1 << 1.0 - u, u, 1.0 - v, v;

  Eigen::Matrix2d joint;
  for (int b = 0; b < 2; ++b) {
    for (int a = 0; a < 2; ++a) joint(a, b) = theta.initial[b] * pol.q1(b, a);
  }
  for (int j = 1; j < n; ++j) {
    const MatrixXd& p = theta.transitions[static_cast<std::size_t>(j - 1)];
    // w(a, b2) = P(x_new_{j-1} = a, x_j = b2)
    Eigen::Matrix2d w = Eigen::Matrix2d::Zero();
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        for (int b2 = 0; b2 < 2; ++b2) w(a, b2) += joint(a, b) * p(b, b2);
      }
    }
    auto& q = pol.site[static_cast<std::size_t>(j - 1)];
    const MatrixXd& pair = target.pair_marginals[static_cast<std::size_t>(j - 1)];
    for (int a = 0; a < 2; ++a) {
      const auto [l, h] = detail::split_interval(w(a, 0), w(a, 1), pair(a, 1));
      const double q0 = l + lam[static_cast<std::size_t>(2 * j - 1 + a)] * (h - l);
      const double q1v = detail::solve_other(w(a, 0), w(a, 1), pair(a, 1), q0);
      q[static_cast<std::size_t>(a)] << 1.0 - q0, q0, 1.0 - q1v, q1v;
    }
    Eigen::Matrix2d next = Eigen::Matrix2d::Zero();
    for (int a = 0; a < 2; ++a) {
      for (int b2 = 0; b2 < 2; ++b2) {
        for (int a2 = 0; a2 < 2; ++a2) next(a2, b2) += w(a, b2) * q[static_cast<std::size_t>(a)](b2, a2);
      }
    }
    joint = next;
  }
  return pol;
}

struct GridResult {
  double best = -1.0;
  std::vector<double> lam;
};

/// Maximises expected matches over feasible policies: a uniform grid with
/// `points` values per coordinate, then compass search from the best
/// `starts` grid points down to step `min_step`. Candidates whose pair-law
/// residual exceeds `feasibility_tol` are discarded.
inline GridResult grid_search_policy(const MarkovChainParams& theta, const ChainPosterior& target, int points,
                                     int starts = 4, double min_step = 1e-7, double feasibility_tol = 1e-9) {
  const int n = theta.length();
  const auto d = static_cast<std::size_t>(2 * n - 1);
  const auto eval = [&](const std::vector<double>& lam) {
    const PolicyScore s = score_policy(theta, target, policy_from(theta, target, lam));
    return s.constraint_residual <= feasibility_tol ? s.matches : -1.0;
  };

  std::vector<std::pair<double, std::vector<double>>> pool;
  std::vector<int> idx(d, 0);
  std::vector<double> lam(d);
  for (;;) {
    for (std::size_t i = 0; i < d; ++i) lam[i] = points > 1 ? static_cast<double>(idx[i]) / (points - 1) : 0.5;
    pool.emplace_back(eval(lam), lam);
    std::size_t pos = 0;
    while (pos < d && ++idx[pos] == points) idx[pos++] = 0;
    if (pos == d) break;
  }
  std::partial_sort(pool.begin(), pool.begin() + std::min<std::ptrdiff_t>(starts, static_cast<std::ptrdiff_t>(pool.size())),
                    pool.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  GridResult best;
  for (int s = 0; s < starts && s < static_cast<int>(pool.size()); ++s) {
    auto [value, x] = pool[static_cast<std::size_t>(s)];
    double step = points > 1 ? 1.0 / (points - 1) : 0.5;
    while (step >= min_step) {
      bool improved = false;
      for (std::size_t i = 0; i < d; ++i) {
        for (double dir : {1.0, -1.0}) {
          std::vector<double> y = x;
          y[i] = std::clamp(y[i] + dir * step, 0.0, 1.0);
          const double v = eval(y);
          if (v > value + 1e-15) {
            value = v;
            x = std::move(y);
            improved = true;
          }
        }
      }
      if (!improved) step *= 0.5;
    }
    if (value > best.best) best = {value, x};
  }
  return best;
}

}  // namespace bayesupdate::oracle
