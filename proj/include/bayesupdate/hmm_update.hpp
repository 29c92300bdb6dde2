#pragma once

// Optimal factorised update for binary chains.
//
// The update draws x_new_1 ~ q1(. | x_1) and x_new_j ~ q_j(. | x_new_{j-1}, x_j).
// Under x ~ prior chain, (x_j, x_new_j) is a Markov chain on four states, so
// everything downstream of site j depends on the 2x2 joint r_j(x_new_j, x_j).
// Its row sums are fixed to the posterior marginal and its column sums to the
// prior marginal, leaving one free scalar s_j = r_j(1, 1). The expected
// number of matches at site j is 1 - rho_j - pi_j + 2 s_j.
//
// Given s_{j-1}, matching the posterior pair marginal of (x_new_{j-1},
// x_new_j) leaves one free split per previous value a, and the reachable s_j
// form an interval [L(s_{j-1}), U(s_{j-1})] with L convex and U concave
// piecewise linear. Backward value functions are therefore concave piecewise
// linear; they are represented exactly by their breakpoints and maximised by
// clamping the unconstrained maximiser into the reachable interval.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "bayesupdate/distributions.hpp"
#include "bayesupdate/errors.hpp"
#include "bayesupdate/hmm_core.hpp"

namespace bayesupdate {

using Eigen::Matrix2d;

/// q1(x, x_new) is the law of x_new_1 given x_1.
/// site[j - 2][a](b, c) = q(x_new_j = c | x_new_{j-1} = a, x_j = b).
struct TransitionPolicy {
  Matrix2d q1 = Matrix2d::Identity();
  std::vector<std::array<Matrix2d, 2>> site;
  /// 1-based sites where the conditional-independence rows were used because
  /// a prior or posterior marginal was degenerate.
  std::vector<int> fallback_sites;
  /// 1-based sites whose value function exceeded the breakpoint budget and
  /// was resolved on a uniform grid instead.
  std::vector<int> grid_sites;

  int length() const noexcept { return static_cast<int>(site.size()) + 1; }
};

/// Per-site joints r_j(x_new_j, x_j) and per-edge joints of
/// (x_new_j, x_new_{j+1}); edge[j - 1] couples sites j and j + 1.
struct JointTable {
  std::vector<Matrix2d> site;
  std::vector<Matrix2d> edge;
};

inline TransitionPolicy identity_policy(int n) {
  TransitionPolicy p;
  p.q1 = Matrix2d::Identity();
  p.site.assign(static_cast<std::size_t>(n - 1), {Matrix2d::Identity(), Matrix2d::Identity()});
  return p;
}

/// Ignores x entirely and follows the posterior chain.
inline TransitionPolicy conditional_independence_policy(const ChainPosterior& posterior) {
  detail::require(posterior.initial.size() == 2, "policy: binary chains only");
  TransitionPolicy p;
  for (int b = 0; b < 2; ++b) p.q1.row(b) = posterior.initial.transpose();
  for (const MatrixXd& t : posterior.transitions) {
    std::array<Matrix2d, 2> rows;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) rows[a].row(b) = t.row(a);
    }
    p.site.push_back(rows);
  }
  return p;
}

inline void validate(const TransitionPolicy& p, double tol = 1e-10) {
  const auto check = [tol](const Matrix2d& m) {
    for (int r = 0; r < 2; ++r) {
      detail::require(std::abs(m.row(r).sum() - 1.0) <= tol, "TransitionPolicy: row does not sum to one");
      detail::require(m.row(r).minCoeff() >= -tol && m.row(r).maxCoeff() <= 1.0 + tol,
                      "TransitionPolicy: probability outside [0, 1]");
    }
  };
  check(p.q1);
  for (const auto& s : p.site) {
    check(s[0]);
    check(s[1]);
  }
}

/// Exact forward marginalisation of the joint law prior(x) q(x_new | x).
inline JointTable propagate_joints(const MarkovChainParams& theta, const TransitionPolicy& policy) {
  detail::require(theta.categories() == 2, "propagate_joints: binary chains only");
  detail::require(theta.length() == policy.length(), "propagate_joints: length mismatch");
  const int n = theta.length();
  JointTable out;
  out.site.reserve(static_cast<std::size_t>(n));
  out.edge.reserve(static_cast<std::size_t>(n - 1));
  Matrix2d r;
  for (int c = 0; c < 2; ++c) {
    for (int x = 0; x < 2; ++x) r(c, x) = theta.initial[x] * policy.q1(x, c);
  }
  out.site.push_back(r);
  for (int j = 1; j < n; ++j) {
    const MatrixXd& p = theta.transitions[static_cast<std::size_t>(j - 1)];
    const auto& q = policy.site[static_cast<std::size_t>(j - 1)];
    Matrix2d next = Matrix2d::Zero();
    Matrix2d edge = Matrix2d::Zero();
    for (int a = 0; a < 2; ++a) {
      for (int k = 0; k < 2; ++k) {
        for (int b = 0; b < 2; ++b) {
          const double w = r(a, k) * p(k, b);
          for (int c = 0; c < 2; ++c) {
            next(c, b) += w * q[a](b, c);
            edge(a, c) += w * q[a](b, c);
          }
        }
      }
    }
    out.edge.push_back(edge);
    out.site.push_back(next);
    r = next;
  }
  return out;
}

/// Largest absolute deviation between the achieved joints of adjacent updated
/// components and the posterior pair marginals (plus the first-site marginal).
inline double verify_bivariate_constraint(const MarkovChainParams& theta, const ChainPosterior& posterior,
                                          const TransitionPolicy& policy) {
  const JointTable joints = propagate_joints(theta, policy);
  double dev = 0.0;
  const Eigen::Vector2d first = joints.site[0].rowwise().sum();
  dev = std::max(dev, (first - posterior.initial).cwiseAbs().maxCoeff());
  for (std::size_t j = 0; j < joints.edge.size(); ++j) {
    dev = std::max(dev, (joints.edge[j] - posterior.pair_marginals[j]).cwiseAbs().maxCoeff());
  }
  return dev;
}

inline double expected_matches(const MarkovChainParams& theta, const TransitionPolicy& policy) {
  const JointTable joints = propagate_joints(theta, policy);
  double total = 0.0;
  for (const Matrix2d& r : joints.site) total += r(0, 0) + r(1, 1);
  return total;
}

/// Updated-component marginals P(x_new_j = 1) implied by (theta, policy).
inline VectorXd achieved_marginals(const MarkovChainParams& theta, const TransitionPolicy& policy) {
  const JointTable joints = propagate_joints(theta, policy);
  VectorXd out(static_cast<Eigen::Index>(joints.site.size()));
  for (std::size_t j = 0; j < joints.site.size(); ++j) out[static_cast<Eigen::Index>(j)] = joints.site[j].row(1).sum();
  return out;
}

inline StateVector apply_policy(const TransitionPolicy& policy, const StateVector& x, RngStream& rng) {
  detail::require(static_cast<int>(x.size()) == policy.length(), "apply_policy: length mismatch");
  StateVector out(x.size());
  const auto draw = [&rng](double p_one) { return rng.uniform() < p_one ? 1 : 0; };
  detail::require(x[0] == 0 || x[0] == 1, "apply_policy: state must be binary");
  out[0] = draw(policy.q1(x[0], 1));
  for (std::size_t j = 1; j < x.size(); ++j) {
    detail::require(x[j] == 0 || x[j] == 1, "apply_policy: state must be binary");
    out[j] = draw(policy.site[j - 1][out[j - 1]](x[j], 1));
  }
  return out;
}

struct PolicyOptions {
  /// Marginal probabilities below this are treated as degenerate.
  double degenerate_tolerance = 1e-10;
  /// Maximum breakpoints kept per value function before switching to a grid.
  std::size_t breakpoint_budget = 4096;
  double grid_step = 1e-4;
};

namespace detail {

/// Piecewise-linear function on [x.front(), x.back()], linear between points.
struct PiecewiseLinear {
  std::vector<double> x;
  std::vector<double> y;

  double operator()(double t) const {
    if (x.size() == 1 || t <= x.front()) return y.front();
    if (t >= x.back()) return y.back();
    const auto it = std::upper_bound(x.begin(), x.end(), t);
    const std::size_t hi = static_cast<std::size_t>(it - x.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - x[lo]) / (x[hi] - x[lo]);
    return y[lo] + w * (y[hi] - y[lo]);
  }

  /// Largest maximiser (ties within `tol` resolve to the right).
  double argmax_right(double tol = 1e-13) const {
    const double best = *std::max_element(y.begin(), y.end());
    for (std::size_t i = x.size(); i-- > 0;) {
      if (y[i] >= best - tol * std::max(1.0, std::abs(best))) return x[i];
    }
    return x.back();
  }

  void prune(double tol = 1e-13) {
    std::vector<double> nx{x.front()};
    std::vector<double> ny{y.front()};
    for (std::size_t i = 1; i + 1 < x.size(); ++i) {
      const double x0 = nx.back();
      const double y0 = ny.back();
      const double interp = y0 + (x[i] - x0) / (x[i + 1] - x0) * (y[i + 1] - y0);
      if (std::abs(interp - y[i]) > tol * std::max(1.0, std::abs(y[i]))) {
        nx.push_back(x[i]);
        ny.push_back(y[i]);
      }
    }
    if (x.size() > 1) {
      nx.push_back(x.back());
      ny.push_back(y.back());
    }
    x = std::move(nx);
    y = std::move(ny);
  }
};

/// Reachable-interval data for the edge entering one site, as affine
/// functions of the incoming state s = r_{j-1}(1, 1).
struct EdgeGeometry {
  // u(a, 1)(s) = alpha[a] + beta[a] s
  std::array<double, 2> alpha{};
  std::array<double, 2> beta{};
  std::array<double, 2> prev_marginal{};  // P(x_new_{j-1} = a)
  Matrix2d pair;                          // posterior pair marginal (a, c)
  Matrix2d posterior_transition;          // posterior T*(a, c)
  bool degenerate = false;

  double u1(int a, double s) const { return alpha[a] + beta[a] * s; }
  double u0(int a, double s) const { return prev_marginal[a] - u1(a, s); }
  double lo(int a, double s) const { return std::max(0.0, u1(a, s) - pair(a, 0)); }
  double hi(int a, double s) const { return std::min(u1(a, s), pair(a, 1)); }
  double ci_next(double s) const {
    return u1(0, s) * posterior_transition(0, 1) + u1(1, s) * posterior_transition(1, 1);
  }
  double lower(double s) const { return degenerate ? ci_next(s) : lo(0, s) + lo(1, s); }
  double upper(double s) const { return degenerate ? ci_next(s) : hi(0, s) + hi(1, s); }

  /// Kinks of lower/upper in s.
  std::vector<double> kinks() const {
    std::vector<double> out;
    if (degenerate) return out;
    for (int a = 0; a < 2; ++a) {
      if (beta[a] == 0.0) continue;
      for (int c = 0; c < 2; ++c) out.push_back((pair(a, c) - alpha[a]) / beta[a]);
    }
    return out;
  }
};

struct Interval {
  double lo;
  double hi;
};

}  // namespace detail

/// Policy maximising the expected number of unchanged components subject to
/// every adjacent pair of updated components following the posterior pair
/// marginal. Ties are broken towards larger agreement at earlier sites.
inline TransitionPolicy optimal_policy(const MarkovChainParams& theta, const ChainPosterior& posterior,
                                       const PolicyOptions& opts = {}) {
  detail::require(theta.categories() == 2, "optimal_policy: binary chains only");
  const int n = theta.length();
  detail::require(static_cast<int>(posterior.marginals.rows()) == n, "optimal_policy: posterior length mismatch");

  const MatrixXd prior_marg = chain_marginals(theta);
  std::vector<double> pi(static_cast<std::size_t>(n));
  std::vector<double> rho(static_cast<std::size_t>(n));
  std::vector<bool> degenerate(static_cast<std::size_t>(n));
  std::vector<detail::Interval> domain(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    pi[uj] = prior_marg(j, 1);
    rho[uj] = posterior.marginals(j, 1);
    const double tol = opts.degenerate_tolerance;
    degenerate[uj] = std::min(pi[uj], 1.0 - pi[uj]) < tol || std::min(rho[uj], 1.0 - rho[uj]) < tol;
    domain[uj] = {std::max(0.0, rho[uj] + pi[uj] - 1.0), std::min(rho[uj], pi[uj])};
  }

  std::vector<detail::EdgeGeometry> edges(static_cast<std::size_t>(std::max(0, n - 1)));
  for (int j = 1; j < n; ++j) {
    const MatrixXd& p = theta.transitions[static_cast<std::size_t>(j - 1)];
    const double r = rho[static_cast<std::size_t>(j - 1)];
    const double q = pi[static_cast<std::size_t>(j - 1)];
    auto& e = edges[static_cast<std::size_t>(j - 1)];
    e.alpha = {(1.0 - r - q) * p(0, 1) + q * p(1, 1), r * p(0, 1)};
    e.beta = {p(0, 1) - p(1, 1), p(1, 1) - p(0, 1)};
    e.pair = posterior.pair_marginals[static_cast<std::size_t>(j - 1)];
    e.prev_marginal = {e.pair(0, 0) + e.pair(0, 1), e.pair(1, 0) + e.pair(1, 1)};
    e.posterior_transition = posterior.transitions[static_cast<std::size_t>(j - 1)];
    e.degenerate = degenerate[static_cast<std::size_t>(j)];
  }

  const auto reward = [&](int j, double s) {
    const auto uj = static_cast<std::size_t>(j);
    return 1.0 - rho[uj] - pi[uj] + 2.0 * s;
  };

  TransitionPolicy policy;

  // Backward sweep: value[j] is the best total over sites j..n as a function
  // of s_j; target[j] its largest maximiser.
  std::vector<detail::PiecewiseLinear> value(static_cast<std::size_t>(n));
  std::vector<double> target(static_cast<std::size_t>(n));
  {
    const auto& d = domain[static_cast<std::size_t>(n - 1)];
    value.back() = {{d.lo, d.hi}, {reward(n - 1, d.lo), reward(n - 1, d.hi)}};
    value.back().prune();
  }
  for (int j = n - 1; j >= 1; --j) {
    const auto uj = static_cast<std::size_t>(j);
    const auto& next = value[uj];
    const double t_star = next.argmax_right();
    target[uj] = t_star;
    const auto& e = edges[uj - 1];
    const auto& d = domain[uj - 1];
    const auto continuation = [&](double s) {
      const double lo = e.lower(s);
      const double hi = std::max(lo, e.upper(s));
      return next(std::clamp(t_star, lo, hi));
    };

    std::vector<double> cand{d.lo, d.hi};
    std::vector<double> cuts{d.lo, d.hi};
    for (double k : e.kinks()) {
      if (k > d.lo && k < d.hi) cuts.push_back(k);
    }
    std::sort(cuts.begin(), cuts.end());
    cand.insert(cand.end(), cuts.begin(), cuts.end());
    std::vector<double> levels = next.x;
    levels.push_back(t_star);
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      const double sa = cuts[c];
      const double sb = cuts[c + 1];
      if (!(sb > sa)) continue;
      const std::array<double, 2> fa{e.lower(sa), e.upper(sa)};
      const std::array<double, 2> fb{e.lower(sb), e.upper(sb)};
      for (int f = 0; f < 2; ++f) {
        for (double tau : levels) {
          const double da = fa[f] - tau;
          const double db = fb[f] - tau;
          if ((da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0)) {
            cand.push_back(sa + (sb - sa) * da / (da - db));
          }
        }
      }
    }
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end(),
                           [](double a, double b) { return std::abs(a - b) <= 1e-15; }),
               cand.end());
    if (cand.size() > opts.breakpoint_budget) {
      policy.grid_sites.push_back(j);  // value[j - 1] belongs to 1-based site j
      cand.clear();
      const double width = d.hi - d.lo;
      const auto steps = static_cast<std::size_t>(std::ceil(width / opts.grid_step));
      for (std::size_t g = 0; g <= steps; ++g) {
        cand.push_back(steps == 0 ? d.lo : d.lo + width * static_cast<double>(g) / static_cast<double>(steps));
      }
    }
    detail::PiecewiseLinear v;
    v.x = cand;
    v.y.reserve(cand.size());
    for (double s : cand) v.y.push_back(reward(j - 1, s) + continuation(s));
    v.prune();
    value[uj - 1] = std::move(v);
  }

  // Forward sweep.
  std::vector<double> s(static_cast<std::size_t>(n));
  if (degenerate[0]) {
    policy.fallback_sites.push_back(1);
    for (int b = 0; b < 2; ++b) policy.q1.row(b) = posterior.initial.transpose();
    s[0] = pi[0] * rho[0];
  } else {
    s[0] = std::clamp(value[0].argmax_right(), domain[0].lo, domain[0].hi);
    const double p11 = s[0] / pi[0];
    const double p01 = (rho[0] - s[0]) / (1.0 - pi[0]);
    policy.q1 << 1.0 - std::clamp(p01, 0.0, 1.0), std::clamp(p01, 0.0, 1.0), 1.0 - std::clamp(p11, 0.0, 1.0),
        std::clamp(p11, 0.0, 1.0);
  }

  constexpr double kTiny = 1e-300;
  for (int j = 1; j < n; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const auto& e = edges[uj - 1];
    const double sp = s[uj - 1];
    std::array<Matrix2d, 2> rows;
    if (e.degenerate) {
      policy.fallback_sites.push_back(j + 1);
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) rows[a].row(b) = e.posterior_transition.row(a);
      }
      s[uj] = e.ci_next(sp);
    } else {
      const double lo = e.lower(sp);
      const double hi = std::max(lo, e.upper(sp));
      s[uj] = std::clamp(target[uj], lo, hi);
      const double span = hi - lo;
      const double lambda = span > 0.0 ? (s[uj] - lo) / span : 0.0;
      for (int a = 0; a < 2; ++a) {
        const double part = e.lo(a, sp) + lambda * (e.hi(a, sp) - e.lo(a, sp));
        const double u1 = e.u1(a, sp);
        const double u0 = e.u0(a, sp);
        const double fallback = e.posterior_transition(a, 1);
        const double w1 = u1 > kTiny ? std::clamp(part / u1, 0.0, 1.0) : fallback;
        const double w0 = u0 > kTiny ? std::clamp((e.pair(a, 1) - part) / u0, 0.0, 1.0) : fallback;
        rows[a] << 1.0 - w0, w0, 1.0 - w1, w1;
      }
    }
    policy.site.push_back(rows);
  }
  return policy;
}

}  // namespace bayesupdate
