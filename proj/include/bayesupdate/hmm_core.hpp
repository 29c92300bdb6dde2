#pragma once

// First-order Markov chain assumed model for categorical state vectors, its
// exact posterior under site-wise observations, and the Dirichlet prior over
// the heterogeneous (per-site) transition rows.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bayesupdate/distributions.hpp"
#include "bayesupdate/errors.hpp"

namespace bayesupdate {

using StateVector = std::vector<int>;

/// Initial probabilities and, for each site j = 2..n, a K x K row-stochastic
/// matrix whose row k is the law of x_j given x_{j-1} = k.
/// transitions[j - 2] belongs to site j.
struct MarkovChainParams {
  VectorXd initial;
  std::vector<MatrixXd> transitions;

  int categories() const noexcept { return static_cast<int>(initial.size()); }
  int length() const noexcept { return static_cast<int>(transitions.size()) + 1; }

  static MarkovChainParams uniform(int n, int k) {
    MarkovChainParams p;
    p.initial = VectorXd::Constant(k, 1.0 / k);
    p.transitions.assign(static_cast<std::size_t>(n - 1), MatrixXd::Constant(k, k, 1.0 / k));
    return p;
  }
};

/// Checks shapes, entries in [0, 1] and row sums within `tol`.
inline void validate(const MarkovChainParams& p, double tol = 1e-12) {
  const int k = p.categories();
  detail::require(k >= 1, "MarkovChainParams: no categories");
  const auto check_row = [&](const auto& row) {
    detail::require(std::abs(row.sum() - 1.0) <= tol, "MarkovChainParams: row does not sum to one");
    detail::require(row.minCoeff() >= 0.0 && row.maxCoeff() <= 1.0,
                    "MarkovChainParams: probability outside [0, 1]");
  };
  check_row(p.initial);
  for (const MatrixXd& t : p.transitions) {
    detail::require(t.rows() == k && t.cols() == k, "MarkovChainParams: transition shape mismatch");
    for (Eigen::Index r = 0; r < k; ++r) check_row(t.row(r));
  }
}

/// Unconditional site marginals of the chain; row j is the law of x_{j+1}.
inline MatrixXd chain_marginals(const MarkovChainParams& p) {
  MatrixXd out(p.length(), p.categories());
  out.row(0) = p.initial.transpose();
  for (int j = 1; j < p.length(); ++j) {
    out.row(j) = out.row(j - 1) * p.transitions[static_cast<std::size_t>(j - 1)];
  }
  return out;
}

/// Per-site observation densities f(y_j | x_j = k), row j, column k, each row
/// scaled so its maximum is one (a common per-site factor cancels in every
/// posterior quantity).
struct SiteLikelihood {
  MatrixXd density;

  int length() const noexcept { return static_cast<int>(density.rows()); }
  int categories() const noexcept { return static_cast<int>(density.cols()); }

  static SiteLikelihood flat(int n, int k) { return {MatrixXd::Ones(n, k)}; }

  /// y_j | x_j = k ~ N(k, sigma2), evaluated in log space.
  static SiteLikelihood gaussian(const VectorXd& y, double sigma2, int k) {
    detail::require(sigma2 > 0.0, "SiteLikelihood: variance must be positive");
    SiteLikelihood out{MatrixXd(y.size(), k)};
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      double max_log = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double r = y[j] - c;
        out.density(j, c) = -0.5 * r * r / sigma2;
        max_log = std::max(max_log, out.density(j, c));
      }
      for (int c = 0; c < k; ++c) out.density(j, c) = std::exp(out.density(j, c) - max_log);
    }
    return out;
  }
};

/// Exact posterior of the chain given site observations. The posterior is
/// again a first-order chain (initial, transitions); marginals row j is the
/// law of x_{j+1}; pair_marginals[j] is the joint of (x_{j+1}, x_{j+2}).
struct ChainPosterior {
  VectorXd initial;
  std::vector<MatrixXd> transitions;
  MatrixXd marginals;
  std::vector<MatrixXd> pair_marginals;

  MarkovChainParams as_chain() const { return {initial, transitions}; }
};

/// Backward messages normalised per site, then the posterior chain built
/// forward: T*_j(a, b) ∝ P_j(a, b) L_j(b) beta_j(b).
inline ChainPosterior forward_backward(const MarkovChainParams& theta, const SiteLikelihood& lik) {
  const int n = theta.length();
  const int k = theta.categories();
  detail::require(lik.length() == n && lik.categories() == k, "forward_backward: dimension mismatch");

  // beta.row(j) ∝ f(y_{j+1..n} | x_j), with beta_n = 1.
  MatrixXd beta(n, k);
  beta.row(n - 1).setOnes();
  for (int j = n - 2; j >= 0; --j) {
    const VectorXd weighted = lik.density.row(j + 1).transpose().cwiseProduct(beta.row(j + 1).transpose());
    VectorXd b = theta.transitions[static_cast<std::size_t>(j)] * weighted;
    const double total = b.sum();
    if (!(total > 0.0)) throw NumericalError("forward_backward: zero likelihood");
    beta.row(j) = (b / total).transpose();
  }

  ChainPosterior post;
  VectorXd init = theta.initial.cwiseProduct(lik.density.row(0).transpose()).cwiseProduct(beta.row(0).transpose());
  const double z0 = init.sum();
  if (!(z0 > 0.0)) throw NumericalError("forward_backward: zero likelihood");
  post.initial = init / z0;

  post.transitions.reserve(static_cast<std::size_t>(n - 1));
  for (int j = 1; j < n; ++j) {
    const MatrixXd& p = theta.transitions[static_cast<std::size_t>(j - 1)];
    const VectorXd w = lik.density.row(j).transpose().cwiseProduct(beta.row(j).transpose());
    MatrixXd t = p * w.asDiagonal();
    for (int a = 0; a < k; ++a) {
      const double s = t.row(a).sum();
      if (s > 0.0) {
        t.row(a) /= s;
      } else {
        // Previous state has zero prior transition mass to any supported
        // state; fall back to the prior row so the chain stays well-formed.
        t.row(a) = p.row(a);
      }
    }
    post.transitions.push_back(std::move(t));
  }

  post.marginals.resize(n, k);
  post.marginals.row(0) = post.initial.transpose();
  post.pair_marginals.reserve(static_cast<std::size_t>(n - 1));
  for (int j = 1; j < n; ++j) {
    const MatrixXd& t = post.transitions[static_cast<std::size_t>(j - 1)];
    MatrixXd pair = post.marginals.row(j - 1).transpose().asDiagonal() * t;
    post.marginals.row(j) = pair.colwise().sum();
    post.pair_marginals.push_back(std::move(pair));
  }
  return post;
}

namespace detail {

inline int sample_categorical(const auto& probs, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  const int k = static_cast<int>(probs.size());
  for (int c = 0; c < k - 1; ++c) {
    acc += probs[c];
    if (u < acc) return c;
  }
  return k - 1;
}

}  // namespace detail

/// Ancestral sample of a chain.
inline StateVector chain_sample(const VectorXd& initial, const std::vector<MatrixXd>& transitions,
                                RngStream& rng) {
  StateVector x(transitions.size() + 1);
  x[0] = detail::sample_categorical(initial, rng);
  for (std::size_t j = 1; j < x.size(); ++j) {
    x[j] = detail::sample_categorical(transitions[j - 1].row(x[j - 1]), rng);
  }
  return x;
}

inline StateVector chain_sample(const MarkovChainParams& chain, RngStream& rng) {
  return chain_sample(chain.initial, chain.transitions, rng);
}

/// Dirichlet concentrations for theta_1 and for every (site j, previous
/// state k) row; alpha_transitions[j - 2].row(k) belongs to theta_j^k.
struct DirichletHyper {
  VectorXd alpha_initial;
  std::vector<MatrixXd> alpha_transitions;

  int categories() const noexcept { return static_cast<int>(alpha_initial.size()); }
  int length() const noexcept { return static_cast<int>(alpha_transitions.size()) + 1; }

  static DirichletHyper constant(int n, int k, double alpha) {
    return {VectorXd::Constant(k, alpha),
            std::vector<MatrixXd>(static_cast<std::size_t>(n - 1), MatrixXd::Constant(k, k, alpha))};
  }

  double total_mass() const {
    double s = alpha_initial.sum();
    for (const MatrixXd& a : alpha_transitions) s += a.sum();
    return s;
  }
};

inline void validate(const DirichletHyper& h) {
  detail::require(h.categories() >= 1, "DirichletHyper: no categories");
  detail::require(h.alpha_initial.minCoeff() > 0.0, "DirichletHyper: concentration must be > 0");
  for (const MatrixXd& a : h.alpha_transitions) {
    detail::require(a.rows() == h.categories() && a.cols() == h.categories(),
                    "DirichletHyper: block shape mismatch");
    detail::require(a.minCoeff() > 0.0, "DirichletHyper: concentration must be > 0");
  }
}

/// Adds the initial-state and transition counts of one state vector.
inline void add_counts(DirichletHyper& hyper, const StateVector& x, double weight = 1.0) {
  const int k = hyper.categories();
  detail::require(static_cast<int>(x.size()) == hyper.length(), "dirichlet_posterior: state length mismatch");
  for (int v : x) {
    if (v < 0 || v >= k) throw std::out_of_range("dirichlet_posterior: state value out of range");
  }
  hyper.alpha_initial[x[0]] += weight;
  for (std::size_t j = 1; j < x.size(); ++j) hyper.alpha_transitions[j - 1](x[j - 1], x[j]) += weight;
}

/// Conjugate update: each block gains the counts of its (previous, current)
/// state pairs over the conditioning vectors.
inline DirichletHyper dirichlet_posterior(const DirichletHyper& hyper,
                                          const std::vector<StateVector>& conditioning) {
  validate(hyper);
  DirichletHyper out = hyper;
  for (const StateVector& x : conditioning) add_counts(out, x);
  return out;
}

/// Independent Dirichlet draw for every block.
inline MarkovChainParams sample_chain_params(const DirichletHyper& hyper, RngStream& rng) {
  MarkovChainParams out;
  out.initial = dirichlet_sample(hyper.alpha_initial, rng);
  out.transitions.reserve(hyper.alpha_transitions.size());
  const int k = hyper.categories();
  for (const MatrixXd& a : hyper.alpha_transitions) {
    MatrixXd t(k, k);
    for (int r = 0; r < k; ++r) t.row(r) = dirichlet_sample(VectorXd(a.row(r).transpose()), rng).transpose();
    out.transitions.push_back(std::move(t));
  }
  return out;
}

/// Posterior-mean chain: every block is its normalised concentration.
inline MarkovChainParams dirichlet_mean(const DirichletHyper& hyper) {
  MarkovChainParams out;
  out.initial = hyper.alpha_initial / hyper.alpha_initial.sum();
  for (const MatrixXd& a : hyper.alpha_transitions) {
    out.transitions.push_back(a.array().colwise() / a.rowwise().sum().array());
  }
  return out;
}

/// Non-Bayesian point estimate: the posterior mean given all members.
inline MarkovChainParams estimate_theta_hmm(const DirichletHyper& hyper,
                                            const std::vector<StateVector>& ensemble) {
  detail::require(!ensemble.empty(), "estimate_theta_hmm: empty ensemble");
  return dirichlet_mean(dirichlet_posterior(hyper, ensemble));
}

/// Gibbs sampler for theta | (members except `exclude_index`), y. Alternates
/// x ~ posterior chain and theta ~ Dirichlet posterior given {x} and the
/// retained members; initialised from a Dirichlet draw given all members.
inline MarkovChainParams gibbs_theta_hmm(const DirichletHyper& hyper, const std::vector<StateVector>& ensemble,
                                         std::size_t exclude_index, const SiteLikelihood& lik, int n_iter,
                                         RngStream& rng) {
  detail::require(n_iter >= 1, "gibbs_theta_hmm: n_iter must be >= 1");
  detail::require(ensemble.size() >= 2, "gibbs_theta_hmm: need at least two members");
  detail::require(exclude_index < ensemble.size(), "gibbs_theta_hmm: exclude_index out of range");
  validate(hyper);

  DirichletHyper retained = hyper;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    if (i != exclude_index) add_counts(retained, ensemble[i]);
  }
  DirichletHyper all_members = retained;
  add_counts(all_members, ensemble[exclude_index]);

  MarkovChainParams theta = sample_chain_params(all_members, rng);
  for (int it = 0; it < n_iter; ++it) {
    const ChainPosterior post = forward_backward(theta, lik);
    const StateVector x = chain_sample(post.initial, post.transitions, rng);
    DirichletHyper conditional = retained;
    add_counts(conditional, x);
    theta = sample_chain_params(conditional, rng);
  }
  return theta;
}

}  // namespace bayesupdate
