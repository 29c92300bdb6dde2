#pragma once

// Normal-inverse-Wishart layer over the Gaussian assumed model and the three
// ways of producing a parameter (mu, Q) for one ensemble member.

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <vector>

#include "bayesupdate/distributions.hpp"
#include "bayesupdate/errors.hpp"
#include "bayesupdate/gaussian_core.hpp"

namespace bayesupdate {

/// mu | Q ~ N(mu0, Q / kappa),  Q ~ W^{-1}(V, nu).
struct NIWHyper {
  VectorXd mu0;
  double kappa = 1.0;
  double nu = 1.0;
  SpdMatrix V;

  Eigen::Index dim() const noexcept { return mu0.size(); }

  /// mu0 = 0, V = (nu - n - 1) I: a vague prior with E[Q] = I.
  static NIWHyper vague(Eigen::Index n, double kappa, double nu_offset) {
    const double nu = static_cast<double>(n) + nu_offset;
    return {VectorXd::Zero(n), kappa, nu, SpdMatrix((nu - static_cast<double>(n) - 1.0) * MatrixXd::Identity(n, n))};
  }
};

inline void validate(const NIWHyper& h) {
  detail::require(h.mu0.size() > 0 && h.V.dim() == h.mu0.size(), "NIWHyper: dimension mismatch");
  detail::require(h.kappa > 0.0, "NIWHyper: kappa must be positive");
  detail::require(h.nu > static_cast<double>(h.dim()) - 1.0, "NIWHyper: nu must exceed n - 1");
}

/// Forecast ensemble; column i is member i.
struct Ensemble {
  MatrixXd members;
  int time_index = 0;

  Eigen::Index size() const noexcept { return members.cols(); }
  Eigen::Index dim() const noexcept { return members.rows(); }
};

namespace detail {

/// Column order sorted lexicographically, so that accumulations do not
/// depend on how the caller ordered the samples.
inline std::vector<Eigen::Index> canonical_order(const MatrixXd& samples) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(samples.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
      if (samples(r, a) != samples(r, b)) return samples(r, a) < samples(r, b);
    }
    return false;
  });
  return order;
}

}  // namespace detail

/// Conjugate update of the NIW hyperparameters given the columns of
/// `samples`:
///   nu' = nu + M, kappa' = kappa + M, mu0' = (kappa mu0 + M xbar)/(kappa + M),
///   V' = V + C + kappa M/(kappa + M) (xbar - mu0)(xbar - mu0)^T.
inline NIWHyper niw_posterior(const NIWHyper& hyper, const MatrixXd& samples) {
  validate(hyper);
  detail::require(samples.cols() > 0, "niw_posterior: no samples");
  detail::require(samples.rows() == hyper.dim(), "niw_posterior: sample dimension mismatch");
  const auto order = detail::canonical_order(samples);
  const double m = static_cast<double>(samples.cols());
  VectorXd sum = VectorXd::Zero(hyper.dim());
  for (Eigen::Index idx : order) sum += samples.col(idx);
  const VectorXd xbar = sum / m;
  MatrixXd centred(samples.rows(), samples.cols());
  for (std::size_t k = 0; k < order.size(); ++k) {
    centred.col(static_cast<Eigen::Index>(k)) = samples.col(order[k]) - xbar;
  }
  const MatrixXd scatter = centred * centred.transpose();
  const VectorXd diff = xbar - hyper.mu0;
  const double kappa_new = hyper.kappa + m;
  MatrixXd v_new = hyper.V.matrix() + scatter + (hyper.kappa * m / kappa_new) * diff * diff.transpose();
  return {(hyper.kappa * hyper.mu0 + m * xbar) / kappa_new, kappa_new, hyper.nu + m,
          SpdMatrix::symmetrise_from(v_new)};
}

/// Q ~ W^{-1}(V, nu), then mu | Q ~ N(mu0, Q / kappa).
inline GaussianParams sample_niw(const NIWHyper& hyper, RngStream& rng) {
  const MatrixXd g = detail::inv_wishart_factor(hyper.V, hyper.nu, rng);
  VectorXd mu = mvn_sample_with_factor(hyper.mu0, g / std::sqrt(hyper.kappa), rng);
  return {std::move(mu), symmetrised(g * g.transpose())};
}

/// Direct draw from the NIW posterior given every member, ignoring y.
inline GaussianParams sample_theta_all_members(const NIWHyper& hyper, const Ensemble& ensemble,
                                               RngStream& rng) {
  detail::require(ensemble.size() >= 2, "sample_theta_all_members: need at least two members");
  return sample_niw(niw_posterior(hyper, ensemble.members), rng);
}

/// Sample mean and unbiased sample covariance; a singular covariance is
/// returned unchanged.
inline GaussianParams empirical_estimate(const Ensemble& ensemble) {
  detail::require(ensemble.size() >= 2, "empirical_estimate: need at least two members");
  const double m = static_cast<double>(ensemble.size());
  VectorXd mean = ensemble.members.rowwise().mean();
  const MatrixXd centred = ensemble.members.colwise() - mean;
  MatrixXd cov = symmetrised(centred * centred.transpose() / (m - 1.0));
  return {std::move(mean), std::move(cov)};
}

/// Two-block Gibbs sampler targeting theta | (all members except
/// `exclude_index`), y. Alternates x ~ N(mu*, Q*) and theta ~ NIW posterior
/// given {x} and the retained members; starts from a draw given all members
/// and returns the state after `n_iter` sweeps.
inline GaussianParams gibbs_theta_excluding(const NIWHyper& hyper, const Ensemble& ensemble,
                                            Eigen::Index exclude_index, const LikelihoodSpec& lik,
                                            const VectorXd& y, int n_iter, RngStream& rng) {
  detail::require(n_iter >= 1, "gibbs_theta_excluding: n_iter must be >= 1");
  detail::require(ensemble.size() >= 2, "gibbs_theta_excluding: need at least two members");
  detail::require(exclude_index >= 0 && exclude_index < ensemble.size(),
                  "gibbs_theta_excluding: exclude_index out of range");
  const Eigen::Index m = ensemble.size();
  MatrixXd conditioning(ensemble.dim(), m);
  for (Eigen::Index i = 0, c = 0; i < m; ++i) {
    if (i != exclude_index) conditioning.col(c++) = ensemble.members.col(i);
  }
  GaussianParams theta = sample_theta_all_members(hyper, ensemble, rng);
  for (int it = 0; it < n_iter; ++it) {
    const PosteriorGaussian post = posterior_moments(theta, lik, y);
    conditioning.col(m - 1) = mvn_sample(post.mu_star, SpdMatrix::symmetrise_from(post.Q_star), rng);
    theta = sample_niw(niw_posterior(hyper, conditioning), rng);
  }
  return theta;
}

}  // namespace bayesupdate
