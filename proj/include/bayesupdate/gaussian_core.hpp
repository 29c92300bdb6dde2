#pragma once

// Kalman algebra for the linear-Gaussian assumed model and the family of
// Gaussian updating maps  x_new = B x + shift + eps,  eps ~ N(0, S),
// which reproduce the assumed posterior N(mu*, Q*) whenever x ~ N(mu, Q).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>

#include "bayesupdate/distributions.hpp"
#include "bayesupdate/errors.hpp"
#include "bayesupdate/linalg.hpp"

namespace bayesupdate {

/// Assumed-model parameter (mu, Q). Q is a covariance; it may be singular
/// when it comes from an empirical estimate with fewer members than states.
struct GaussianParams {
  VectorXd mu;
  MatrixXd Q;

  Eigen::Index dim() const noexcept { return mu.size(); }
};

inline void validate(const GaussianParams& p) {
  detail::require(p.mu.size() > 0, "GaussianParams: empty mean");
  detail::require(p.Q.rows() == p.mu.size() && p.Q.cols() == p.mu.size(),
                  "GaussianParams: covariance dimension does not match mean");
}

/// Observation operator H (m x n) and noise covariance R (m x m).
struct LikelihoodSpec {
  MatrixXd H;
  SpdMatrix R;

  Eigen::Index obs_dim() const noexcept { return H.rows(); }

  static LikelihoodSpec identity(Eigen::Index n, double noise_variance) {
    return {MatrixXd::Identity(n, n), SpdMatrix(noise_variance * MatrixXd::Identity(n, n))};
  }
};

struct PosteriorGaussian {
  VectorXd mu_star;
  MatrixXd Q_star;
  MatrixXd K;
};

/// x_new = B x + shift + eps with eps ~ N(0, S).
struct UpdateMap {
  MatrixXd B;
  VectorXd shift;
  MatrixXd S;
};

/// Mahalanobis metric Sigma with a factor A satisfying A^T A = Sigma^{-1}.
class MahalanobisSpec {
 public:
  /// A is the upper-triangular Cholesky factor of Sigma^{-1}.
  explicit MahalanobisSpec(SpdMatrix sigma) : sigma_(std::move(sigma)) {
    const MatrixXd inv = sigma_.inverse();
    Eigen::LLT<MatrixXd> llt(inv);
    if (llt.info() != Eigen::Success) throw NumericalError("MahalanobisSpec: Sigma^{-1} not SPD");
    a_ = llt.matrixU();
  }

  /// Uses a caller-supplied factor; rejected unless A^T A matches Sigma^{-1}
  /// to 1e-9 relative (Frobenius).
  MahalanobisSpec(SpdMatrix sigma, MatrixXd a) : sigma_(std::move(sigma)), a_(std::move(a)) {
    detail::require(a_.rows() == sigma_.dim() && a_.cols() == sigma_.dim(),
                    "MahalanobisSpec: factor dimension mismatch");
    const MatrixXd inv = sigma_.inverse();
    if ((a_.transpose() * a_ - inv).norm() > 1e-9 * inv.norm()) {
      throw std::invalid_argument("MahalanobisSpec: A^T A does not equal Sigma^{-1}");
    }
  }

  static MahalanobisSpec euclidean(Eigen::Index n) { return MahalanobisSpec(SpdMatrix::identity(n)); }

  const SpdMatrix& sigma() const noexcept { return sigma_; }
  const MatrixXd& A() const noexcept { return a_; }
  MatrixXd metric() const { return a_.transpose() * a_; }
  Eigen::Index dim() const noexcept { return sigma_.dim(); }

 private:
  SpdMatrix sigma_;
  MatrixXd a_;
};

namespace detail {

inline void check_conforming(const GaussianParams& params, const LikelihoodSpec& lik) {
  validate(params);
  require(lik.H.cols() == params.dim(), "likelihood: H column count must equal state dimension");
  require(lik.R.dim() == lik.H.rows(), "likelihood: R dimension must equal H row count");
}

}  // namespace detail

namespace detail {

// Gain together with H Q, which the posterior covariance reuses.
inline std::pair<MatrixXd, MatrixXd> gain_and_hq(const GaussianParams& params, const LikelihoodSpec& lik) {
  check_conforming(params, lik);
  // Direct observation of every component is common enough to skip the products.
  const bool direct = lik.H.rows() == lik.H.cols() && lik.H.isIdentity(0.0);
  MatrixXd hq = direct ? params.Q : MatrixXd(lik.H * params.Q);
  const MatrixXd innovation =
      symmetrised(direct ? MatrixXd(hq + lik.R.matrix()) : MatrixXd(hq * lik.H.transpose() + lik.R.matrix()));
  Eigen::LLT<MatrixXd> llt(innovation);
  if (llt.info() != Eigen::Success) throw NumericalError("kalman_gain: innovation covariance is singular");
  MatrixXd k = llt.solve(hq).transpose();
  return {std::move(k), std::move(hq)};
}

}  // namespace detail

/// K = Q H^T (H Q H^T + R)^{-1}, via an SPD solve rather than an inverse.
inline MatrixXd kalman_gain(const GaussianParams& params, const LikelihoodSpec& lik) {
  return detail::gain_and_hq(params, lik).first;
}

/// mu* = mu + K (y - H mu), Q* = (I - K H) Q = Q - K (H Q).
inline PosteriorGaussian posterior_moments(const GaussianParams& params, const LikelihoodSpec& lik,
                                           const VectorXd& y) {
  auto [k, hq] = detail::gain_and_hq(params, lik);
  detail::require(y.size() == lik.obs_dim(), "posterior_moments: observation dimension mismatch");
  VectorXd mu_star = params.mu + k * (y - lik.H * params.mu);
  MatrixXd q_star = symmetrised(params.Q - k * hq);
  return {std::move(mu_star), std::move(q_star), std::move(k)};
}

/// Perturbed-observation update x + K (y - H x + eps), eps ~ N(0, R).
inline VectorXd stochastic_update(const VectorXd& x, const VectorXd& y, const MatrixXd& gain,
                                  const LikelihoodSpec& lik, RngStream& rng) {
  detail::require(x.size() == gain.rows() && y.size() == lik.obs_dim(),
                  "stochastic_update: dimension mismatch");
  const VectorXd eps = lik.R.cholesky_lower() * rng.normal_vector(lik.obs_dim());
  return x + gain * (y - lik.H * x + eps);
}

inline VectorXd stochastic_update(const VectorXd& x, const VectorXd& y, const GaussianParams& params,
                                  const LikelihoodSpec& lik, RngStream& rng) {
  return stochastic_update(x, y, kalman_gain(params, lik), lik, rng);
}

namespace detail {

inline UpdateMap map_from(const GaussianParams& params, const PosteriorGaussian& post, MatrixXd b,
                          MatrixXd s) {
  VectorXd shift = post.mu_star - b * params.mu;
  return {std::move(b), std::move(shift), std::move(s)};
}

}  // namespace detail

/// B = I - K H, S = (I - K H) Q (K H)^T: the map whose output law equals that
/// of the perturbed-observation update.
inline UpdateMap enkf_equivalent_map(const GaussianParams& params, const LikelihoodSpec& lik,
                                     const VectorXd& y) {
  const PosteriorGaussian post = posterior_moments(params, lik, y);
  const Eigen::Index n = params.dim();
  const MatrixXd kh = post.K * lik.H;
  MatrixXd b = MatrixXd::Identity(n, n) - kh;
  MatrixXd s = symmetrised(b * params.Q * kh.transpose());
  return detail::map_from(params, post, std::move(b), std::move(s));
}

/// B = 0, S = Q*: draws straight from the assumed posterior.
inline UpdateMap conditional_independence_map(const GaussianParams& params, const LikelihoodSpec& lik,
                                              const VectorXd& y) {
  const PosteriorGaussian post = posterior_moments(params, lik, y);
  const Eigen::Index n = params.dim();
  return detail::map_from(params, post, MatrixXd::Zero(n, n), post.Q_star);
}

/// Maximiser of tr(Btilde Z) subject to I - Btilde^T Btilde being positive
/// semidefinite. With Z = P G F^T the unique maximiser is F P^T, an
/// orthogonal matrix.
inline MatrixXd theorem1_solve(const MatrixXd& z) {
  detail::require(z.rows() == z.cols() && z.rows() > 0, "theorem1_solve: Z must be square");
  Eigen::JacobiSVD<MatrixXd> svd(z, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const VectorXd& sv = svd.singularValues();
  if (!(sv.minCoeff() > 1e-12 * sv.maxCoeff())) {
    throw NumericalError("theorem1_solve: Z is rank deficient");
  }
  return svd.matrixV() * svd.matrixU().transpose();
}

/// tr(A B Q A^T).
inline double trace_objective(const MatrixXd& b, const MahalanobisSpec& metric, const MatrixXd& q) {
  detail::require(b.rows() == metric.dim() && b.cols() == metric.dim() && q.rows() == metric.dim(),
                  "trace_objective: dimension mismatch");
  const MatrixXd& a = metric.A();
  return (a * b * q * a.transpose()).trace();
}

/// Tolerances for the square-root construction.
struct SqrtMapOptions {
  /// Eigenvalues of Q below this fraction of the largest are treated as a
  /// null space; the map is then built on the range of Q.
  double rank_tolerance = 1e-10;
  /// Floor (relative to the largest) applied before inverse square roots.
  double eigen_clip = 1e-12;
};

/// B minimising E[(x_new - x)^T Sigma^{-1} (x_new - x)] over square-root maps
/// B Q B^T = Q*. With Q = V D V^T and Q* = U Lambda U^T:
///   Z = Lambda^{1/2} U^T A^T A Q V D^{-1/2},  Z = P G F^T,
///   B = U Lambda^{1/2} P F^T D^{-1/2} V^T.
/// When Q is rank deficient the same construction runs on the range of Q
/// (which contains the range of Q*) and B vanishes on the null space.
inline MatrixXd optimal_sqrt_transform(const MatrixXd& q, const MatrixXd& q_star, const MatrixXd& metric,
                                       const SqrtMapOptions& opts = {}) {
  const Eigen::Index n = q.rows();
  const SymmetricEigen prior = symmetric_eigen(q);
  const double dmax = prior.values.maxCoeff();
  if (!(dmax > 0.0)) throw NumericalError("optimal_sqrt_map: prior covariance is zero");

  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < n; ++i) rank += prior.values[i] > opts.rank_tolerance * dmax ? 1 : 0;
  // Eigenvalues are ascending; the range is spanned by the last `rank` vectors.
  const MatrixXd vr = prior.vectors.rightCols(rank);
  const VectorXd d = prior.values.tail(rank).cwiseMax(opts.eigen_clip * dmax);

  const MatrixXd post_reduced = symmetrised(vr.transpose() * q_star * vr);
  const SymmetricEigen post = symmetric_eigen(post_reduced);
  const double lmax = post.values.maxCoeff();
  if (!(lmax > 0.0)) throw NumericalError("optimal_sqrt_map: posterior covariance is zero");
  const VectorXd lambda = post.values.cwiseMax(opts.eigen_clip * lmax);

  const MatrixXd metric_reduced = vr.transpose() * metric * vr;
  const VectorXd d_sqrt = d.cwiseSqrt();
  const VectorXd l_sqrt = lambda.cwiseSqrt();
  const MatrixXd z = l_sqrt.asDiagonal() * post.vectors.transpose() * metric_reduced * d_sqrt.asDiagonal();
  // theorem1_solve(z) = F P^T is the orthogonal polar factor of z^T.
  const MatrixXd btilde = polar_orthogonal_factor(z.transpose());
  const MatrixXd b_reduced = post.vectors * l_sqrt.asDiagonal() * btilde.transpose() *
                             d_sqrt.cwiseInverse().asDiagonal();
  return vr * b_reduced * vr.transpose();
}

inline UpdateMap optimal_sqrt_map(const GaussianParams& params, const LikelihoodSpec& lik,
                                  const VectorXd& y, const MahalanobisSpec& metric,
                                  const SqrtMapOptions& opts = {}) {
  detail::require(metric.dim() == params.dim(), "optimal_sqrt_map: metric dimension mismatch");
  const PosteriorGaussian post = posterior_moments(params, lik, y);
  MatrixXd b = optimal_sqrt_transform(params.Q, post.Q_star, metric.metric(), opts);
  const Eigen::Index n = params.dim();
  return detail::map_from(params, post, std::move(b), MatrixXd::Zero(n, n));
}

/// An UpdateMap with its noise factor precomputed, for repeated application.
class PreparedUpdate {
 public:
  explicit PreparedUpdate(UpdateMap map) : map_(std::move(map)) {
    detail::require(map_.B.rows() == map_.B.cols() && map_.shift.size() == map_.B.rows() &&
                        map_.S.rows() == map_.B.rows() && map_.S.cols() == map_.B.rows(),
                    "UpdateMap: dimension mismatch");
    if (!map_.S.isZero(0.0)) noise_factor_ = psd_factor(map_.S);
  }

  VectorXd apply(const VectorXd& x, RngStream& rng) const {
    detail::require(x.size() == map_.B.cols(), "apply_update_map: dimension mismatch");
    VectorXd out = map_.B * x + map_.shift;
    if (noise_factor_) out += *noise_factor_ * rng.normal_vector(noise_factor_->cols());
    return out;
  }

  const UpdateMap& map() const noexcept { return map_; }

 private:
  UpdateMap map_;
  std::optional<MatrixXd> noise_factor_;
};

inline VectorXd apply_update_map(const UpdateMap& map, const VectorXd& x, RngStream& rng) {
  return PreparedUpdate(map).apply(x, rng);
}

/// Closed-form E[(x_new - x)^T Sigma^{-1} (x_new - x)] for x ~ N(mu, Q):
/// tr(A (B - I) Q (B - I)^T A^T) + tr(A S A^T) + |A K (y - H mu)|^2.
inline double expected_displacement(const UpdateMap& map, const GaussianParams& params,
                                    const MahalanobisSpec& metric) {
  const Eigen::Index n = params.dim();
  const MatrixXd& a = metric.A();
  const MatrixXd bm = map.B - MatrixXd::Identity(n, n);
  const VectorXd mean_shift = map.B * params.mu + map.shift - params.mu;
  return (a * bm * params.Q * bm.transpose() * a.transpose()).trace() +
         (a * map.S * a.transpose()).trace() + (a * mean_shift).squaredNorm();
}

/// Exact output law N(B mu + shift, B Q B^T + S) of a map applied to N(mu, Q).
inline std::pair<VectorXd, MatrixXd> output_moments(const UpdateMap& map, const GaussianParams& params) {
  return {map.B * params.mu + map.shift, symmetrised(map.B * params.Q * map.B.transpose() + map.S)};
}

}  // namespace bayesupdate
