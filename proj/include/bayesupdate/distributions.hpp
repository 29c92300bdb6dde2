#pragma once

// Seeded random streams and the handful of distributions the filters need:
// multivariate normal, inverse Wishart, Dirichlet, and the Student-t cdf and
// quantile used by the heavy-tailed forward model.

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

#include "bayesupdate/errors.hpp"
#include "bayesupdate/linalg.hpp"

namespace bayesupdate {

/// A reproducible random stream. Two streams built from the same
/// (seed, stream_id) produce identical sequences; distinct stream ids are
/// decorrelated through std::seed_seq mixing.
class RngStream {
 public:
  using engine_type = std::mt19937_64;

  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  engine_type& engine() noexcept { return engine_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  VectorXd normal_vector(Eigen::Index n) {
    VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

 private:
  static engine_type make_engine(std::uint64_t seed, std::uint64_t stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32), 0x9e3779b9u};
    return engine_type(seq);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  engine_type engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Packs experiment coordinates into a stream id. Field widths: replicate 24
/// bits, time 12 bits, member 20 bits, purpose 8 bits.
inline std::uint64_t make_stream_id(std::uint64_t replicate, std::uint64_t time,
                                    std::uint64_t member, std::uint64_t purpose) {
  return ((replicate & 0xFFFFFFull) << 40) | ((time & 0xFFFull) << 28) |
         ((member & 0xFFFFFull) << 8) | (purpose & 0xFFull);
}

/// Dense symmetric positive definite matrix together with its lower Cholesky
/// factor.
class SpdMatrix {
 public:
  static constexpr double kSymmetryTolerance = 1e-12;

  SpdMatrix() = default;

  /// Validates symmetry (relative 1e-12) and positive definiteness; the
  /// stored matrix is exactly symmetric.
  explicit SpdMatrix(const MatrixXd& m) {
    detail::require(m.rows() == m.cols() && m.rows() > 0, "SpdMatrix: must be square and non-empty");
    if (relative_asymmetry(m) > kSymmetryTolerance) {
      throw std::invalid_argument("SpdMatrix: matrix is not symmetric");
    }
    matrix_ = symmetrised(m);
    Eigen::LLT<MatrixXd> llt(matrix_);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("SpdMatrix: matrix is not positive definite");
    }
    lower_ = llt.matrixL();
  }

  /// Symmetrises first, then validates.
  static SpdMatrix symmetrise_from(const MatrixXd& m) { return SpdMatrix(symmetrised(m)); }

  static SpdMatrix identity(Eigen::Index n) { return SpdMatrix(MatrixXd::Identity(n, n)); }

  Eigen::Index dim() const noexcept { return matrix_.rows(); }
  const MatrixXd& matrix() const noexcept { return matrix_; }
  /// L with L L^T = matrix().
  const MatrixXd& cholesky_lower() const noexcept { return lower_; }

  MatrixXd inverse() const {
    const MatrixXd linv =
        lower_.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(dim(), dim()));
    return symmetrised(linv.transpose() * linv);
  }

 private:
  MatrixXd matrix_;
  MatrixXd lower_;
};

/// mean + L z with L L^T = cov.
inline VectorXd mvn_sample(const VectorXd& mean, const SpdMatrix& cov, RngStream& rng) {
  detail::require(mean.size() == cov.dim(), "mvn_sample: dimension mismatch");
  return mean + cov.cholesky_lower() * rng.normal_vector(mean.size());
}

/// mean + F z for any factor F of the covariance (F F^T = cov).
inline VectorXd mvn_sample_with_factor(const VectorXd& mean, const MatrixXd& factor,
                                       RngStream& rng) {
  detail::require(mean.size() == factor.rows(), "mvn_sample: dimension mismatch");
  return mean + factor * rng.normal_vector(factor.cols());
}

/// An inverse-Wishart draw together with a factor G, G G^T = draw.
struct InvWishartDraw {
  SpdMatrix value;
  MatrixXd factor;
};

inline void check_wishart_dof(Eigen::Index dim, double nu) {
  if (!(nu > static_cast<double>(dim) - 1.0)) {
    throw std::invalid_argument("inverse Wishart: degrees of freedom must exceed dim - 1");
  }
}

namespace detail {

/// Factor G of a draw Q = G G^T ~ W^{-1}(V, nu). Bartlett-samples
/// W ~ W(V^{-1}, nu) = C^{-T} A A^T C^{-1} with V = C C^T, so G = C A^{-T}
/// and no dense inverse is formed. Non-integer nu enters through gamma
/// (chi-square) diagonal entries.
inline MatrixXd inv_wishart_factor(const SpdMatrix& v, double nu, RngStream& rng) {
  const Eigen::Index n = v.dim();
  check_wishart_dof(n, nu);
  MatrixXd bartlett = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double dof = nu - static_cast<double>(i);
    bartlett(i, i) = std::sqrt(2.0 * rng.gamma(0.5 * dof));
    for (Eigen::Index j = 0; j < i; ++j) bartlett(i, j) = rng.normal();
  }
  // G = C A^{-T}  <=>  A G^T = C^T.
  return bartlett.triangularView<Eigen::Lower>().solve(MatrixXd(v.cholesky_lower().transpose())).transpose();
}

}  // namespace detail

inline InvWishartDraw inv_wishart_sample_with_factor(const SpdMatrix& v, double nu,
                                                     RngStream& rng) {
  MatrixXd g = detail::inv_wishart_factor(v, nu, rng);
  MatrixXd q = symmetrised(g * g.transpose());
  return InvWishartDraw{SpdMatrix(q), std::move(g)};
}

inline SpdMatrix inv_wishart_sample(const SpdMatrix& v, double nu, RngStream& rng) {
  return inv_wishart_sample_with_factor(v, nu, rng).value;
}

inline VectorXd dirichlet_sample(std::span<const double> alpha, RngStream& rng) {
  detail::require(!alpha.empty(), "dirichlet_sample: empty concentration");
  VectorXd out(static_cast<Eigen::Index>(alpha.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (!(alpha[i] > 0.0)) throw std::invalid_argument("dirichlet_sample: concentration must be > 0");
    out[static_cast<Eigen::Index>(i)] = rng.gamma(alpha[i]);
    total += out[static_cast<Eigen::Index>(i)];
  }
  if (!(total > 0.0)) throw NumericalError("dirichlet_sample: all gamma variates underflowed");
  return out / total;
}

inline VectorXd dirichlet_sample(const VectorXd& alpha, RngStream& rng) {
  return dirichlet_sample(std::span<const double>(alpha.data(), static_cast<std::size_t>(alpha.size())), rng);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Student-t cdf with real-valued degrees of freedom.
inline double student_t_cdf(double x, double nu) {
  if (!(nu > 0.0)) throw std::domain_error("student_t_cdf: nu must be positive");
  return boost::math::cdf(boost::math::students_t_distribution<double>(nu), x);
}

/// Inverse of student_t_cdf.
inline double student_t_quantile(double p, double nu) {
  if (!(nu > 0.0)) throw std::domain_error("student_t_quantile: nu must be positive");
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("student_t_quantile: p must lie in (0, 1)");
  return boost::math::quantile(boost::math::students_t_distribution<double>(nu), p);
}

}  // namespace bayesupdate
