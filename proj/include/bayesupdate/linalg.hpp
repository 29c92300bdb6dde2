#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "bayesupdate/errors.hpp"

namespace bayesupdate {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd symmetrised(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

inline double relative_asymmetry(const MatrixXd& a) {
  const double scale = std::max(a.norm(), 1e-300);
  return (a - a.transpose()).norm() / scale;
}

/// Symmetric eigendecomposition a = V diag(values) V^T with eigenvalues
/// ascending and each eigenvector's largest-magnitude entry made positive.
struct SymmetricEigen {
  VectorXd values;
  MatrixXd vectors;
};

inline SymmetricEigen symmetric_eigen(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(symmetrised(a));
  if (solver.info() != Eigen::Success) {
    throw NumericalError("symmetric eigendecomposition did not converge");
  }
  SymmetricEigen out{solver.eigenvalues(), solver.eigenvectors()};
  for (Eigen::Index c = 0; c < out.vectors.cols(); ++c) {
    Eigen::Index idx = 0;
    out.vectors.col(c).cwiseAbs().maxCoeff(&idx);
    if (out.vectors(idx, c) < 0.0) out.vectors.col(c) *= -1.0;
  }
  return out;
}

/// Returns F with F F^T = a for a symmetric positive semidefinite matrix.
/// Eigenvalues in [-tol * max(1, |a|), 0) are treated as zero; anything more
/// negative is rejected.
inline MatrixXd psd_factor(const MatrixXd& a, double tol = 1e-10) {
  const SymmetricEigen eig = symmetric_eigen(a);
  const double scale = std::max(1.0, eig.values.cwiseAbs().maxCoeff());
  if (eig.values.size() > 0 && eig.values.minCoeff() < -tol * scale) {
    throw NumericalError("matrix is not positive semidefinite");
  }
  const VectorXd roots = eig.values.cwiseMax(0.0).cwiseSqrt();
  return eig.vectors * roots.asDiagonal();
}

/// Orthogonal factor W of the polar decomposition a = W P (P symmetric
/// positive definite), by Newton's iteration X <- (g X + X^{-T} / g) / 2
/// with Frobenius-norm scaling g. Equals U V^T for a = U S V^T. Throws if
/// a is singular to working precision.
inline MatrixXd polar_orthogonal_factor(const MatrixXd& a, int max_iter = 100) {
  const Eigen::Index n = a.rows();
  MatrixXd x = a;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::PartialPivLU<MatrixXd> lu(x);
    const MatrixXd inv = lu.inverse();
    if (!inv.allFinite() || std::abs(lu.determinant()) == 0.0) {
      throw NumericalError("polar decomposition: matrix is singular");
    }
    const double g = std::sqrt(inv.norm() / x.norm());
    const MatrixXd next = 0.5 * (g * x + inv.transpose() / g);
    const double change = (next - x).norm();
    x = next;
    if (change <= 1e-14 * std::sqrt(static_cast<double>(n))) return x;
  }
  throw NumericalError("polar decomposition did not converge");
}

inline double min_eigenvalue(const MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  return symmetric_eigen(a).values.minCoeff();
}

}  // namespace bayesupdate
