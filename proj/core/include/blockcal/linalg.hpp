#pragma once

#include <Eigen/Dense>
#include <string>

namespace blockcal {

// Lower-triangular Cholesky factor of a symmetric positive definite matrix,
// together with the diagonal jitter that was needed to factor it.
struct Chol {
  Eigen::MatrixXd L;
  double jitter = 0.0;

  double logdet() const;  // log determinant of the (jittered) matrix
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;         // A^{-1} b
  Eigen::MatrixXd solve_mat(const Eigen::MatrixXd& B) const;     // A^{-1} B
  Eigen::VectorXd half_solve(const Eigen::VectorXd& b) const;    // L^{-1} b
  Eigen::MatrixXd half_solve_mat(const Eigen::MatrixXd& B) const;
};

// Factor A, escalating diagonal jitter eps * mean(diag(A)) through
// eps = 1e-10, 1e-9, ..., 1e-6 before giving up with NotPositiveDefinite.
Chol chol_with_jitter(const Eigen::MatrixXd& A, const std::string& what = "matrix");

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Chol& cov);

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

// Symmetric square root / inverse square root via eigendecomposition.
// Eigenvalues are floored at 1e-12 to guard against roundoff negatives.
Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& A);
Eigen::MatrixXd sym_inv_sqrt(const Eigen::MatrixXd& A);
Eigen::MatrixXd sym_inverse(const Eigen::MatrixXd& A);

}  // namespace blockcal
