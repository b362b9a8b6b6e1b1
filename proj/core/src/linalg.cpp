#include "blockcal/linalg.hpp"

#include <cmath>

#include "blockcal/errors.hpp"

namespace blockcal {

double Chol::logdet() const {
  return 2.0 * L.diagonal().array().log().sum();
}

Eigen::VectorXd Chol::solve(const Eigen::VectorXd& b) const {
  Eigen::VectorXd y = L.triangularView<Eigen::Lower>().solve(b);
  return L.transpose().triangularView<Eigen::Upper>().solve(y);
}

Eigen::MatrixXd Chol::solve_mat(const Eigen::MatrixXd& B) const {
  Eigen::MatrixXd Y = L.triangularView<Eigen::Lower>().solve(B);
  return L.transpose().triangularView<Eigen::Upper>().solve(Y);
}

Eigen::VectorXd Chol::half_solve(const Eigen::VectorXd& b) const {
  return L.triangularView<Eigen::Lower>().solve(b);
}

Eigen::MatrixXd Chol::half_solve_mat(const Eigen::MatrixXd& B) const {
  return L.triangularView<Eigen::Lower>().solve(B);
}

Chol chol_with_jitter(const Eigen::MatrixXd& A, const std::string& what) {
  if (A.rows() != A.cols())
    throw DimensionMismatch("chol_with_jitter: " + what + " is not square");
  double scale = A.diagonal().mean();
  if (!(scale > 0.0)) scale = 1.0;
  for (int attempt = 0; attempt <= 5; ++attempt) {
    double jitter = attempt == 0 ? 0.0 : scale * std::pow(10.0, -11 + attempt);
    Eigen::MatrixXd M = A;
    if (jitter > 0.0) M.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() == Eigen::Success) return Chol{llt.matrixL(), jitter};
  }
  throw NotPositiveDefinite(what + " not positive definite after jitter escalation");
}

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Chol& cov) {
  if (x.size() != mean.size() || x.size() != cov.L.rows())
    throw DimensionMismatch("mvn_logpdf: size mismatch");
  Eigen::VectorXd r = cov.half_solve(x - mean);
  double d = static_cast<double>(x.size());
  return -0.5 * (d * std::log(2.0 * M_PI) + cov.logdet() + r.squaredNorm());
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

namespace {

Eigen::MatrixXd sym_eig_apply(const Eigen::MatrixXd& A, double (*f)(double)) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success)
    throw NotPositiveDefinite("symmetric eigendecomposition failed");
  Eigen::VectorXd d = es.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = f(std::max(d[i], 1e-12));
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& A) {
  return sym_eig_apply(A, [](double x) { return std::sqrt(x); });
}

Eigen::MatrixXd sym_inv_sqrt(const Eigen::MatrixXd& A) {
  return sym_eig_apply(A, [](double x) { return 1.0 / std::sqrt(x); });
}

Eigen::MatrixXd sym_inverse(const Eigen::MatrixXd& A) {
  return sym_eig_apply(A, [](double x) { return 1.0 / x; });
}

}  // namespace blockcal
