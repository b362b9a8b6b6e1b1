#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "blockcal/block_cov.hpp"
#include "blockcal/calibrator.hpp"
#include "blockcal/covariance.hpp"
#include "blockcal/emulator.hpp"
#include "blockcal/linalg.hpp"

namespace blockcal {

// The large-design limit of the calibration model: Z ~ N(Y*, zeta_theta
// Sigma_s + Sigma_d), with the composite likelihood rewritten through the
// per-block contrast matrices A_i = [I | 0] - a_i (1/n_i, ..., 1/n_i).
// Everything here is evaluated at one psi; the geometry is borrowed, not
// owned, and must outlive the bundle.
struct LimitModelBundle {
  Eigen::VectorXd Ybar_star;                  // M block means of Y*
  std::vector<Eigen::VectorXd> Ystar_block;   // per block, n_i entries, member order
  Eigen::MatrixXd Sigma_Zbar;                 // zeta_theta H + Omega
  Chol Sigma_Zbar_chol;
  std::vector<Eigen::VectorXd> a;             // per block, n_i - 1
  std::vector<Eigen::MatrixXd> Sigma_c;       // per block conditional covariance
  std::vector<Chol> Sigma_c_chol;

  // covariance pieces retained for the xi scores
  Eigen::MatrixXd H, Omega;
  std::vector<Eigen::MatrixXd> Gamma, Lambda;
  std::vector<Eigen::VectorXd> gamma, lambda;
  std::vector<Eigen::VectorXd> u;             // zeta_theta gamma + lambda
  double zeta_theta = 0.0;
  double kappa_s = 0.0;
  DiscrepancyCovParams xi_d{};
  const BlockGeometry* geom = nullptr;

  std::size_t M() const { return a.size(); }
};

// A_i as an explicit matrix (tests), and its action v -> v_(i) - a_i vbar.
Eigen::MatrixXd make_A(const Eigen::VectorXd& a_i, std::size_t n_i);
Eigen::VectorXd apply_A(const Eigen::VectorXd& a_i, const Eigen::VectorXd& v);

// zeta_s/phi_s are the frozen emulator spatial shape; kappa_s comes from psi.
// Ystar is the emulated model output at theta*, grid-aligned.
LimitModelBundle build_limit_model(const BlockGeometry& geom, const CalibrationState& psi,
                                   double zeta_theta, double zeta_s, double phi_s,
                                   const Eigen::VectorXd& Ystar);

// Composite log likelihood of the limit model; equals the A_i-contrast form
// and the conditional-moment form exactly.
double limit_cloglik(const LimitModelBundle& lm, const Eigen::VectorXd& Z);

// d cl / d theta*_j assembled from (dYbar*/dtheta_j)^T Sigma_Zbar^{-1} (Zbar -
// Ybar*) and the per-block (dY*_[i]/dtheta_j)^T A^T Sigma_c^{-1} A (Z_[i] -
// Y*_[i]) terms. dYstar is n x q, grid-aligned.
Eigen::VectorXd score_theta(const LimitModelBundle& lm, const Eigen::MatrixXd& dYstar,
                            const Eigen::VectorXd& Z);

// Scores over xi = (kappa_s, zeta_d, kappa_d, phi_d). `total` differentiates
// the whole log likelihood (matches finite differences); `data_part` keeps
// only the quadratic/bilinear residual terms (zero for zero-residual data).
struct XiScore {
  Eigen::VectorXd total;
  Eigen::VectorXd data_part;
};

XiScore score_xi(const LimitModelBundle& lm, const Eigen::VectorXd& Z);

// Emulator mean and its theta* derivatives from the exponential kernel:
// {dSigma_cross}_{j,i} = -kappa_theta phi_j sign(theta*_j - theta_{j,i})
// exp(-sum_k phi_k |theta*_k - theta_{k,i}|).
struct DerivativeBundle {
  Eigen::MatrixXd dSigma_cross;  // q x p
  Eigen::VectorXd Ystar;         // n, emulated output at theta*
  Eigen::MatrixXd dYstar;        // n x q
};

DerivativeBundle emulator_derivatives(const EmulatorFit& fit, const ParameterDesign& design,
                                      const Eigen::MatrixXd& Y,
                                      const std::vector<double>& theta_star);

// Negative expected theta* Hessian of the composite likelihood.
Eigen::MatrixXd compute_Q_star(const LimitModelBundle& lm, const Eigen::MatrixXd& dYstar);

// Each theta* score is a linear functional l_j^T (Z - Y*) of the data in
// block order; returns the n x q matrix of loadings.
Eigen::MatrixXd score_loadings(const LimitModelBundle& lm, const Eigen::MatrixXd& dYstar);

// Dense covariance of Z under the limit model, rows/cols in block order
// (concatenated members, omitted last in each block).
Eigen::MatrixXd dense_limit_cov(const SpatialGrid& grid, const BlockGeometry& geom,
                                const CalibrationState& psi, double zeta_theta, double zeta_s,
                                double phi_s);

// Covariance of the theta* score under the dense model: L^T Sigma_Z L.
Eigen::MatrixXd compute_P_star(const LimitModelBundle& lm, const Eigen::MatrixXd& dYstar,
                               const Eigen::MatrixXd& Sigma_Z);

struct GodambeMatrices {
  Eigen::MatrixXd P_star;
  Eigen::MatrixXd Q_star;
  Eigen::MatrixXd G;  // Q P^{-1} Q
  Eigen::MatrixXd C;  // Q^{-1} P^{1/2} Q^{1/2}; C Q^{-1} C^T = G^{-1}
  Eigen::MatrixXd D;  // Q^{-1/2} (Q P^{-1} Q)^{1/2}; D^T Q D = Q P^{-1} Q
};

GodambeMatrices godambe_matrices(const Eigen::MatrixXd& P_star, const Eigen::MatrixXd& Q_star);

// Affine post-hoc map of the theta* block: theta ~> theta_hat + C (theta -
// theta_hat). Other coordinates and the stored log-posterior values pass
// through unchanged.
PosteriorChain open_faced_adjust(const PosteriorChain& chain, const GodambeMatrices& gm,
                                 const CalibrationState& psi_hat);

// theta ~> theta_hat + D (theta - theta_hat) on evaluation points.
std::vector<CalibrationState> curvature_adjust(const std::vector<CalibrationState>& points,
                                               const GodambeMatrices& gm,
                                               const CalibrationState& psi_hat);

// Fresh MCMC run with the likelihood evaluated at the D-mapped theta*, so the
// posterior curvature at the mode matches the Godambe information.
PosteriorChain curvature_adjusted_chain(const CalibrationData& data, const PriorSpec& priors,
                                        const GodambeMatrices& gm, const CalibrationState& psi_hat,
                                        const CalibrationState& init, std::size_t steps,
                                        std::uint64_t seed, const McmcConfig& cfg = {});

// Secondary Q* estimate: inverse sample covariance of the chain's theta*
// block (the composite posterior's curvature).
Eigen::MatrixXd chain_curvature_Q(const PosteriorChain& chain);

std::string godambe_to_json(const GodambeMatrices& gm);
GodambeMatrices godambe_from_json(const std::string& text);
void save_godambe(const std::string& path, const GodambeMatrices& gm);
GodambeMatrices load_godambe(const std::string& path);

}  // namespace blockcal
