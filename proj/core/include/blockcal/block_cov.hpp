#pragma once

#include <Eigen/Dense>
#include <vector>

#include "blockcal/covariance.hpp"
#include "blockcal/geo.hpp"

namespace blockcal {

// Precomputed geometry for repeated covariance evaluation: per-block member
// positions (omitted last) and geodesic distance matrices. Cross-block
// distances are stored between the index sets dictated by the H mode
// (full blocks for exact, stored subsample otherwise).
struct BlockGeometry {
  std::vector<std::vector<std::size_t>> members;   // grid positions, omitted last
  std::vector<std::vector<std::size_t>> sub_rows;  // rows of `members` in the subsample
  std::vector<Eigen::MatrixXd> within;             // n_i x n_i distances
  std::vector<std::vector<Eigen::MatrixXd>> cross; // distances, [i][j-i-1] for j > i
  HMode mode = HMode::subsample;
  double radius = kEarthRadiusKm;

  std::size_t M() const { return members.size(); }
  std::size_t block_size(std::size_t i) const { return members[i].size(); }
  std::size_t mode_size(std::size_t i) const {
    return mode == HMode::exact ? members[i].size() : sub_rows[i].size();
  }
};

BlockGeometry make_block_geometry(const SpatialGrid& grid, const Blocking& blocking, HMode mode,
                                  double radius = kEarthRadiusKm);

// Block-mean covariance (H or Omega) from cached distances; equals
// block_mean_cov on the same inputs.
Eigen::MatrixXd mean_cov_from_geometry(const BlockGeometry& g, const ExpCov& cov);
// Derivative of the above with respect to the inverse range phi.
Eigen::MatrixXd mean_cov_dphi(const BlockGeometry& g, const ExpCov& cov);

// Within-block covariance over non-omitted locations (Gamma_i or Lambda_i)
// and mean-covariance vector (gamma_i or lambda_i) from cached distances.
void internal_cov_from_geometry(const BlockGeometry& g, std::size_t i, const ExpCov& cov,
                                Eigen::MatrixXd* Gamma, Eigen::VectorXd* gamma);
void internal_cov_dphi(const BlockGeometry& g, std::size_t i, const ExpCov& cov,
                       Eigen::MatrixXd* dGamma, Eigen::VectorXd* dgamma);

// Per-block means over all members (not just the subsample) of grid-aligned
// data, and slices into per-block vectors in member order (omitted last).
Eigen::MatrixXd block_mean_rows(const BlockGeometry& g, const Eigen::MatrixXd& Y);
Eigen::VectorXd block_mean_vec(const BlockGeometry& g, const Eigen::VectorXd& v);
std::vector<Eigen::VectorXd> slice_blocks(const BlockGeometry& g, const Eigen::VectorXd& v);

// Every covariance piece entering the calibration-stage likelihood.
struct BlockCovarianceBundle {
  Eigen::MatrixXd H;      // M x M, emulator spatial block means
  Eigen::MatrixXd Omega;  // M x M, discrepancy block means
  std::vector<Eigen::MatrixXd> Gamma, Lambda;   // per block, (n_i-1)^2
  std::vector<Eigen::VectorXd> gamma, lambda;   // per block, n_i-1
  std::vector<Eigen::VectorXd> tau;             // gamma_i * s2cond
  Eigen::MatrixXd Sigma_theta;
  Eigen::RowVectorXd Sigma_star_theta;
  double Sigma_star = 0.0;
  double s2cond = 0.0;    // Sigma_star - Sigma_star_theta Sigma_theta^{-1} Sigma_star_theta^T
  Eigen::RowVectorXd w;   // Sigma_star_theta Sigma_theta^{-1}, 1 x p
};

BlockCovarianceBundle build_block_cov_bundle(const BlockGeometry& g, const ExpCov& xi_s,
                                             const ExpCov& xi_d, const ThetaCrossCov& tc);

}  // namespace blockcal
