#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "blockcal/block_cov.hpp"
#include "blockcal/covariance.hpp"
#include "blockcal/optim.hpp"

namespace blockcal {

// n x p matrix of model runs; column i is the run at design setting i,
// rows follow the grid's location order.
struct ModelOutputEnsemble {
  Eigen::MatrixXd Y;

  std::size_t n() const { return static_cast<std::size_t>(Y.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(Y.cols()); }
  void validate() const;  // all entries finite
};

struct EmulatorFit {
  SpatialCovParams xi_s;
  ThetaCovParams xi_theta;
  bool converged = false;
  double cloglik = 0.0;
  int evals = 0;
};

// Block composite log likelihood of the model-run matrix: Gaussian term for
// the block means with covariance H (x) Sigma_theta plus conditional terms
// per block, all with the Kronecker structure factored (no (n_i-1)p square
// matrices are formed). Includes the 2 pi constants.
double emulation_cloglik(const ParameterDesign& design, const Eigen::MatrixXd& Y,
                         const BlockGeometry& geom, const SpatialCovParams& xi_s,
                         const ThetaCovParams& xi_theta);
double emulation_cloglik(const SpatialGrid& grid, const ParameterDesign& design,
                         const Eigen::MatrixXd& Y, const Blocking& blocking,
                         const SpatialCovParams& xi_s, const ThetaCovParams& xi_theta,
                         HMode mode = HMode::subsample, double radius = kEarthRadiusKm);

struct EmulatorInit {
  SpatialCovParams xi_s;
  ThetaCovParams xi_theta;
};

// Data-driven starting point: inverse median distances for the ranges,
// data variance for the sill, 1e-2 relative nuggets.
EmulatorInit default_emulator_init(const SpatialGrid& grid, const ParameterDesign& design,
                                   const Eigen::MatrixXd& Y, double radius = kEarthRadiusKm);

// Maximize emulation_cloglik over log parameters by simplex search. The
// returned fit is normalized to kappa_theta = 1 (only the products
// kappa_s kappa_theta and kappa_s zeta_theta are identified, since rescaling
// the two covariance factors in opposite directions leaves their product
// unchanged).
EmulatorFit fit_emulator(const SpatialGrid& grid, const ParameterDesign& design,
                         const Eigen::MatrixXd& Y, const Blocking& blocking,
                         const EmulatorInit& init, const NelderMeadConfig& opt = {},
                         HMode mode = HMode::subsample, double radius = kEarthRadiusKm,
                         bool normalize_scale = true);

// Predictive mean and pointwise variance at an arbitrary parameter setting.
std::pair<Eigen::VectorXd, Eigen::VectorXd> emulator_predict(const EmulatorFit& fit,
                                                             const ParameterDesign& design,
                                                             const Eigen::MatrixXd& Y,
                                                             const std::vector<double>& theta);

struct FlopCost {
  double full;          // n^3 / 3
  double blocked;       // H cost + M^3/3 + sum (n_i-1)^3 / 3
  double H_exact;       // sum_{i<=j} n_i n_j
  double H_subsampled;  // sum_{i<=j} m_i m_j
};

FlopCost flop_cost(std::size_t n, const std::vector<std::size_t>& block_sizes,
                   const std::vector<std::size_t>& sub_sizes);

std::string emulator_fit_to_json(const EmulatorFit& fit);
EmulatorFit emulator_fit_from_json(const std::string& text);
void save_emulator_fit(const std::string& path, const EmulatorFit& fit);
EmulatorFit load_emulator_fit(const std::string& path);

}  // namespace blockcal
