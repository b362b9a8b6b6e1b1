#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "blockcal/geo.hpp"

namespace blockcal {

// Covariance across parameter settings:
//   K_theta = zeta_theta 1(theta = theta') + kappa_theta exp(-sum_i phi_i |theta_i - theta'_i|)
struct ThetaCovParams {
  double zeta_theta;
  double kappa_theta;
  std::vector<double> phi_theta;  // one rate per parameter dimension
};

// Spatial covariance for the emulator:
//   K_s = kappa_s (zeta_s 1(s = s') + exp(-phi_s g))
// The nugget sits inside the sill factor, unlike K_theta; both forms follow
// the model definition verbatim.
struct SpatialCovParams {
  double zeta_s;
  double kappa_s;
  double phi_s;  // inverse range per km
};

// Spatial covariance for the discrepancy process, same form as K_s.
struct DiscrepancyCovParams {
  double zeta_d;
  double kappa_d;
  double phi_d;
};

// Common shape kappa (zeta 1(same) + exp(-phi g)) shared by K_s and K_d.
// "same" means identical location ids, not merely distance zero.
struct ExpCov {
  double zeta;
  double kappa;
  double phi;
};

inline ExpCov as_exp_cov(const SpatialCovParams& p) { return {p.zeta_s, p.kappa_s, p.phi_s}; }
inline ExpCov as_exp_cov(const DiscrepancyCovParams& p) { return {p.zeta_d, p.kappa_d, p.phi_d}; }

double k_theta(const std::vector<double>& theta, const std::vector<double>& theta_prime,
               const ThetaCovParams& params);

double k_spatial(const Location& a, const Location& b, const ExpCov& params,
                 double radius = kEarthRadiusKm);
inline double k_spatial(const Location& a, const Location& b, const SpatialCovParams& p,
                        double radius = kEarthRadiusKm) {
  return k_spatial(a, b, as_exp_cov(p), radius);
}
inline double k_spatial(const Location& a, const Location& b, const DiscrepancyCovParams& p,
                        double radius = kEarthRadiusKm) {
  return k_spatial(a, b, as_exp_cov(p), radius);
}

// The p parameter settings the model was run at, with per-dimension bounds.
struct ParameterDesign {
  std::vector<std::vector<double>> thetas;           // p settings, each length q
  std::vector<std::pair<double, double>> bounds;     // per dimension [lo, hi]

  std::size_t p() const { return thetas.size(); }
  std::size_t q() const { return thetas.empty() ? 0 : thetas[0].size(); }
  void validate(bool for_fitting = false) const;     // distinct settings, p >= 2 when fitting
};

struct ThetaCrossCov {
  Eigen::MatrixXd Sigma_theta;          // p x p design covariance
  Eigen::RowVectorXd Sigma_star_theta;  // 1 x p cross covariance at theta*
  double Sigma_star;                    // prior variance at theta*: zeta + kappa
};

ThetaCrossCov theta_cross_cov(const std::vector<double>& theta_star, const ParameterDesign& design,
                              const ThetaCovParams& params);

// Exact block-mean covariance (average of all cross covariances) or its
// subsampled approximation over the blocking's stored subsample.
enum class HMode { exact, subsample };

Eigen::MatrixXd block_mean_cov(const SpatialGrid& grid, const Blocking& blocking,
                               const ExpCov& params, HMode mode,
                               double radius = kEarthRadiusKm);

// Within-block pieces for block i: the (n_i-1) x (n_i-1) covariance over the
// non-omitted locations and the (n_i-1)-vector of mean covariances to all
// n_i block locations.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> block_internal_cov(const SpatialGrid& grid,
                                                               const Blocking& blocking,
                                                               std::size_t i, const ExpCov& params,
                                                               double radius = kEarthRadiusKm);

// Dense Kronecker product, for oracle tests only; likelihood code factors
// the two parts instead of materializing this.
Eigen::MatrixXd kron_assemble(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

}  // namespace blockcal
