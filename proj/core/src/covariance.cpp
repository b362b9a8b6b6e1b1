#include "blockcal/covariance.hpp"

#include <cmath>

#include "blockcal/errors.hpp"
#include "blockcal/linalg.hpp"

namespace blockcal {

double k_theta(const std::vector<double>& theta, const std::vector<double>& theta_prime,
               const ThetaCovParams& params) {
  if (theta.size() != theta_prime.size() || theta.size() != params.phi_theta.size())
    throw DimensionMismatch("k_theta: dimension mismatch");
  double expo = 0.0;
  bool same = true;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    expo += params.phi_theta[i] * std::fabs(theta[i] - theta_prime[i]);
    same = same && theta[i] == theta_prime[i];
  }
  double v = params.kappa_theta * std::exp(-expo);
  if (same) v += params.zeta_theta;
  return v;
}

double k_spatial(const Location& a, const Location& b, const ExpCov& params, double radius) {
  double v = std::exp(-params.phi * geodesic_distance(a, b, radius));
  if (a.index == b.index) v += params.zeta;
  return params.kappa * v;
}

void ParameterDesign::validate(bool for_fitting) const {
  if (thetas.empty()) throw OutOfDomain("design has no settings");
  if (for_fitting && thetas.size() < 2) throw OutOfDomain("fitting needs at least 2 settings");
  std::size_t dim = thetas[0].size();
  if (dim == 0) throw OutOfDomain("design settings are empty vectors");
  for (const auto& t : thetas)
    if (t.size() != dim) throw DimensionMismatch("design settings have mixed dimensions");
  if (!bounds.empty() && bounds.size() != dim)
    throw DimensionMismatch("design bounds dimension mismatch");
  for (std::size_t i = 0; i < thetas.size(); ++i)
    for (std::size_t j = i + 1; j < thetas.size(); ++j)
      if (thetas[i] == thetas[j]) throw OutOfDomain("design settings are not distinct");
}

ThetaCrossCov theta_cross_cov(const std::vector<double>& theta_star, const ParameterDesign& design,
                              const ThetaCovParams& params) {
  design.validate();
  std::size_t p = design.p();
  if (theta_star.size() != design.q())
    throw DimensionMismatch("theta_cross_cov: theta* dimension mismatch");
  ThetaCrossCov out;
  out.Sigma_theta.resize(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      out.Sigma_theta(i, j) = k_theta(design.thetas[i], design.thetas[j], params);
  out.Sigma_star_theta.resize(p);
  for (std::size_t j = 0; j < p; ++j)
    out.Sigma_star_theta(j) = k_theta(theta_star, design.thetas[j], params);
  out.Sigma_star = params.zeta_theta + params.kappa_theta;
  return out;
}

namespace {

// Average covariance between two index sets; ascending summation order for
// bit-reproducible results. Same ids hit the nugget.
double pair_average(const SpatialGrid& grid, const std::vector<int>& a, const std::vector<int>& b,
                    const ExpCov& params, double radius) {
  double acc = 0.0;
  for (int ia : a) {
    const Location& la = grid.at(grid.pos_of(ia));
    for (int ib : b) {
      const Location& lb = grid.at(grid.pos_of(ib));
      double v = std::exp(-params.phi * geodesic_distance(la, lb, radius));
      if (ia == ib) v += params.zeta;
      acc += v;
    }
  }
  return params.kappa * acc / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace

Eigen::MatrixXd block_mean_cov(const SpatialGrid& grid, const Blocking& blocking,
                               const ExpCov& params, HMode mode, double radius) {
  std::size_t M = blocking.M();
  const auto& sets = mode == HMode::exact ? blocking.blocks : blocking.subsample;
  Eigen::MatrixXd H(M, M);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = i; j < M; ++j) {
      double v = pair_average(grid, sets[i], sets[j], params, radius);
      H(i, j) = v;
      H(j, i) = v;
    }
  return H;
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> block_internal_cov(const SpatialGrid& grid,
                                                               const Blocking& blocking,
                                                               std::size_t i, const ExpCov& params,
                                                               double radius) {
  if (i >= blocking.M()) throw OutOfDomain("block_internal_cov: block index out of range");
  auto order = block_positions(grid, blocking)[i];  // omitted last
  std::size_t ni = order.size();
  Eigen::MatrixXd Gamma(ni - 1, ni - 1);
  Eigen::VectorXd gamma(ni - 1);
  for (std::size_t j = 0; j + 1 < ni; ++j) {
    const Location& lj = grid.at(order[j]);
    for (std::size_t k = 0; k + 1 < ni; ++k)
      Gamma(j, k) = k_spatial(lj, grid.at(order[k]), params, radius);
    double acc = 0.0;
    for (std::size_t k = 0; k < ni; ++k) acc += k_spatial(lj, grid.at(order[k]), params, radius);
    gamma(j) = acc / static_cast<double>(ni);
  }
  return {Gamma, gamma};
}

Eigen::MatrixXd kron_assemble(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  return kron(A, B);
}

}  // namespace blockcal
