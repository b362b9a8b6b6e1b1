#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "blockcal/calibrator.hpp"
#include "blockcal/covariance.hpp"
#include "blockcal/emulator.hpp"
#include "blockcal/geo.hpp"
#include "blockcal/stats.hpp"

namespace blockcal {

// Largest n for which dense n x n reference computations are attempted.
inline constexpr std::size_t kDenseGuard = 1500;

// Exact Gaussian log density via Cholesky factorization of the dense
// covariance; the brute-force reference everything else is checked against.
double full_loglik(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                   const Eigen::MatrixXd& cov);

Eigen::MatrixXd dense_spatial_cov(const SpatialGrid& grid, const ExpCov& cov,
                                  double radius = kEarthRadiusKm,
                                  std::size_t guard = kDenseGuard);

// Zero-mean GP draw from the dense kernel matrix, deterministic per seed.
Eigen::VectorXd sample_gp_field(const SpatialGrid& grid, const ExpCov& params, std::uint64_t seed,
                                double radius = kEarthRadiusKm, std::size_t guard = kDenseGuard);

// Matrix-normal ensemble draw: Y = L_s E L_theta^T with iid standard normal
// E, so vec(Y) has covariance Sigma_theta (x) Sigma_s.
Eigen::MatrixXd sample_ensemble(const SpatialGrid& grid, const ParameterDesign& design,
                                const SpatialCovParams& xi_s, const ThetaCovParams& xi_theta,
                                std::uint64_t seed, double radius = kEarthRadiusKm,
                                std::size_t guard = kDenseGuard);

// Full (non-composite) observation-stage log likelihood: Z ~ N(Y w^T,
// s2 Sigma_s + Sigma_d) with s2 the conditional theta* variance.
double full_calib_loglik(const CalibrationState& psi, const Eigen::VectorXd& Z,
                         const Eigen::MatrixXd& Y, const SpatialGrid& grid,
                         const ParameterDesign& design, const EmulatorFit& fit,
                         double radius = kEarthRadiusKm, std::size_t guard = kDenseGuard);

struct OraclePosterior {
  std::vector<double> theta;
  std::vector<double> density;  // normalized by the trapezoid rule

  double mode() const;  // grid point of highest density
  double mean() const;
  double sd() const;
  std::pair<double, double> interval95() const;  // equal-tailed
};

// Scalar-theta posterior on a uniform grid over `support` (which acts as the
// flat prior), with the emulator parameters fixed except that kappa_s and
// the discrepancy parameters are supplied by the caller.
OraclePosterior full_posterior_grid(const SpatialGrid& grid, const ParameterDesign& design,
                                    const Eigen::MatrixXd& Y, const Eigen::VectorXd& Z,
                                    const EmulatorFit& fit, double kappa_s,
                                    const DiscrepancyCovParams& xi_d, const Interval& support,
                                    std::size_t points, double radius = kEarthRadiusKm,
                                    std::size_t guard = kDenseGuard);

struct ParamSummary {
  std::string name;
  double mode = 0.0;   // kernel density mode
  double mean = 0.0;
  double lo = 0.0;     // equal-tailed 95% interval
  double hi = 0.0;
  double mcse = 0.0;
};

std::vector<ParamSummary> summarize_chain(const PosteriorChain& chain);

struct ExperimentConfig {
  std::size_t truth_index = 0;  // design column held out as the synthetic truth
  DiscrepancyCovParams xi_d_true{0.01, 160000.0, 1.0 / 690.0};
  std::uint64_t seed = 1;
  std::size_t M = 20;
  std::size_t m_max = 10;
  std::size_t chain_steps = 12000;
  bool run_oracle = true;
  bool adjust = false;
  std::size_t oracle_points = 161;
  HMode mode = HMode::subsample;
  double radius = kEarthRadiusKm;
  std::size_t dense_guard = kDenseGuard;
  Interval phi_d_prior{1.0 / 20000.0, 1.0 / 100.0};
  double kappa_d_guess = 0.0;            // 0 = use xi_d_true.kappa_d
  NelderMeadConfig fit_opt{};
  McmcConfig mcmc{};
  const EmulatorFit* prefit = nullptr;   // reuse a fit instead of re-estimating
  // fixed discrepancy draw (overrides the seeded one); enables common random
  // numbers across sweep entries
  const Eigen::VectorXd* fixed_discrepancy = nullptr;
};

struct OracleSummary {
  double mode = 0.0, mean = 0.0, sd = 0.0, lo = 0.0, hi = 0.0;
};

struct ExperimentReport {
  std::vector<ParamSummary> composite;   // one per psi coordinate
  std::vector<ParamSummary> adjusted;    // empty unless adjustment ran
  bool has_adjustment = false;
  CalibrationState psi_hat;              // posterior mode (when adjustment ran)
  bool has_oracle = false;
  OracleSummary oracle;
  OraclePosterior oracle_density;
  KdeCurve composite_theta_density;
  KdeCurve adjusted_theta_density;
  double truth = 0.0;
  bool truth_covered = false;            // truth inside the composite 95% interval
  bool mode_near_oracle = false;         // |composite mode - oracle mode| <= oracle sd
  double seconds_fit = 0.0, seconds_chain = 0.0, seconds_oracle = 0.0;
  std::uint64_t seed = 0;
  EmulatorFit fit;
};

// The synthetic-truth validation loop: hold out the truth run, superimpose a
// GP discrepancy, fit the emulator on the remaining runs, calibrate, and
// (optionally) adjust and compare against the dense-likelihood posterior.
ExperimentReport perfect_model_experiment(const SpatialGrid& grid, const ParameterDesign& design,
                                          const Eigen::MatrixXd& Y, const ExperimentConfig& cfg);

struct SweepEntry {
  std::size_t M = 0;
  ExperimentReport report;
  double interval_width = 0.0;
  double mode_bias = 0.0;
};

// Re-runs the experiment for each block count with a shared discrepancy draw;
// deterministic given cfg.seed and Ms.
std::vector<SweepEntry> block_count_sweep(const SpatialGrid& grid, const ParameterDesign& design,
                                          const Eigen::MatrixXd& Y, const ExperimentConfig& cfg,
                                          const std::vector<std::size_t>& Ms);

// Timings are excluded (they belong in sidecar metadata).
std::string experiment_report_to_json(const ExperimentReport& report);

}  // namespace blockcal
