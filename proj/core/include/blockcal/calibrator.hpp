#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "blockcal/block_cov.hpp"
#include "blockcal/covariance.hpp"
#include "blockcal/emulator.hpp"
#include "blockcal/linalg.hpp"
#include "blockcal/optim.hpp"
#include "blockcal/rng.hpp"

namespace blockcal {

struct ObservationField {
  Eigen::VectorXd Z;

  void validate(std::size_t n) const;  // length n, finite entries
};

// Everything re-estimated against the observations: the model input theta*
// plus the re-opened emulator sill and the discrepancy parameters.
struct CalibrationState {
  std::vector<double> theta_star;
  double kappa_s = 0.0;
  double zeta_d = 0.0;
  double kappa_d = 0.0;
  double phi_d = 0.0;

  std::size_t q() const { return theta_star.size(); }
  std::size_t dim() const { return theta_star.size() + 4; }

  DiscrepancyCovParams xi_d() const { return {zeta_d, kappa_d, phi_d}; }
};

// Coordinate order used everywhere a state is flattened:
// theta_star_1..q, kappa_s, zeta_d, kappa_d, phi_d.
std::vector<std::string> psi_coordinate_names(std::size_t q);
double psi_coordinate(const CalibrationState& psi, std::size_t k);
void set_psi_coordinate(CalibrationState& psi, std::size_t k, double value);

// Unconstrained parameterization: identity on theta*, log on the positives.
Eigen::VectorXd to_unconstrained(const CalibrationState& psi);
CalibrationState from_unconstrained(const Eigen::VectorXd& t, std::size_t q);

struct IgParams {
  double shape = 1.0;
  double scale = 1.0;
};

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

// Inverse-gamma log density a ln b - lgamma(a) - (a+1) ln x - b/x; the mode
// sits at b/(a+1).
double ig_logpdf(double x, const IgParams& p);

struct PriorSpec {
  std::vector<Interval> theta_star;  // uniform, one per dimension
  IgParams kappa_s;
  IgParams zeta_d;
  IgParams kappa_d;
  Interval phi_d;                    // uniform on the inverse range
};

// Informative defaults: zeta_d ~ IG(2, 0.01*3) (mode 0.01), kappa_d tightly
// around the supplied guess (IG(10000, guess*10001)), kappa_s moderately
// around the emulation-stage estimate (IG(20, hat*21)), phi_d uniform with
// the correlation length bounded below by 800 km, theta* uniform over the
// design hull.
PriorSpec default_priors(const ParameterDesign& design, double kappa_s_hat, double kappa_d_guess);

// phi_d-dependent pieces of the discrepancy covariance with the kappa_d and
// zeta_d factors stripped out, so proposals that leave phi_d untouched cost
// no exponentials.
struct DiscrepancyShapes {
  double phi_d = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd omega_exp;                  // M x M, Omega / kappa_d at zeta_d = 0
  std::vector<Eigen::MatrixXd> lambda_mat;    // per block, Lambda_i / kappa_d at zeta_d = 0
  std::vector<Eigen::VectorXd> lambda_vec;    // per block, lambda_i / kappa_d at zeta_d = 0
};

// Immutable per-dataset cache for repeated likelihood evaluation: block
// geometry, data slices, the emulator covariance pieces at kappa_s = 1
// (kappa_s scales linearly through every spatial term), and the design
// covariance factorization.
struct CalibrationData {
  BlockGeometry geom;
  ParameterDesign design;
  ThetaCovParams xi_theta;   // from the emulator fit
  double zeta_s = 0.0;       // frozen emulator spatial shape
  double phi_s = 0.0;

  Eigen::MatrixXd Ybar;                  // M x p block means of the ensemble
  std::vector<Eigen::MatrixXd> R;        // per block, (n_i - 1) x p ensemble rows
  Eigen::VectorXd Zbar;                  // M block means of the observations
  std::vector<Eigen::VectorXd> Zr;       // per block, n_i - 1 non-omitted observations
  Eigen::MatrixXd H1;                    // block-mean spatial covariance at kappa_s = 1
  std::vector<Eigen::MatrixXd> Gamma1;   // per block, at kappa_s = 1
  std::vector<Eigen::VectorXd> gamma1;
  Eigen::MatrixXd Sigma_theta;
  Chol Sigma_theta_chol;
  Eigen::VectorXd inv_mode_size;         // 1/sz_i, the zeta_d multiplier on diag(Omega)

  std::size_t M() const { return geom.M(); }
  std::size_t p() const { return design.p(); }
  std::size_t q() const { return design.q(); }

  const DiscrepancyShapes& shapes(double phi_d) const;

 private:
  // two slots so a rejected phi_d proposal does not evict the current state
  mutable std::array<DiscrepancyShapes, 2> cache_;
  mutable int cache_next_ = 0;
};

CalibrationData prepare_calibration(const SpatialGrid& grid, const ParameterDesign& design,
                                    const Eigen::MatrixXd& Y, const Eigen::VectorXd& Z,
                                    const Blocking& blocking, const EmulatorFit& fit,
                                    HMode mode = HMode::subsample, double radius = kEarthRadiusKm);

// Observation-stage block composite log likelihood: Gaussian block-mean term
// with mean Ybar w^T and covariance s2 H + Omega, plus per-block conditional
// terms, where s2 is the conditional theta* variance given the design.
double calib_cloglik(const CalibrationData& data, const CalibrationState& psi);
double calib_cloglik(const CalibrationState& psi, const Eigen::VectorXd& Z,
                     const Eigen::MatrixXd& Y, const SpatialGrid& grid,
                     const ParameterDesign& design, const Blocking& blocking,
                     const EmulatorFit& fit, HMode mode = HMode::subsample,
                     double radius = kEarthRadiusKm);

double log_prior(const CalibrationState& psi, const PriorSpec& priors);

// log prior + composite log likelihood; -inf short-circuits the likelihood.
double log_posterior(const CalibrationData& data, const PriorSpec& priors,
                     const CalibrationState& psi);

// Long discrepancy ranges can have zero posterior density under subsampled
// block-mean covariances, so walk phi_d toward the short-range end of its
// prior until the start is feasible. Deterministic; at most five evaluations.
CalibrationState feasible_start(const CalibrationData& data, const PriorSpec& priors,
                                CalibrationState init);

struct McmcConfig {
  double warmup_frac = 0.3;      // leading fraction with scale adaptation
  std::size_t adapt_batch = 50;  // steps per adaptation decision
  double accept_lo = 0.2;        // target acceptance band
  double accept_hi = 0.45;
  double scale_factor = 1.3;
  std::vector<double> init_scales;  // empty = per-coordinate defaults
  double min_scale = 1e-12;
  bool adapt = true;
};

// One coordinate-at-a-time Metropolis sweep per step (sequential scan),
// Gaussian proposals, scales adapted in batches during warm-up only.
struct MhCoreResult {
  Eigen::MatrixXd samples;       // steps x d, in the target's coordinates
  std::vector<double> log_target;
  std::size_t warmup = 0;
  double acceptance = 0.0;       // post-warm-up fraction of accepted proposals
  std::vector<double> scales;    // final per-coordinate proposal scales
  std::vector<std::vector<double>> scale_history;
};

MhCoreResult mh_sample_core(const std::function<double(const Eigen::VectorXd&)>& log_target,
                            const Eigen::VectorXd& t0, std::size_t steps, const McmcConfig& cfg,
                            Rng& rng);

struct PosteriorChain {
  std::vector<CalibrationState> samples;  // warm-up included, `warmup` marks it
  std::vector<double> log_post;           // prior + composite likelihood (no Jacobian)
  std::size_t warmup = 0;
  double acceptance = 0.0;
  std::vector<double> proposal_scales;
  std::vector<std::vector<double>> scale_history;
  std::uint64_t seed = 0;
  std::vector<double> mcse;               // per coordinate, batch means, post-warm-up
  bool adjusted = false;

  std::size_t q() const;
  std::size_t size() const { return samples.size(); }
  // post-warm-up series of one flattened coordinate
  std::vector<double> coordinate(std::size_t k) const;
};

PosteriorChain mh_sample(const CalibrationData& data, const PriorSpec& priors,
                         const CalibrationState& init, std::size_t steps, std::uint64_t seed,
                         const McmcConfig& cfg = {});

// Local maximization of the posterior started from the best retained sample.
CalibrationState posterior_mode(const CalibrationData& data, const PriorSpec& priors,
                                const PosteriorChain& chain, const NelderMeadConfig& opt = {});

// Seed for deterministically extending a chain that already holds
// `steps_done` samples.
std::uint64_t resume_seed(std::uint64_t seed, std::size_t steps_done);

// CSV: one row per sample, psi coordinates + log_posterior (+ adjusted flag
// when set). Meta JSON: seed, warm-up, acceptance, scales, MCSE, last state.
void save_chain(const std::string& csv_path, const std::string& meta_path,
                const PosteriorChain& chain);
PosteriorChain load_chain(const std::string& csv_path, const std::string& meta_path = "");

}  // namespace blockcal
