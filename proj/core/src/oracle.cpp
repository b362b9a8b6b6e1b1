#include "blockcal/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "blockcal/errors.hpp"
#include "blockcal/godambe.hpp"
#include "blockcal/linalg.hpp"
#include "blockcal/rng.hpp"

namespace blockcal {

namespace {

void check_guard(std::size_t n, std::size_t guard) {
  if (n > guard) {
    throw OutOfDomain("dense reference computation refused: n = " + std::to_string(n) +
                      " exceeds guard " + std::to_string(guard));
  }
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& f) {
  double s = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    s += 0.5 * (f[k - 1] + f[k]) * (x[k] - x[k - 1]);
  }
  return s;
}

// inverse of the piecewise-linear CDF built from trapezoid segments
double cdf_inverse(const std::vector<double>& x, const std::vector<double>& f, double q) {
  double cum = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    const double seg = 0.5 * (f[k - 1] + f[k]) * (x[k] - x[k - 1]);
    if (cum + seg >= q && seg > 0.0) {
      return x[k - 1] + (q - cum) / seg * (x[k] - x[k - 1]);
    }
    cum += seg;
  }
  return x.back();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

double full_loglik(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                   const Eigen::MatrixXd& cov) {
  if (x.size() != mean.size() || cov.rows() != x.size() || cov.cols() != x.size()) {
    throw DimensionMismatch("full_loglik: incompatible shapes");
  }
  const Chol chol = chol_with_jitter(cov, "dense covariance");
  return mvn_logpdf(x, mean, chol);
}

Eigen::MatrixXd dense_spatial_cov(const SpatialGrid& grid, const ExpCov& cov, double radius,
                                  std::size_t guard) {
  check_guard(grid.n(), guard);
  const auto n = static_cast<Eigen::Index>(grid.n());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = k_spatial(grid.at(static_cast<std::size_t>(i)),
                                 grid.at(static_cast<std::size_t>(j)), cov, radius);
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

Eigen::VectorXd sample_gp_field(const SpatialGrid& grid, const ExpCov& params, std::uint64_t seed,
                                double radius, std::size_t guard) {
  const Eigen::MatrixXd K = dense_spatial_cov(grid, params, radius, guard);
  const Chol chol = chol_with_jitter(K, "field covariance");
  Rng rng(seed);
  Eigen::VectorXd z(K.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return chol.L * z;
}

Eigen::MatrixXd sample_ensemble(const SpatialGrid& grid, const ParameterDesign& design,
                                const SpatialCovParams& xi_s, const ThetaCovParams& xi_theta,
                                std::uint64_t seed, double radius, std::size_t guard) {
  design.validate();
  const Eigen::MatrixXd Ks = dense_spatial_cov(grid, as_exp_cov(xi_s), radius, guard);
  const auto p = static_cast<Eigen::Index>(design.p());
  Eigen::MatrixXd St(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = k_theta(design.thetas[static_cast<std::size_t>(i)],
                               design.thetas[static_cast<std::size_t>(j)], xi_theta);
      St(i, j) = v;
      St(j, i) = v;
    }
  }
  const Chol Ls = chol_with_jitter(Ks, "ensemble spatial covariance");
  const Chol Lt = chol_with_jitter(St, "ensemble design covariance");
  Rng rng(seed);
  Eigen::MatrixXd E(Ks.rows(), p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < E.rows(); ++i) E(i, j) = rng.normal();
  }
  return Ls.L * E * Lt.L.transpose();
}

double full_calib_loglik(const CalibrationState& psi, const Eigen::VectorXd& Z,
                         const Eigen::MatrixXd& Y, const SpatialGrid& grid,
                         const ParameterDesign& design, const EmulatorFit& fit, double radius,
                         std::size_t guard) {
  if (psi.q() != design.q()) throw DimensionMismatch("full_calib_loglik: theta* dimension");
  if (Z.size() != static_cast<Eigen::Index>(grid.n()) || Y.rows() != Z.size() ||
      Y.cols() != static_cast<Eigen::Index>(design.p())) {
    throw DimensionMismatch("full_calib_loglik: data shapes");
  }
  if (psi.kappa_s <= 0.0 || psi.zeta_d <= 0.0 || psi.kappa_d <= 0.0 || psi.phi_d <= 0.0) {
    throw OutOfDomain("full_calib_loglik: non-positive scale parameter");
  }
  const ThetaCrossCov tc = theta_cross_cov(psi.theta_star, design, fit.xi_theta);
  const Chol St = chol_with_jitter(tc.Sigma_theta, "design covariance");
  const Eigen::VectorXd wT = St.solve(tc.Sigma_star_theta.transpose());
  const double s2 = std::max(0.0, tc.Sigma_star - tc.Sigma_star_theta.dot(wT));
  const Eigen::VectorXd mu = Y * wT;
  const Eigen::MatrixXd Ks1 =
      dense_spatial_cov(grid, ExpCov{fit.xi_s.zeta_s, 1.0, fit.xi_s.phi_s}, radius, guard);
  const Eigen::MatrixXd Kd = dense_spatial_cov(grid, as_exp_cov(psi.xi_d()), radius, guard);
  const Eigen::MatrixXd cov = s2 * psi.kappa_s * Ks1 + Kd;
  return full_loglik(Z, mu, cov);
}

double OraclePosterior::mode() const {
  if (theta.empty()) throw OutOfDomain("empty posterior grid");
  const auto it = std::max_element(density.begin(), density.end());
  return theta[static_cast<std::size_t>(it - density.begin())];
}

double OraclePosterior::mean() const {
  if (theta.empty()) throw OutOfDomain("empty posterior grid");
  std::vector<double> tf(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) tf[k] = theta[k] * density[k];
  return trapezoid(theta, tf);
}

double OraclePosterior::sd() const {
  const double m = mean();
  std::vector<double> t2f(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) t2f[k] = theta[k] * theta[k] * density[k];
  return std::sqrt(std::max(0.0, trapezoid(theta, t2f) - m * m));
}

std::pair<double, double> OraclePosterior::interval95() const {
  if (theta.empty()) throw OutOfDomain("empty posterior grid");
  return {cdf_inverse(theta, density, 0.025), cdf_inverse(theta, density, 0.975)};
}

OraclePosterior full_posterior_grid(const SpatialGrid& grid, const ParameterDesign& design,
                                    const Eigen::MatrixXd& Y, const Eigen::VectorXd& Z,
                                    const EmulatorFit& fit, double kappa_s,
                                    const DiscrepancyCovParams& xi_d, const Interval& support,
                                    std::size_t points, double radius, std::size_t guard) {
  if (design.q() != 1) throw OutOfDomain("posterior grid requires a scalar model parameter");
  if (points < 2) throw OutOfDomain("posterior grid needs at least two points");
  if (!(support.width() > 0.0)) throw OutOfDomain("degenerate grid support");
  const Eigen::MatrixXd Ks1 =
      dense_spatial_cov(grid, ExpCov{fit.xi_s.zeta_s, 1.0, fit.xi_s.phi_s}, radius, guard);
  const Eigen::MatrixXd Kd = dense_spatial_cov(grid, as_exp_cov(xi_d), radius, guard);

  OraclePosterior post;
  post.theta.resize(points);
  std::vector<double> ll(points);
  for (std::size_t k = 0; k < points; ++k) {
    const double theta =
        support.lo + support.width() * static_cast<double>(k) / static_cast<double>(points - 1);
    post.theta[k] = theta;
    const ThetaCrossCov tc = theta_cross_cov({theta}, design, fit.xi_theta);
    const Chol St = chol_with_jitter(tc.Sigma_theta, "design covariance");
    const Eigen::VectorXd wT = St.solve(tc.Sigma_star_theta.transpose());
    const double s2 = std::max(0.0, tc.Sigma_star - tc.Sigma_star_theta.dot(wT));
    const Eigen::VectorXd mu = Y * wT;
    const Eigen::MatrixXd cov = s2 * kappa_s * Ks1 + Kd;
    ll[k] = full_loglik(Z, mu, cov);
  }
  const double m = *std::max_element(ll.begin(), ll.end());
  std::vector<double> w(points);
  for (std::size_t k = 0; k < points; ++k) w[k] = std::exp(ll[k] - m);
  const double norm = trapezoid(post.theta, w);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw OutOfDomain("posterior grid failed to normalize");
  }
  post.density.resize(points);
  for (std::size_t k = 0; k < points; ++k) post.density[k] = w[k] / norm;
  return post;
}

std::vector<ParamSummary> summarize_chain(const PosteriorChain& chain) {
  if (chain.size() <= chain.warmup) throw EmptyChain("no retained samples to summarize");
  const auto names = psi_coordinate_names(chain.q());
  std::vector<ParamSummary> out(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::vector<double> series = chain.coordinate(k);
    out[k].name = names[k];
    out[k].mode = kde(series).mode();
    out[k].mean = mean(series);
    out[k].lo = quantile(series, 0.025);
    out[k].hi = quantile(series, 0.975);
    out[k].mcse = k < chain.mcse.size() ? chain.mcse[k] : batch_means_mcse(series);
  }
  return out;
}

ExperimentReport perfect_model_experiment(const SpatialGrid& grid, const ParameterDesign& design,
                                          const Eigen::MatrixXd& Y, const ExperimentConfig& cfg) {
  design.validate();
  if (design.q() != 1) throw OutOfDomain("the synthetic-truth experiment needs a scalar theta");
  if (design.p() < 3) throw OutOfDomain("need at least three runs: one truth, two training");
  if (cfg.truth_index >= design.p()) throw OutOfDomain("truth index outside the design");
  if (Y.rows() != static_cast<Eigen::Index>(grid.n()) ||
      Y.cols() != static_cast<Eigen::Index>(design.p())) {
    throw DimensionMismatch("ensemble shape does not match grid/design");
  }

  ParameterDesign training;
  training.bounds = design.bounds;
  for (std::size_t i = 0; i < design.p(); ++i) {
    if (i != cfg.truth_index) training.thetas.push_back(design.thetas[i]);
  }
  const auto ti = static_cast<Eigen::Index>(cfg.truth_index);
  Eigen::MatrixXd Yt(Y.rows(), Y.cols() - 1);
  Yt << Y.leftCols(ti), Y.rightCols(Y.cols() - 1 - ti);

  Rng master(cfg.seed);
  const std::uint64_t seed_tess = master.raw();
  const std::uint64_t seed_disc = master.raw();
  const std::uint64_t seed_chain = master.raw();

  Eigen::VectorXd Z;
  if (cfg.fixed_discrepancy != nullptr) {
    if (cfg.fixed_discrepancy->size() != Y.rows()) {
      throw DimensionMismatch("fixed discrepancy length");
    }
    Z = Y.col(ti) + *cfg.fixed_discrepancy;
  } else {
    const Eigen::VectorXd unit =
        sample_gp_field(grid, ExpCov{cfg.xi_d_true.zeta_d, 1.0, cfg.xi_d_true.phi_d}, seed_disc,
                        cfg.radius, cfg.dense_guard);
    Z = Y.col(ti) + std::sqrt(cfg.xi_d_true.kappa_d) * unit;
  }

  const Blocking blocking =
      random_tessellation(grid, cfg.M, seed_tess, cfg.m_max, cfg.radius);

  ExperimentReport report;
  report.seed = cfg.seed;
  report.truth = design.thetas[cfg.truth_index][0];

  auto t0 = std::chrono::steady_clock::now();
  if (cfg.prefit != nullptr) {
    report.fit = *cfg.prefit;
  } else {
    report.fit = fit_emulator(grid, training, Yt, blocking,
                              default_emulator_init(grid, training, Yt, cfg.radius), cfg.fit_opt,
                              cfg.mode, cfg.radius);
  }
  report.seconds_fit = seconds_since(t0);

  const double kd_guess = cfg.kappa_d_guess > 0.0 ? cfg.kappa_d_guess : cfg.xi_d_true.kappa_d;
  PriorSpec priors = default_priors(training, report.fit.xi_s.kappa_s, kd_guess);
  priors.phi_d = cfg.phi_d_prior;

  CalibrationState init;
  init.theta_star = {0.5 * (priors.theta_star[0].lo + priors.theta_star[0].hi)};
  init.kappa_s = report.fit.xi_s.kappa_s;
  init.zeta_d = priors.zeta_d.scale / (priors.zeta_d.shape + 1.0);
  init.kappa_d = kd_guess;
  init.phi_d = 0.5 * (priors.phi_d.lo + priors.phi_d.hi);

  const CalibrationData data =
      prepare_calibration(grid, training, Yt, Z, blocking, report.fit, cfg.mode, cfg.radius);
  init = feasible_start(data, priors, init);

  t0 = std::chrono::steady_clock::now();
  const PosteriorChain chain =
      mh_sample(data, priors, init, cfg.chain_steps, seed_chain, cfg.mcmc);
  report.seconds_chain = seconds_since(t0);

  report.composite = summarize_chain(chain);
  report.composite_theta_density = kde(chain.coordinate(0));
  report.truth_covered =
      report.composite[0].lo <= report.truth && report.truth <= report.composite[0].hi;

  if (cfg.adjust) {
    CalibrationState psi_hat = posterior_mode(data, priors, chain);
    DerivativeBundle db;
    try {
      db = emulator_derivatives(report.fit, training, Yt, psi_hat.theta_star);
    } catch (const NonDifferentiablePoint&) {
      // the mode landed exactly on a design setting; step off it
      psi_hat.theta_star[0] += 1e-9 * (priors.theta_star[0].width());
      db = emulator_derivatives(report.fit, training, Yt, psi_hat.theta_star);
    }
    const LimitModelBundle lm = build_limit_model(data.geom, psi_hat, data.xi_theta.zeta_theta,
                                                  data.zeta_s, data.phi_s, db.Ystar);
    const Eigen::MatrixXd Q = compute_Q_star(lm, db.dYstar);
    check_guard(grid.n(), cfg.dense_guard);
    const Eigen::MatrixXd Sigma_Z = dense_limit_cov(grid, data.geom, psi_hat,
                                                    data.xi_theta.zeta_theta, data.zeta_s,
                                                    data.phi_s);
    const Eigen::MatrixXd P = compute_P_star(lm, db.dYstar, Sigma_Z);
    const GodambeMatrices gm = godambe_matrices(P, Q);
    const PosteriorChain adj = open_faced_adjust(chain, gm, psi_hat);
    report.adjusted = summarize_chain(adj);
    report.adjusted_theta_density = kde(adj.coordinate(0));
    report.psi_hat = psi_hat;
    report.has_adjustment = true;
  }

  if (cfg.run_oracle) {
    t0 = std::chrono::steady_clock::now();
    report.oracle_density =
        full_posterior_grid(grid, training, Yt, Z, report.fit, report.fit.xi_s.kappa_s,
                            cfg.xi_d_true, priors.theta_star[0], cfg.oracle_points, cfg.radius,
                            cfg.dense_guard);
    report.seconds_oracle = seconds_since(t0);
    report.oracle.mode = report.oracle_density.mode();
    report.oracle.mean = report.oracle_density.mean();
    report.oracle.sd = report.oracle_density.sd();
    const auto iv = report.oracle_density.interval95();
    report.oracle.lo = iv.first;
    report.oracle.hi = iv.second;
    report.has_oracle = true;
    report.mode_near_oracle =
        std::abs(report.composite[0].mode - report.oracle.mode) <= report.oracle.sd;
  }
  return report;
}

std::vector<SweepEntry> block_count_sweep(const SpatialGrid& grid, const ParameterDesign& design,
                                          const Eigen::MatrixXd& Y, const ExperimentConfig& cfg,
                                          const std::vector<std::size_t>& Ms) {
  if (Ms.empty()) throw OutOfDomain("empty block-count list");
  // one shared discrepancy draw so entries differ only through the blocking
  Eigen::VectorXd delta;
  if (cfg.fixed_discrepancy != nullptr) {
    delta = *cfg.fixed_discrepancy;
  } else {
    Rng master(cfg.seed);
    master.raw();  // skip the tessellation slot, mirroring the single run
    const std::uint64_t seed_disc = master.raw();
    const Eigen::VectorXd unit =
        sample_gp_field(grid, ExpCov{cfg.xi_d_true.zeta_d, 1.0, cfg.xi_d_true.phi_d}, seed_disc,
                        cfg.radius, cfg.dense_guard);
    delta = std::sqrt(cfg.xi_d_true.kappa_d) * unit;
  }

  std::vector<SweepEntry> out;
  out.reserve(Ms.size());
  for (const std::size_t M : Ms) {
    ExperimentConfig c = cfg;
    c.M = M;
    c.seed = cfg.seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(M + 1));
    c.fixed_discrepancy = &delta;
    SweepEntry entry;
    entry.M = M;
    entry.report = perfect_model_experiment(grid, design, Y, c);
    entry.interval_width = entry.report.composite[0].hi - entry.report.composite[0].lo;
    entry.mode_bias = entry.report.composite[0].mode - entry.report.truth;
    out.push_back(std::move(entry));
  }
  return out;
}

namespace {

nlohmann::json summary_json(const std::vector<ParamSummary>& summaries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : summaries) {
    arr.push_back({{"name", s.name},
                   {"mode", s.mode},
                   {"mean", s.mean},
                   {"lo", s.lo},
                   {"hi", s.hi},
                   {"mcse", s.mcse}});
  }
  return arr;
}

}  // namespace

std::string experiment_report_to_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["composite"] = summary_json(report.composite);
  if (report.has_adjustment) {
    j["adjusted"] = summary_json(report.adjusted);
    j["psi_hat"] = {{"theta_star", report.psi_hat.theta_star},
                    {"kappa_s", report.psi_hat.kappa_s},
                    {"zeta_d", report.psi_hat.zeta_d},
                    {"kappa_d", report.psi_hat.kappa_d},
                    {"phi_d", report.psi_hat.phi_d}};
  }
  if (report.has_oracle) {
    j["oracle"] = {{"mode", report.oracle.mode},
                   {"mean", report.oracle.mean},
                   {"sd", report.oracle.sd},
                   {"lo", report.oracle.lo},
                   {"hi", report.oracle.hi}};
    j["mode_near_oracle"] = report.mode_near_oracle;
  }
  j["truth"] = report.truth;
  j["truth_covered"] = report.truth_covered;
  j["seed"] = report.seed;
  j["fit"] = nlohmann::json::parse(emulator_fit_to_json(report.fit));
  return j.dump(2) + "\n";
}

}  // namespace blockcal
