#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "blockcal/errors.hpp"
#include "blockcal/oracle.hpp"
#include "blockcal/stats.hpp"
#include "test_support.hpp"

using namespace blockcal;

TEST_CASE("dense gaussian log density against closed forms") {
  // 1 x 1
  Eigen::VectorXd x(1), m(1);
  Eigen::MatrixXd v(1, 1);
  x << 1.7;
  m << 0.5;
  v << 2.0;
  double expected = -0.5 * (std::log(2.0 * M_PI * 2.0) + 1.2 * 1.2 / 2.0);
  CHECK(full_loglik(x, m, v) == doctest::Approx(expected).epsilon(1e-14));

  // diagonal: sum of univariate terms
  Eigen::VectorXd x3(3), m3(3);
  x3 << 0.2, -1.0, 2.5;
  m3 << 0.0, 0.5, 2.0;
  Eigen::Vector3d d(0.5, 1.5, 3.0);
  double want = 0.0;
  for (int k = 0; k < 3; ++k)
    want += -0.5 * (std::log(2.0 * M_PI * d(k)) + (x3(k) - m3(k)) * (x3(k) - m3(k)) / d(k));
  CHECK(full_loglik(x3, m3, d.asDiagonal()) == doctest::Approx(want).epsilon(1e-13));

  // random SPD vs the explicit inverse/determinant formula
  Eigen::MatrixXd S = testsup::random_spd(4, 77);
  Eigen::VectorXd x4 = testsup::random_matrix(4, 1, 78).col(0);
  double quad = x4.dot(S.inverse() * x4);
  double ref = -0.5 * (4.0 * std::log(2.0 * M_PI) + std::log(S.determinant()) + quad);
  CHECK(full_loglik(x4, Eigen::VectorXd::Zero(4), S) == doctest::Approx(ref).epsilon(1e-11));

  CHECK_THROWS_AS(full_loglik(x3, m, v), const DimensionMismatch&);
}

TEST_CASE("dense spatial covariance honors its size guard") {
  auto grid = testsup::random_grid(12, 5);
  CHECK_THROWS_AS(dense_spatial_cov(grid, ExpCov{0.1, 1.0, 0.001}, kEarthRadiusKm, 10),
                  const OutOfDomain&);
  Eigen::MatrixXd K = dense_spatial_cov(grid, ExpCov{0.1, 2.0, 0.001});
  CHECK(K.rows() == 12);
  CHECK(K(3, 3) == doctest::Approx(2.0 * 1.1));
  CHECK(K == K.transpose());
}

TEST_CASE("gp field draws have the advertised first and second moments") {
  auto grid = testsup::random_grid(25, 33);
  ExpCov cov{0.2, 1.7, 1.0 / 500.0};

  // vanishing amplitude gives a vanishing field
  Eigen::VectorXd tiny = sample_gp_field(grid, ExpCov{0.2, 1e-30, 1.0 / 500.0}, 4);
  CHECK(tiny.cwiseAbs().maxCoeff() < 1e-10);

  const int reps = 2000;
  Eigen::MatrixXd draws(reps, 25);
  for (int r = 0; r < reps; ++r)
    draws.row(r) = sample_gp_field(grid, cov, 1000 + static_cast<std::uint64_t>(r)).transpose();
  Eigen::RowVectorXd mu = draws.colwise().mean();
  CHECK(mu.cwiseAbs().maxCoeff() < 4.0 * std::sqrt(cov.kappa * (cov.zeta + 1.0) / reps) + 0.05);
  Eigen::MatrixXd centered = draws.rowwise() - mu;
  Eigen::MatrixXd emp = centered.transpose() * centered / double(reps - 1);
  Eigen::MatrixXd K = dense_spatial_cov(grid, cov);
  // marginal variance kappa (zeta + 1) within 10%
  double vbar_emp = emp.diagonal().mean();
  CHECK(vbar_emp == doctest::Approx(cov.kappa * (cov.zeta + 1.0)).epsilon(0.10));
  // and the full matrix within 10% in Frobenius norm
  CHECK((emp - K).norm() < 0.10 * K.norm());

  // determinism per seed
  CHECK(sample_gp_field(grid, cov, 42) == sample_gp_field(grid, cov, 42));
  CHECK(sample_gp_field(grid, cov, 42) != sample_gp_field(grid, cov, 43));
}

TEST_CASE("ensemble draws carry the kronecker covariance") {
  auto grid = testsup::random_grid(16, 44);
  auto design = testsup::line_design({1.0, 2.0, 3.0}, 0.0, 4.0);
  SpatialCovParams xs{0.05, 2.0, 1.0 / 400.0};
  ThetaCovParams xt{0.1, 1.0, {0.6}};

  const int reps = 3000;
  // accumulate covariance of (Y(0, 0), Y(0, 1)) and variance of Y(5, 2)
  std::vector<double> a(reps), b(reps), c(reps);
  for (int r = 0; r < reps; ++r) {
    Eigen::MatrixXd Y = sample_ensemble(grid, design, xs, xt, 7000 + static_cast<std::uint64_t>(r));
    a[static_cast<std::size_t>(r)] = Y(0, 0);
    b[static_cast<std::size_t>(r)] = Y(0, 1);
    c[static_cast<std::size_t>(r)] = Y(5, 2);
  }
  double ma = mean(a), mb = mean(b);
  double cov_ab = 0.0;
  for (int r = 0; r < reps; ++r)
    cov_ab += (a[static_cast<std::size_t>(r)] - ma) * (b[static_cast<std::size_t>(r)] - mb);
  cov_ab /= double(reps - 1);
  double want_ab = k_theta(design.thetas[0], design.thetas[1], xt) *
                   k_spatial(grid.at(0), grid.at(0), xs);
  CHECK(cov_ab == doctest::Approx(want_ab).epsilon(0.15));
  double want_var = k_theta(design.thetas[2], design.thetas[2], xt) *
                    k_spatial(grid.at(5), grid.at(5), xs);
  double sc = sample_sd(c);
  CHECK(sc * sc == doctest::Approx(want_var).epsilon(0.15));
}

TEST_CASE("oracle posterior normalizes and peaks where the likelihood does") {
  auto grid = testsup::random_grid(14, 51);
  auto design = testsup::line_design({0.5, 1.2, 1.9, 2.6}, 0.0, 3.1);
  EmulatorFit fit;
  fit.xi_s = {0.04, 2.2, 1.0 / 450.0};
  fit.xi_theta = {0.03, 1.0, {0.8}};
  Eigen::MatrixXd Y = sample_ensemble(grid, design, fit.xi_s, fit.xi_theta, 61);
  Eigen::VectorXd Z = Y.col(1) + sample_gp_field(grid, ExpCov{0.01, 0.8, 1.0 / 600.0}, 62);
  DiscrepancyCovParams xd{0.01, 0.8, 1.0 / 600.0};
  Interval support{0.3, 2.8};

  OraclePosterior post = full_posterior_grid(grid, design, Y, Z, fit, fit.xi_s.kappa_s, xd,
                                             support, 101);
  REQUIRE(post.theta.size() == 101);
  REQUIRE(post.density.size() == 101);
  CHECK(post.theta.front() == support.lo);
  CHECK(post.theta.back() == support.hi);

  double h = (support.hi - support.lo) / 100.0;
  double mass = 0.0;
  for (std::size_t k = 0; k + 1 < post.density.size(); ++k)
    mass += 0.5 * (post.density[k] + post.density[k + 1]) * h;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-10));

  // the reported mode agrees with a golden-section search over the raw
  // likelihood to within one grid spacing
  auto loglik = [&](double th) {
    CalibrationState psi;
    psi.theta_star = {th};
    psi.kappa_s = fit.xi_s.kappa_s;
    psi.zeta_d = xd.zeta_d;
    psi.kappa_d = xd.kappa_d;
    psi.phi_d = xd.phi_d;
    return full_calib_loglik(psi, Z, Y, grid, design, fit);
  };
  double peak = golden_section_max(loglik, support.lo, support.hi);
  CHECK(std::abs(post.mode() - peak) <= h + 1e-12);

  auto [lo95, hi95] = post.interval95();
  CHECK(lo95 < post.mean());
  CHECK(post.mean() < hi95);
  CHECK(post.sd() > 0.0);
}

TEST_CASE("chain summaries agree with direct quantiles of the retained samples") {
  Rng rng(808);
  PosteriorChain chain;
  chain.warmup = 100;
  for (int t = 0; t < 1100; ++t) {
    CalibrationState st;
    st.theta_star = {rng.normal() * 0.3 + 2.0};
    st.kappa_s = std::exp(rng.normal() * 0.1);
    st.zeta_d = 0.01 + 0.001 * rng.uniform();
    st.kappa_d = 1.0 + 0.2 * rng.uniform();
    st.phi_d = 0.002 + 0.0001 * rng.uniform();
    chain.samples.push_back(st);
    chain.log_post.push_back(0.0);
  }
  auto sums = summarize_chain(chain);
  REQUIRE(sums.size() == 5);
  CHECK(sums[0].name == "theta_star_1");
  CHECK(sums[4].name == "phi_d");
  std::vector<double> th = chain.coordinate(0);
  REQUIRE(th.size() == 1000);
  CHECK(sums[0].mean == doctest::Approx(mean(th)).epsilon(1e-12));
  CHECK(sums[0].lo == doctest::Approx(quantile(th, 0.025)).epsilon(1e-12));
  CHECK(sums[0].hi == doctest::Approx(quantile(th, 0.975)).epsilon(1e-12));
  CHECK(sums[0].lo < sums[0].mode);
  CHECK(sums[0].mode < sums[0].hi);
  CHECK(sums[0].mcse == doctest::Approx(batch_means_mcse(th)).epsilon(1e-12));
}

TEST_CASE("perfect-model experiment on a clean synthetic concentrates near the truth") {
  auto grid = testsup::random_grid(40, 71);
  auto design = testsup::line_design({0.5, 1.0, 1.5, 2.0, 2.5, 3.0}, 0.0, 3.5);
  SpatialCovParams xs{0.03, 2.5, 1.0 / 450.0};
  ThetaCovParams xt{0.04, 1.0, {0.7}};
  Eigen::MatrixXd Y = sample_ensemble(grid, design, xs, xt, 81);

  ExperimentConfig cfg;
  cfg.truth_index = 2;  // theta = 1.5
  cfg.xi_d_true = {0.01, 0.05, 1.0 / 600.0};  // nearly negligible discrepancy
  cfg.seed = 5;
  cfg.M = 4;
  cfg.m_max = 1000;
  cfg.chain_steps = 1500;
  cfg.run_oracle = true;
  cfg.oracle_points = 61;
  cfg.mode = HMode::exact;
  cfg.phi_d_prior = {1.0 / 2000.0, 1.0 / 100.0};
  cfg.mcmc.init_scales = {};

  ExperimentReport rep = perfect_model_experiment(grid, design, Y, cfg);
  CHECK(rep.truth == doctest::Approx(1.5));
  REQUIRE(rep.composite.size() == 5);
  CHECK(rep.composite[0].name == "theta_star_1");
  // with an almost-perfect model the posterior must land close to the truth
  CHECK(std::abs(rep.composite[0].mode - 1.5) < 0.5);
  CHECK(rep.composite[0].lo < rep.composite[0].hi);
  CHECK(rep.has_oracle);
  CHECK(rep.oracle.sd > 0.0);
  CHECK(std::abs(rep.oracle.mode - 1.5) < 0.5);
  CHECK(rep.seed == 5);
  CHECK(rep.fit.converged);

  // byte-stable: rerunning with the same configuration reproduces the chain
  ExperimentReport rep2 = perfect_model_experiment(grid, design, Y, cfg);
  CHECK(rep2.composite[0].mode == rep.composite[0].mode);
  CHECK(rep2.composite[0].mcse == rep.composite[0].mcse);

  // report JSON is valid and carries the headline fields
  auto j = nlohmann::json::parse(experiment_report_to_json(rep));
  CHECK(j.contains("composite"));
  CHECK(j.contains("oracle"));
  CHECK(j["truth"].get<double>() == doctest::Approx(1.5));
  CHECK(!j.contains("seconds_fit"));  // timings stay out of the deterministic payload
}

TEST_CASE("zero discrepancy draw pins the experiment to the held-out run") {
  auto grid = testsup::random_grid(36, 91);
  auto design = testsup::line_design({0.5, 1.1, 1.7, 2.3, 2.9}, 0.0, 3.4);
  SpatialCovParams xs{0.03, 2.0, 1.0 / 400.0};
  ThetaCovParams xt{0.05, 1.0, {0.8}};
  Eigen::MatrixXd Y = sample_ensemble(grid, design, xs, xt, 95);

  Eigen::VectorXd zero = Eigen::VectorXd::Zero(36);
  ExperimentConfig cfg;
  cfg.truth_index = 1;
  cfg.xi_d_true = {0.01, 0.04, 1.0 / 500.0};
  cfg.seed = 11;
  cfg.M = 3;
  cfg.m_max = 1000;
  cfg.chain_steps = 1200;
  cfg.run_oracle = false;
  cfg.mode = HMode::exact;
  cfg.phi_d_prior = {1.0 / 2000.0, 1.0 / 100.0};
  cfg.fixed_discrepancy = &zero;

  ExperimentReport rep = perfect_model_experiment(grid, design, Y, cfg);
  CHECK(!rep.has_oracle);
  // observations equal the held-out run exactly, so the interval straddles it
  CHECK(rep.composite[0].lo < design.thetas[1][0] + 0.4);
  CHECK(rep.composite[0].hi > design.thetas[1][0] - 0.4);
  CHECK(rep.truth_covered);
}

TEST_CASE("block sweep shares the discrepancy draw across entries") {
  auto grid = testsup::random_grid(30, 101);
  auto design = testsup::line_design({0.6, 1.2, 1.8, 2.4}, 0.0, 3.0);
  SpatialCovParams xs{0.03, 2.0, 1.0 / 400.0};
  ThetaCovParams xt{0.05, 1.0, {0.8}};
  Eigen::MatrixXd Y = sample_ensemble(grid, design, xs, xt, 105);

  ExperimentConfig cfg;
  cfg.truth_index = 1;
  cfg.xi_d_true = {0.01, 0.06, 1.0 / 500.0};
  cfg.seed = 13;
  cfg.m_max = 1000;
  cfg.chain_steps = 1100;
  cfg.run_oracle = false;
  cfg.mode = HMode::exact;
  cfg.phi_d_prior = {1.0 / 2000.0, 1.0 / 100.0};

  auto entries = block_count_sweep(grid, design, Y, cfg, {1, 3});
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].M == 1);
  CHECK(entries[1].M == 3);
  for (const auto& e : entries) {
    CHECK(e.interval_width == doctest::Approx(e.report.composite[0].hi - e.report.composite[0].lo));
    CHECK(e.interval_width > 0.0);
    CHECK(std::isfinite(e.mode_bias));
  }
}
