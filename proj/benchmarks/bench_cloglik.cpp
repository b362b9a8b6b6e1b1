// Microbenchmarks for the likelihood kernels: blocked composite evaluation at
// several block counts against the dense reference, the exact-vs-subsampled
// block-mean covariance, and one posterior evaluation as sampled in MCMC.

#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <vector>

#include "blockcal/calibrator.hpp"
#include "blockcal/oracle.hpp"
#include "blockcal/pipeline.hpp"

using namespace blockcal;

namespace {

struct Fixture {
  SpatialGrid grid;
  DesignTable dt;
  Eigen::MatrixXd Y;
  Eigen::VectorXd Z;
  EmulatorFit fit;

  Fixture() : grid(make_synthetic_grid()), dt(make_synthetic_design()) {
    fit.xi_s = synthetic_xi_s();
    fit.xi_theta = synthetic_xi_theta();
    fit.converged = true;
    Y = sample_ensemble(grid, dt.design, fit.xi_s, fit.xi_theta, 727);
    Z = Y.col(3) + std::sqrt(160000.0) *
                       sample_gp_field(grid, ExpCov{0.01, 1.0, 1.0 / 690.0}, 904);
  }

  // evaluation point: posterior-typical values, with the discrepancy range
  // short enough that every tessellation below yields a positive definite
  // subsampled block-mean covariance
  CalibrationState psi() const {
    CalibrationState s;
    s.theta_star = {2.1};
    s.kappa_s = fit.xi_s.kappa_s;
    s.zeta_d = 0.01;
    s.kappa_d = 160000.0;
    s.phi_d = 1.0 / 400.0;
    return s;
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

static void BM_CompositeCloglik(benchmark::State& state) {
  const Fixture& f = fixture();
  const std::size_t M = static_cast<std::size_t>(state.range(0));
  Blocking b = random_tessellation(f.grid, M, 7, 10);
  CalibrationData data =
      prepare_calibration(f.grid, f.dt.design, f.Y, f.Z, b, f.fit, HMode::subsample);
  CalibrationState psi = f.psi();
  for (auto _ : state) {
    benchmark::DoNotOptimize(calib_cloglik(data, psi));
  }
}
BENCHMARK(BM_CompositeCloglik)->Arg(10)->Arg(20)->Arg(50);

static void BM_CompositeCloglikExactH(benchmark::State& state) {
  const Fixture& f = fixture();
  const std::size_t M = static_cast<std::size_t>(state.range(0));
  Blocking b = random_tessellation(f.grid, M, 7, 10);
  CalibrationData data =
      prepare_calibration(f.grid, f.dt.design, f.Y, f.Z, b, f.fit, HMode::exact);
  CalibrationState psi = f.psi();
  for (auto _ : state) {
    benchmark::DoNotOptimize(calib_cloglik(data, psi));
  }
}
BENCHMARK(BM_CompositeCloglikExactH)->Arg(10)->Arg(20)->Arg(50);

static void BM_DenseLoglik(benchmark::State& state) {
  const Fixture& f = fixture();
  CalibrationState psi = f.psi();
  for (auto _ : state) {
    benchmark::DoNotOptimize(full_calib_loglik(psi, f.Z, f.Y, f.grid, f.dt.design, f.fit));
  }
}
BENCHMARK(BM_DenseLoglik);

static void BM_PrepareCalibration(benchmark::State& state) {
  const Fixture& f = fixture();
  Blocking b = random_tessellation(f.grid, 20, 7, 10);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        prepare_calibration(f.grid, f.dt.design, f.Y, f.Z, b, f.fit, HMode::subsample));
  }
}
BENCHMARK(BM_PrepareCalibration);

static void BM_PosteriorWithPriors(benchmark::State& state) {
  const Fixture& f = fixture();
  Blocking b = random_tessellation(f.grid, 20, 7, 10);
  CalibrationData data =
      prepare_calibration(f.grid, f.dt.design, f.Y, f.Z, b, f.fit, HMode::subsample);
  PriorSpec priors = default_priors(f.dt.design, f.fit.xi_s.kappa_s, 160000.0);
  priors.phi_d = {1.0 / 20000.0, 1.0 / 100.0};
  CalibrationState psi = f.psi();
  for (auto _ : state) {
    benchmark::DoNotOptimize(log_posterior(data, priors, psi));
  }
}
BENCHMARK(BM_PosteriorWithPriors);

static void BM_EmulationCloglik(benchmark::State& state) {
  const Fixture& f = fixture();
  Blocking b = random_tessellation(f.grid, 20, stage_seed(1, 0), 10);
  // evaluate at a fitted shape, as the pipeline does; the generating spatial
  // range is too long to be feasible under subsampled block means here
  NelderMeadConfig opt;
  opt.max_evals = 300;
  EmulatorFit fit = fit_emulator(f.grid, f.dt.design, f.Y, b,
                                 default_emulator_init(f.grid, f.dt.design, f.Y), opt);
  for (auto _ : state) {
    benchmark::DoNotOptimize(emulation_cloglik(f.grid, f.dt.design, f.Y, b, fit.xi_s,
                                               fit.xi_theta, HMode::subsample));
  }
}
BENCHMARK(BM_EmulationCloglik);

BENCHMARK_MAIN();
