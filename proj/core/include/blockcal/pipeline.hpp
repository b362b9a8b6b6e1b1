#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "blockcal/calibrator.hpp"
#include "blockcal/emulator.hpp"
#include "blockcal/geo.hpp"
#include "blockcal/oracle.hpp"

namespace blockcal {

struct PriorConfig {
  double zeta_d_shape = 2.0;
  double zeta_d_mode = 0.01;
  double kappa_d_shape = 10000.0;
  double kappa_d_guess = 0.0;  // 0 = min residual variance vs ensemble members
  double kappa_s_shape = 20.0;
  double phi_d_lo = 1e-6;
  double phi_d_hi = 1.0 / 800.0;  // correlation length at least 800 km
  std::vector<std::pair<double, double>> theta;  // empty = design hull
};

struct ExperimentSection {
  std::size_t truth_index = 3;
  double zeta_d = 0.01;
  double kappa_d = 160000.0;
  double range_km = 690.0;  // discrepancy correlation length, phi_d = 1/range
  std::size_t replicates = 1;
  std::size_t oracle_points = 161;
  // the experiment's phi_d prior must cover 1/range_km, so it is wider than
  // the calibration default
  double phi_d_lo = 1.0 / 20000.0;
  double phi_d_hi = 1.0 / 100.0;
  std::vector<std::size_t> sweep_blocks;  // non-empty = block-count sweep
};

struct PipelineConfig {
  std::string grid_csv;
  std::string design_csv;
  std::string ensemble_csv;
  std::string observations_csv;
  std::size_t blocks = 50;
  std::size_t subsample_max = 10;
  std::uint64_t seed = 1;
  std::size_t chain_steps = 12000;
  std::string adjustment = "none";  // none | open-faced | curvature
  bool oracle = false;
  std::size_t oracle_points = 161;
  std::string h_mode = "subsample";  // exact | subsample
  std::size_t threads = 1;
  double radius_km = kEarthRadiusKm;
  int fit_max_evals = 2000;
  PriorConfig priors;
  ExperimentSection experiment;
};

// ConfigError on out-of-range fields; in particular a chain shorter than
// 1000 steps cannot feed an adjustment (mode estimation needs samples).
void validate_pipeline_config(const PipelineConfig& cfg);

PipelineConfig pipeline_config_from_json(const std::string& text);
std::string pipeline_config_to_json(const PipelineConfig& cfg);
PipelineConfig load_pipeline_config(const std::string& path);

HMode parse_h_mode(const std::string& name);

// Seed for pipeline stage `stage`, mixed so stages draw from disjoint streams.
std::uint64_t stage_seed(std::uint64_t base, std::size_t stage);

// Design file: CSV `id,theta_1..theta_q`; the ids name the ensemble columns.
struct DesignTable {
  std::vector<std::string> ids;
  ParameterDesign design;
};

DesignTable read_design_csv(const std::string& path);
void write_design_csv(const std::string& path, const DesignTable& table);

// Ensemble file: CSV, first column `index` (location id), remaining columns
// named by design id in any order; returned grid- and design-aligned.
Eigen::MatrixXd read_ensemble_csv(const std::string& path, const SpatialGrid& grid,
                                  const DesignTable& table);
void write_ensemble_csv(const std::string& path, const SpatialGrid& grid,
                        const DesignTable& table, const Eigen::MatrixXd& Y);

// Observations: either `index,value` (grid-aligned by id) or a regular
// `lat,lon,value` field, which is bilinearly regridded onto the grid.
Eigen::VectorXd read_observations_csv(const std::string& path, const SpatialGrid& grid);
void write_observations_csv(const std::string& path, const SpatialGrid& grid,
                            const Eigen::VectorXd& Z);

// Stable machine-readable code per library error type, and the error object
// the CLI prints on stderr.
std::string error_code(const std::exception& e);
std::string error_json(const std::exception& e);

// --- bundled synthetic dataset ---
// A 200-point grid split into two 10 x 10 patches at 5 degree spacing (two
// disconnected regions), and a 10-run scalar design spanning [0.5, 5.5].
SpatialGrid make_synthetic_grid();
DesignTable make_synthetic_design();
SpatialCovParams synthetic_xi_s();
ThetaCovParams synthetic_xi_theta();

// --- pipeline stages ---
// Each stage reads its inputs (and predecessors' artifacts) from the config
// and the `out` directory, writes its artifacts under `out`, and prints a
// one-screen summary. Failures are thrown; the CLI maps them to error JSON.
void cmd_tessellate(const PipelineConfig& cfg, const std::string& out);
void cmd_emulate(const PipelineConfig& cfg, const std::string& out);
void cmd_calibrate(const PipelineConfig& cfg, const std::string& out, bool resume = false);
void cmd_adjust(const PipelineConfig& cfg, const std::string& out);
void cmd_report(const PipelineConfig& cfg, const std::string& out);
void cmd_experiment(const PipelineConfig& cfg, const std::string& out);
void cmd_oracle(const PipelineConfig& cfg, const std::string& out);

}  // namespace blockcal
