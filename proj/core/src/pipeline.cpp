#include "blockcal/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "blockcal/csv.hpp"
#include "blockcal/errors.hpp"
#include "blockcal/godambe.hpp"

namespace blockcal {

namespace {

namespace fs = std::filesystem;

constexpr const char* kBlockingFile = "blocking.json";
constexpr const char* kEmulatorFile = "emulator.json";
constexpr const char* kChainCsv = "chain.csv";
constexpr const char* kChainMeta = "chain.meta.json";
constexpr const char* kAdjChainCsv = "adjusted_chain.csv";
constexpr const char* kAdjChainMeta = "adjusted_chain.meta.json";
constexpr const char* kGodambeFile = "godambe.json";

// stage indices for stage_seed
constexpr std::size_t kStageTessellate = 0;
constexpr std::size_t kStageCalibrate = 2;
constexpr std::size_t kStageAdjust = 3;
constexpr std::size_t kStageExperiment = 4;

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

std::string iso_now() {
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return stamp;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out.good()) throw IoError("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double sample_variance(const Eigen::VectorXd& Z) {
  if (Z.size() < 2) throw OutOfDomain("variance needs at least two values");
  const double m = Z.mean();
  return (Z.array() - m).square().sum() / static_cast<double>(Z.size() - 1);
}

// Default discrepancy-variance guess: smallest sample variance of the residual
// field over ensemble members. var(Z) alone would fold in the model signal and
// overshoot badly.
double residual_variance_guess(const Eigen::VectorXd& Z, const Eigen::MatrixXd& Y) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < Y.cols(); ++j) {
    best = std::min(best, sample_variance(Z - Y.col(j)));
  }
  return best;
}

PriorSpec build_priors(const PriorConfig& pc, const ParameterDesign& design, double kappa_s_hat,
                       const Eigen::VectorXd& Z, const Eigen::MatrixXd& Y) {
  PriorSpec pr;
  if (pc.theta.empty()) {
    for (const auto& b : design.bounds) pr.theta_star.push_back({b.first, b.second});
  } else {
    if (pc.theta.size() != design.q()) {
      throw ConfigError("theta prior count != design dimension");
    }
    for (const auto& b : pc.theta) pr.theta_star.push_back({b.first, b.second});
  }
  pr.zeta_d = {pc.zeta_d_shape, pc.zeta_d_mode * (pc.zeta_d_shape + 1.0)};
  const double guess = pc.kappa_d_guess > 0.0 ? pc.kappa_d_guess : residual_variance_guess(Z, Y);
  pr.kappa_d = {pc.kappa_d_shape, guess * (pc.kappa_d_shape + 1.0)};
  pr.kappa_s = {pc.kappa_s_shape, kappa_s_hat * (pc.kappa_s_shape + 1.0)};
  pr.phi_d = {pc.phi_d_lo, pc.phi_d_hi};
  return pr;
}

// prior modes (and interval midpoints) as the chain start
CalibrationState initial_state(const PriorSpec& pr, double kappa_s_hat) {
  CalibrationState s;
  for (const auto& iv : pr.theta_star) s.theta_star.push_back(0.5 * (iv.lo + iv.hi));
  s.kappa_s = kappa_s_hat;
  s.zeta_d = pr.zeta_d.scale / (pr.zeta_d.shape + 1.0);
  s.kappa_d = pr.kappa_d.scale / (pr.kappa_d.shape + 1.0);
  // arithmetic midpoint: the geometric one lands on implausibly long ranges
  // where the block covariances are nearly singular
  s.phi_d = 0.5 * (pr.phi_d.lo + pr.phi_d.hi);
  return s;
}

struct ModelInputs {
  SpatialGrid grid;
  DesignTable dt;
  Eigen::MatrixXd Y;
};

ModelInputs load_model_inputs(const PipelineConfig& cfg) {
  SpatialGrid grid = read_grid_csv(cfg.grid_csv);
  DesignTable dt = read_design_csv(cfg.design_csv);
  Eigen::MatrixXd Y = read_ensemble_csv(cfg.ensemble_csv, grid, dt);
  return {std::move(grid), std::move(dt), std::move(Y)};
}

void write_curve_csv(const std::string& path, const std::string& xname,
                     const std::vector<double>& x, const std::vector<double>& density) {
  CsvWriter w(path);
  w.header({xname, "density"});
  for (std::size_t i = 0; i < x.size(); ++i) {
    w.row({format_double(x[i]), format_double(density[i])});
  }
}

PriorConfig prior_config_from_json(const nlohmann::json& j) {
  PriorConfig pc;
  pc.zeta_d_shape = j.value("zeta_d_shape", pc.zeta_d_shape);
  pc.zeta_d_mode = j.value("zeta_d_mode", pc.zeta_d_mode);
  pc.kappa_d_shape = j.value("kappa_d_shape", pc.kappa_d_shape);
  pc.kappa_d_guess = j.value("kappa_d_guess", pc.kappa_d_guess);
  pc.kappa_s_shape = j.value("kappa_s_shape", pc.kappa_s_shape);
  pc.phi_d_lo = j.value("phi_d_lo", pc.phi_d_lo);
  pc.phi_d_hi = j.value("phi_d_hi", pc.phi_d_hi);
  if (j.contains("theta")) {
    for (const auto& pair : j.at("theta")) {
      if (!pair.is_array() || pair.size() != 2) {
        throw ConfigError("theta prior entries must be [lo, hi] pairs");
      }
      pc.theta.emplace_back(pair[0].get<double>(), pair[1].get<double>());
    }
  }
  return pc;
}

nlohmann::json prior_config_to_json(const PriorConfig& pc) {
  nlohmann::json j;
  j["zeta_d_shape"] = pc.zeta_d_shape;
  j["zeta_d_mode"] = pc.zeta_d_mode;
  j["kappa_d_shape"] = pc.kappa_d_shape;
  j["kappa_d_guess"] = pc.kappa_d_guess;
  j["kappa_s_shape"] = pc.kappa_s_shape;
  j["phi_d_lo"] = pc.phi_d_lo;
  j["phi_d_hi"] = pc.phi_d_hi;
  nlohmann::json th = nlohmann::json::array();
  for (const auto& b : pc.theta) th.push_back({b.first, b.second});
  j["theta"] = th;
  return j;
}

ExperimentSection experiment_section_from_json(const nlohmann::json& j) {
  ExperimentSection ex;
  ex.truth_index = j.value("truth_index", ex.truth_index);
  ex.zeta_d = j.value("zeta_d", ex.zeta_d);
  ex.kappa_d = j.value("kappa_d", ex.kappa_d);
  ex.range_km = j.value("range_km", ex.range_km);
  ex.replicates = j.value("replicates", ex.replicates);
  ex.oracle_points = j.value("oracle_points", ex.oracle_points);
  ex.phi_d_lo = j.value("phi_d_lo", ex.phi_d_lo);
  ex.phi_d_hi = j.value("phi_d_hi", ex.phi_d_hi);
  if (j.contains("sweep_blocks")) {
    ex.sweep_blocks = j.at("sweep_blocks").get<std::vector<std::size_t>>();
  }
  return ex;
}

nlohmann::json experiment_section_to_json(const ExperimentSection& ex) {
  nlohmann::json j;
  j["truth_index"] = ex.truth_index;
  j["zeta_d"] = ex.zeta_d;
  j["kappa_d"] = ex.kappa_d;
  j["range_km"] = ex.range_km;
  j["replicates"] = ex.replicates;
  j["oracle_points"] = ex.oracle_points;
  j["phi_d_lo"] = ex.phi_d_lo;
  j["phi_d_hi"] = ex.phi_d_hi;
  j["sweep_blocks"] = ex.sweep_blocks;
  return j;
}

ExperimentConfig experiment_config(const PipelineConfig& cfg) {
  ExperimentConfig ec;
  ec.truth_index = cfg.experiment.truth_index;
  ec.xi_d_true = {cfg.experiment.zeta_d, cfg.experiment.kappa_d, 1.0 / cfg.experiment.range_km};
  ec.M = cfg.blocks;
  ec.m_max = cfg.subsample_max;
  ec.chain_steps = cfg.chain_steps;
  ec.run_oracle = cfg.oracle;
  ec.adjust = cfg.adjustment != "none";
  ec.oracle_points = cfg.experiment.oracle_points;
  ec.mode = parse_h_mode(cfg.h_mode);
  ec.radius = cfg.radius_km;
  ec.phi_d_prior = {cfg.experiment.phi_d_lo, cfg.experiment.phi_d_hi};
  ec.fit_opt.max_evals = cfg.fit_max_evals;
  return ec;
}

}  // namespace

void validate_pipeline_config(const PipelineConfig& cfg) {
  if (cfg.adjustment != "none" && cfg.adjustment != "open-faced" &&
      cfg.adjustment != "curvature") {
    throw ConfigError("adjustment must be none, open-faced, or curvature");
  }
  parse_h_mode(cfg.h_mode);
  if (cfg.blocks < 1) throw ConfigError("blocks must be >= 1");
  if (cfg.subsample_max < 1) throw ConfigError("subsample_max must be >= 1");
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  if (cfg.chain_steps < 1) throw ConfigError("chain_steps must be >= 1");
  if (cfg.adjustment != "none" && cfg.chain_steps < 1000) {
    throw ConfigError("adjustment needs chain_steps >= 1000 (mode estimation needs samples)");
  }
  if (cfg.oracle_points < 2) throw ConfigError("oracle_points must be >= 2");
  if (cfg.fit_max_evals < 1) throw ConfigError("fit_max_evals must be >= 1");
  if (!(cfg.radius_km > 0.0)) throw ConfigError("radius_km must be positive");

  const PriorConfig& pc = cfg.priors;
  if (!(pc.zeta_d_shape > 0.0 && pc.zeta_d_mode > 0.0 && pc.kappa_d_shape > 0.0 &&
        pc.kappa_s_shape > 0.0)) {
    throw ConfigError("prior shapes and modes must be positive");
  }
  if (pc.kappa_d_guess < 0.0) throw ConfigError("kappa_d_guess must be >= 0");
  if (!(pc.phi_d_lo > 0.0 && pc.phi_d_lo < pc.phi_d_hi)) {
    throw ConfigError("phi_d prior needs 0 < lo < hi");
  }
  for (const auto& b : pc.theta) {
    if (!(b.first < b.second)) throw ConfigError("theta prior needs lo < hi");
  }

  const ExperimentSection& ex = cfg.experiment;
  if (!(ex.zeta_d > 0.0 && ex.kappa_d > 0.0 && ex.range_km > 0.0)) {
    throw ConfigError("experiment truth parameters must be positive");
  }
  if (ex.replicates < 1) throw ConfigError("replicates must be >= 1");
  if (ex.oracle_points < 2) throw ConfigError("experiment oracle_points must be >= 2");
  if (!(ex.phi_d_lo > 0.0 && ex.phi_d_lo < ex.phi_d_hi)) {
    throw ConfigError("experiment phi_d prior needs 0 < lo < hi");
  }
  for (std::size_t M : ex.sweep_blocks) {
    if (M < 1) throw ConfigError("sweep block counts must be >= 1");
  }
}

PipelineConfig pipeline_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("pipeline config: ") + e.what());
  }
  PipelineConfig cfg;
  try {
    cfg.grid_csv = j.value("grid", cfg.grid_csv);
    cfg.design_csv = j.value("design", cfg.design_csv);
    cfg.ensemble_csv = j.value("ensemble", cfg.ensemble_csv);
    cfg.observations_csv = j.value("observations", cfg.observations_csv);
    cfg.blocks = j.value("blocks", cfg.blocks);
    cfg.subsample_max = j.value("subsample_max", cfg.subsample_max);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.chain_steps = j.value("chain_steps", cfg.chain_steps);
    cfg.adjustment = j.value("adjustment", cfg.adjustment);
    cfg.oracle = j.value("oracle", cfg.oracle);
    cfg.oracle_points = j.value("oracle_points", cfg.oracle_points);
    cfg.h_mode = j.value("h_mode", cfg.h_mode);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.radius_km = j.value("radius_km", cfg.radius_km);
    cfg.fit_max_evals = j.value("fit_max_evals", cfg.fit_max_evals);
    if (j.contains("priors")) cfg.priors = prior_config_from_json(j.at("priors"));
    if (j.contains("experiment")) {
      cfg.experiment = experiment_section_from_json(j.at("experiment"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("pipeline config: ") + e.what());
  }
  validate_pipeline_config(cfg);
  return cfg;
}

std::string pipeline_config_to_json(const PipelineConfig& cfg) {
  nlohmann::json j;
  j["grid"] = cfg.grid_csv;
  j["design"] = cfg.design_csv;
  j["ensemble"] = cfg.ensemble_csv;
  j["observations"] = cfg.observations_csv;
  j["blocks"] = cfg.blocks;
  j["subsample_max"] = cfg.subsample_max;
  j["seed"] = cfg.seed;
  j["chain_steps"] = cfg.chain_steps;
  j["adjustment"] = cfg.adjustment;
  j["oracle"] = cfg.oracle;
  j["oracle_points"] = cfg.oracle_points;
  j["h_mode"] = cfg.h_mode;
  j["threads"] = cfg.threads;
  j["radius_km"] = cfg.radius_km;
  j["fit_max_evals"] = cfg.fit_max_evals;
  j["priors"] = prior_config_to_json(cfg.priors);
  j["experiment"] = experiment_section_to_json(cfg.experiment);
  return j.dump(2) + "\n";
}

PipelineConfig load_pipeline_config(const std::string& path) {
  return pipeline_config_from_json(read_text(path));
}

HMode parse_h_mode(const std::string& name) {
  if (name == "exact") return HMode::exact;
  if (name == "subsample") return HMode::subsample;
  throw ConfigError("h_mode must be exact or subsample, got '" + name + "'");
}

std::uint64_t stage_seed(std::uint64_t base, std::size_t stage) {
  return base ^ (0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(stage) + 1));
}

DesignTable read_design_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  const std::size_t idc = t.col("id");
  std::size_t q = 0;
  while (t.has_col("theta_" + std::to_string(q + 1))) ++q;
  if (q == 0) throw ParseError(path + ": no theta_1 column");
  std::vector<std::size_t> tc;
  for (std::size_t k = 1; k <= q; ++k) tc.push_back(t.col("theta_" + std::to_string(k)));

  DesignTable out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out.ids.push_back(t.rows[r][idc]);
    std::vector<double> th(q);
    for (std::size_t k = 0; k < q; ++k) th[k] = t.num(r, tc[k]);
    out.design.thetas.push_back(std::move(th));
  }
  std::vector<std::string> sorted = out.ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ParseError(path + ": duplicate design id");
  }
  out.design.bounds.resize(q);
  for (std::size_t k = 0; k < q; ++k) {
    double lo = out.design.thetas[0][k], hi = lo;
    for (const auto& th : out.design.thetas) {
      lo = std::min(lo, th[k]);
      hi = std::max(hi, th[k]);
    }
    out.design.bounds[k] = {lo, hi};
  }
  out.design.validate();
  return out;
}

void write_design_csv(const std::string& path, const DesignTable& table) {
  const std::size_t q = table.design.q();
  CsvWriter w(path);
  std::vector<std::string> header = {"id"};
  for (std::size_t k = 1; k <= q; ++k) header.push_back("theta_" + std::to_string(k));
  w.header(header);
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    std::vector<std::string> cells = {table.ids[i]};
    for (std::size_t k = 0; k < q; ++k) {
      cells.push_back(format_double(table.design.thetas[i][k]));
    }
    w.row(cells);
  }
}

Eigen::MatrixXd read_ensemble_csv(const std::string& path, const SpatialGrid& grid,
                                  const DesignTable& table) {
  CsvTable t = read_csv(path);
  const std::size_t idx = t.col("index");
  if (t.rows.size() != grid.n()) {
    throw ParseError(path + ": expected " + std::to_string(grid.n()) + " rows, found " +
                     std::to_string(t.rows.size()));
  }
  std::vector<std::size_t> cols;
  for (const auto& id : table.ids) cols.push_back(t.col(id));
  Eigen::MatrixXd Y(static_cast<Eigen::Index>(grid.n()), static_cast<Eigen::Index>(table.ids.size()));
  std::vector<bool> seen(grid.n(), false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t pos = grid.pos_of(static_cast<int>(t.integer(r, idx)));
    if (seen[pos]) throw ParseError(path + ": duplicate location index");
    seen[pos] = true;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      Y(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(j)) = t.num(r, cols[j]);
    }
  }
  return Y;
}

void write_ensemble_csv(const std::string& path, const SpatialGrid& grid,
                        const DesignTable& table, const Eigen::MatrixXd& Y) {
  if (Y.rows() != static_cast<Eigen::Index>(grid.n()) ||
      Y.cols() != static_cast<Eigen::Index>(table.ids.size())) {
    throw DimensionMismatch("ensemble shape does not match grid/design");
  }
  CsvWriter w(path);
  std::vector<std::string> header = {"index"};
  header.insert(header.end(), table.ids.begin(), table.ids.end());
  w.header(header);
  for (std::size_t i = 0; i < grid.n(); ++i) {
    std::vector<std::string> cells = {std::to_string(grid.at(i).index)};
    for (Eigen::Index j = 0; j < Y.cols(); ++j) {
      cells.push_back(format_double(Y(static_cast<Eigen::Index>(i), j)));
    }
    w.row(cells);
  }
}

Eigen::VectorXd read_observations_csv(const std::string& path, const SpatialGrid& grid) {
  CsvTable t = read_csv(path);
  if (t.has_col("index") && t.has_col("value")) {
    const std::size_t idx = t.col("index");
    const std::size_t val = t.col("value");
    if (t.rows.size() != grid.n()) {
      throw ParseError(path + ": expected " + std::to_string(grid.n()) + " rows, found " +
                       std::to_string(t.rows.size()));
    }
    Eigen::VectorXd Z(static_cast<Eigen::Index>(grid.n()));
    std::vector<bool> seen(grid.n(), false);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::size_t pos = grid.pos_of(static_cast<int>(t.integer(r, idx)));
      if (seen[pos]) throw ParseError(path + ": duplicate location index");
      seen[pos] = true;
      Z(static_cast<Eigen::Index>(pos)) = t.num(r, val);
    }
    return Z;
  }
  if (t.has_col("lat") && t.has_col("lon") && t.has_col("value")) {
    const RegularField field = read_field_csv(path);
    const RegridResult rr = bilinear_regrid(field, grid, false);
    Eigen::VectorXd Z(static_cast<Eigen::Index>(grid.n()));
    for (std::size_t i = 0; i < grid.n(); ++i) {
      if (rr.missing[i]) {
        throw OutOfDomain("observation field is masked around location id " +
                          std::to_string(grid.at(i).index));
      }
      Z(static_cast<Eigen::Index>(i)) = rr.values[i];
    }
    return Z;
  }
  throw ParseError(path + ": need index,value or lat,lon,value columns");
}

void write_observations_csv(const std::string& path, const SpatialGrid& grid,
                            const Eigen::VectorXd& Z) {
  if (Z.size() != static_cast<Eigen::Index>(grid.n())) {
    throw DimensionMismatch("observation length does not match grid");
  }
  CsvWriter w(path);
  w.header({"index", "value"});
  for (std::size_t i = 0; i < grid.n(); ++i) {
    w.row({std::to_string(grid.at(i).index), format_double(Z(static_cast<Eigen::Index>(i)))});
  }
}

std::string error_code(const std::exception& e) {
  if (dynamic_cast<const DimensionMismatch*>(&e)) return "dimension_mismatch";
  if (dynamic_cast<const NotPositiveDefinite*>(&e)) return "not_positive_definite";
  if (dynamic_cast<const RegionUnreachable*>(&e)) return "region_unreachable";
  if (dynamic_cast<const OutOfDomain*>(&e)) return "out_of_domain";
  if (dynamic_cast<const OptimizerDiverged*>(&e)) return "optimizer_diverged";
  if (dynamic_cast<const InitInfeasible*>(&e)) return "init_infeasible";
  if (dynamic_cast<const NonDifferentiablePoint*>(&e)) return "non_differentiable_point";
  if (dynamic_cast<const EmptyChain*>(&e)) return "empty_chain";
  if (dynamic_cast<const ParseError*>(&e)) return "parse_error";
  if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const IoError*>(&e)) return "io_error";
  if (dynamic_cast<const Error*>(&e)) return "error";
  return "internal";
}

std::string error_json(const std::exception& e) {
  nlohmann::json j;
  j["error"] = error_code(e);
  j["message"] = e.what();
  return j.dump() + "\n";
}

SpatialGrid make_synthetic_grid() {
  std::vector<Location> locs;
  int id = 0;
  for (int region = 0; region < 2; ++region) {
    const double lon0 = region == 0 ? 0.0 : 90.0;
    for (int i = 0; i < 10; ++i) {
      for (int j = 0; j < 10; ++j) {
        locs.push_back({id++, -20.0 + 5.0 * i, lon0 + 5.0 * j, region});
      }
    }
  }
  return SpatialGrid(std::move(locs));
}

DesignTable make_synthetic_design() {
  DesignTable t;
  const std::vector<double> vals = {0.5, 1.0, 1.5, 2.153, 2.5, 3.0, 3.5, 4.0, 4.5, 5.5};
  for (std::size_t i = 0; i < vals.size(); ++i) {
    t.ids.push_back("run" + std::to_string(i + 1));
    t.design.thetas.push_back({vals[i]});
  }
  t.design.bounds = {{0.5, 5.5}};
  return t;
}

SpatialCovParams synthetic_xi_s() { return {0.01, 1.0e6, 1.0 / 3000.0}; }

ThetaCovParams synthetic_xi_theta() { return {0.05, 1.0, {0.4}}; }

void cmd_tessellate(const PipelineConfig& cfg, const std::string& out) {
  ensure_dir(out);
  const SpatialGrid grid = read_grid_csv(cfg.grid_csv);
  const Blocking blocking = random_tessellation(grid, cfg.blocks, stage_seed(cfg.seed, kStageTessellate),
                                                cfg.subsample_max, cfg.radius_km);
  save_blocking(join(out, kBlockingFile), blocking);

  std::size_t lo = grid.n(), hi = 0, singletons = 0;
  for (const auto& blk : blocking.blocks) {
    lo = std::min(lo, blk.size());
    hi = std::max(hi, blk.size());
    if (blk.size() == 1) ++singletons;
  }
  std::cout << "tessellate: " << blocking.M() << " blocks over " << grid.n()
            << " locations, sizes " << lo << ".." << hi << ", " << singletons
            << " singleton(s)\n";
}

void cmd_emulate(const PipelineConfig& cfg, const std::string& out) {
  ensure_dir(out);
  const ModelInputs mi = load_model_inputs(cfg);
  const Blocking blocking = load_blocking(join(out, kBlockingFile));

  NelderMeadConfig nm;
  nm.max_evals = cfg.fit_max_evals;
  const auto t0 = std::chrono::steady_clock::now();
  const EmulatorFit fit = fit_emulator(mi.grid, mi.dt.design, mi.Y, blocking,
                                       default_emulator_init(mi.grid, mi.dt.design, mi.Y,
                                                             cfg.radius_km),
                                       nm, parse_h_mode(cfg.h_mode), cfg.radius_km);
  const double secs = seconds_since(t0);
  save_emulator_fit(join(out, kEmulatorFile), fit);

  nlohmann::json meta;
  meta["seconds"] = secs;
  meta["written_at"] = iso_now();
  write_text(join(out, "emulator.meta.json"), meta.dump(2) + "\n");

  std::cout << "emulate: cloglik=" << format_double(fit.cloglik)
            << " converged=" << (fit.converged ? "yes" : "no") << " evals=" << fit.evals
            << " kappa_s=" << format_double(fit.xi_s.kappa_s)
            << " zeta_theta=" << format_double(fit.xi_theta.zeta_theta) << "\n";
}

void cmd_calibrate(const PipelineConfig& cfg, const std::string& out, bool resume) {
  ensure_dir(out);
  const ModelInputs mi = load_model_inputs(cfg);
  const Eigen::VectorXd Z = read_observations_csv(cfg.observations_csv, mi.grid);
  const Blocking blocking = load_blocking(join(out, kBlockingFile));
  const EmulatorFit fit = load_emulator_fit(join(out, kEmulatorFile));
  const PriorSpec priors = build_priors(cfg.priors, mi.dt.design, fit.xi_s.kappa_s, Z, mi.Y);
  const CalibrationData data = prepare_calibration(mi.grid, mi.dt.design, mi.Y, Z, blocking, fit,
                                                   parse_h_mode(cfg.h_mode), cfg.radius_km);

  const std::string csv_path = join(out, kChainCsv);
  const std::string meta_path = join(out, kChainMeta);
  if (resume && fs::exists(csv_path)) {
    PosteriorChain chain = load_chain(csv_path, meta_path);
    if (chain.q() != data.q()) throw ConfigError("persisted chain dimension != design");
    if (chain.proposal_scales.size() != data.q() + 4) {
      throw ConfigError("chain sidecar lacks proposal scales; cannot resume");
    }
    if (chain.size() >= cfg.chain_steps) {
      std::cout << "calibrate: chain already holds " << chain.size() << " samples\n";
      return;
    }
    const std::size_t q = data.q();
    const std::size_t extra = cfg.chain_steps - chain.size();
    const std::size_t old_post = chain.size() - chain.warmup;
    auto target = [&](const Eigen::VectorXd& t) {
      const double lp = log_posterior(data, priors, from_unconstrained(t, q));
      return std::isfinite(lp) ? lp + t.tail(4).sum()
                               : -std::numeric_limits<double>::infinity();
    };
    McmcConfig mc;
    mc.adapt = false;
    mc.warmup_frac = 0.0;
    mc.init_scales = chain.proposal_scales;
    Rng rng(resume_seed(chain.seed, chain.size()));
    const MhCoreResult res =
        mh_sample_core(target, to_unconstrained(chain.samples.back()), extra, mc, rng);
    for (std::size_t i = 0; i < extra; ++i) {
      const Eigen::VectorXd t = res.samples.row(static_cast<Eigen::Index>(i));
      chain.samples.push_back(from_unconstrained(t, q));
      chain.log_post.push_back(res.log_target[i] - t.tail(4).sum());
    }
    chain.acceptance = (chain.acceptance * static_cast<double>(old_post) +
                        res.acceptance * static_cast<double>(extra)) /
                       static_cast<double>(old_post + extra);
    chain.mcse.clear();
    for (std::size_t k = 0; k < q + 4; ++k) {
      chain.mcse.push_back(batch_means_mcse(chain.coordinate(k)));
    }
    save_chain(csv_path, meta_path, chain);
    std::cout << "calibrate: resumed to " << chain.size() << " samples, acceptance "
              << format_double(chain.acceptance) << "\n";
    return;
  }

  const CalibrationState init =
      feasible_start(data, priors, initial_state(priors, fit.xi_s.kappa_s));
  const PosteriorChain chain =
      mh_sample(data, priors, init, cfg.chain_steps, stage_seed(cfg.seed, kStageCalibrate));
  save_chain(csv_path, meta_path, chain);
  std::cout << "calibrate: " << chain.size() << " samples (warmup " << chain.warmup
            << "), acceptance " << format_double(chain.acceptance) << "\n";
}

void cmd_adjust(const PipelineConfig& cfg, const std::string& out) {
  ensure_dir(out);
  if (cfg.adjustment == "none") {
    throw ConfigError("config requests no adjustment; set adjustment to open-faced or curvature");
  }
  const ModelInputs mi = load_model_inputs(cfg);
  const Eigen::VectorXd Z = read_observations_csv(cfg.observations_csv, mi.grid);
  const Blocking blocking = load_blocking(join(out, kBlockingFile));
  const EmulatorFit fit = load_emulator_fit(join(out, kEmulatorFile));
  const PriorSpec priors = build_priors(cfg.priors, mi.dt.design, fit.xi_s.kappa_s, Z, mi.Y);
  const CalibrationData data = prepare_calibration(mi.grid, mi.dt.design, mi.Y, Z, blocking, fit,
                                                   parse_h_mode(cfg.h_mode), cfg.radius_km);
  const PosteriorChain chain = load_chain(join(out, kChainCsv), join(out, kChainMeta));
  if (chain.size() < 1000) {
    throw ConfigError("adjustment needs a chain of at least 1000 samples");
  }

  CalibrationState psi_hat = posterior_mode(data, priors, chain);
  DerivativeBundle db;
  try {
    db = emulator_derivatives(fit, mi.dt.design, mi.Y, psi_hat.theta_star);
  } catch (const NonDifferentiablePoint&) {
    // the mode landed exactly on a design setting; step off it
    for (std::size_t k = 0; k < psi_hat.theta_star.size(); ++k) {
      psi_hat.theta_star[k] += 1e-9 * (mi.dt.design.bounds[k].second -
                                       mi.dt.design.bounds[k].first);
    }
    db = emulator_derivatives(fit, mi.dt.design, mi.Y, psi_hat.theta_star);
  }
  const LimitModelBundle lm = build_limit_model(data.geom, psi_hat, data.xi_theta.zeta_theta,
                                                data.zeta_s, data.phi_s, db.Ystar);
  const Eigen::MatrixXd Q = compute_Q_star(lm, db.dYstar);
  if (mi.grid.n() > kDenseGuard) {
    throw OutOfDomain("sandwich variance needs the dense covariance; n exceeds the guard");
  }
  const Eigen::MatrixXd Sigma_Z = dense_limit_cov(mi.grid, data.geom, psi_hat,
                                                  data.xi_theta.zeta_theta, data.zeta_s,
                                                  data.phi_s);
  const Eigen::MatrixXd P = compute_P_star(lm, db.dYstar, Sigma_Z);
  const GodambeMatrices gm = godambe_matrices(P, Q);
  save_godambe(join(out, kGodambeFile), gm);

  const PosteriorChain adjusted =
      cfg.adjustment == "curvature"
          ? curvature_adjusted_chain(data, priors, gm, psi_hat, psi_hat, cfg.chain_steps,
                                     stage_seed(cfg.seed, kStageAdjust))
          : open_faced_adjust(chain, gm, psi_hat);
  save_chain(join(out, kAdjChainCsv), join(out, kAdjChainMeta), adjusted);
  std::cout << "adjust: " << cfg.adjustment << " adjustment over " << adjusted.size()
            << " samples, mode theta";
  for (double v : psi_hat.theta_star) std::cout << " " << format_double(v);
  std::cout << "\n";
}

void cmd_report(const PipelineConfig& cfg, const std::string& out) {
  (void)cfg;
  ensure_dir(out);
  const std::string meta_path = join(out, kChainMeta);
  const PosteriorChain chain =
      load_chain(join(out, kChainCsv), fs::exists(meta_path) ? meta_path : "");

  nlohmann::json j;
  const std::vector<ParamSummary> composite = summarize_chain(chain);
  nlohmann::json comp = nlohmann::json::array();
  for (std::size_t k = 0; k < composite.size(); ++k) {
    const ParamSummary& s = composite[k];
    comp.push_back({{"name", s.name},
                    {"mode", s.mode},
                    {"mean", s.mean},
                    {"lo", s.lo},
                    {"hi", s.hi},
                    {"mcse", s.mcse}});
    const KdeCurve curve = kde(chain.coordinate(k));
    write_curve_csv(join(out, "density_" + s.name + ".csv"), "value", curve.x, curve.density);
  }
  j["composite"] = comp;

  std::vector<ParamSummary> adjusted;
  const std::string adj_csv = join(out, kAdjChainCsv);
  if (fs::exists(adj_csv)) {
    const std::string adj_meta = join(out, kAdjChainMeta);
    const PosteriorChain adj = load_chain(adj_csv, fs::exists(adj_meta) ? adj_meta : "");
    adjusted = summarize_chain(adj);
    nlohmann::json aj = nlohmann::json::array();
    for (std::size_t k = 0; k < adjusted.size(); ++k) {
      const ParamSummary& s = adjusted[k];
      aj.push_back({{"name", s.name},
                    {"mode", s.mode},
                    {"mean", s.mean},
                    {"lo", s.lo},
                    {"hi", s.hi},
                    {"mcse", s.mcse}});
      const KdeCurve curve = kde(adj.coordinate(k));
      write_curve_csv(join(out, "density_" + s.name + "_adjusted.csv"), "value", curve.x,
                      curve.density);
    }
    j["adjusted"] = aj;
  }
  write_text(join(out, "report.json"), j.dump(2) + "\n");

  auto print_table = [](const char* title, const std::vector<ParamSummary>& rows) {
    std::cout << title << "\n"
              << std::left << std::setw(14) << "parameter" << std::right << std::setw(14) << "mode"
              << std::setw(14) << "mean" << std::setw(14) << "lo" << std::setw(14) << "hi"
              << std::setw(12) << "mcse" << "\n";
    for (const auto& s : rows) {
      std::cout << std::left << std::setw(14) << s.name << std::right << std::setw(14) << s.mode
                << std::setw(14) << s.mean << std::setw(14) << s.lo << std::setw(14) << s.hi
                << std::setw(12) << s.mcse << "\n";
    }
  };
  print_table("composite", composite);
  if (!adjusted.empty()) print_table("adjusted", adjusted);
}

void cmd_experiment(const PipelineConfig& cfg, const std::string& out) {
  ensure_dir(out);
  const ModelInputs mi = load_model_inputs(cfg);
  ExperimentConfig ec = experiment_config(cfg);
  const std::uint64_t base = stage_seed(cfg.seed, kStageExperiment);
  const auto t0 = std::chrono::steady_clock::now();

  nlohmann::json meta;
  if (!cfg.experiment.sweep_blocks.empty()) {
    ec.seed = base;
    const std::vector<SweepEntry> entries =
        block_count_sweep(mi.grid, mi.dt.design, mi.Y, ec, cfg.experiment.sweep_blocks);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) {
      arr.push_back({{"M", e.M},
                     {"interval_width", e.interval_width},
                     {"mode_bias", e.mode_bias},
                     {"report", nlohmann::json::parse(experiment_report_to_json(e.report))}});
      const std::string tag = "_M" + std::to_string(e.M);
      write_curve_csv(join(out, "density_composite" + tag + ".csv"), "theta",
                      e.report.composite_theta_density.x,
                      e.report.composite_theta_density.density);
      if (e.report.has_adjustment) {
        write_curve_csv(join(out, "density_adjusted" + tag + ".csv"), "theta",
                        e.report.adjusted_theta_density.x,
                        e.report.adjusted_theta_density.density);
      }
      if (e.report.has_oracle) {
        write_curve_csv(join(out, "density_oracle" + tag + ".csv"), "theta",
                        e.report.oracle_density.theta, e.report.oracle_density.density);
      }
      std::cout << "experiment: M=" << e.M << " width=" << format_double(e.interval_width)
                << " mode_bias=" << format_double(e.mode_bias) << "\n";
    }
    nlohmann::json j;
    j["sweep"] = arr;
    write_text(join(out, "experiment.json"), j.dump(2) + "\n");
  } else {
    const std::size_t R = cfg.experiment.replicates;
    nlohmann::json arr = nlohmann::json::array();
    std::size_t covered = 0, near = 0;
    for (std::size_t r = 0; r < R; ++r) {
      ec.seed = stage_seed(base, r);
      const ExperimentReport rep = perfect_model_experiment(mi.grid, mi.dt.design, mi.Y, ec);
      covered += rep.truth_covered ? 1 : 0;
      near += rep.mode_near_oracle ? 1 : 0;
      arr.push_back(nlohmann::json::parse(experiment_report_to_json(rep)));
      if (r == 0) {
        write_curve_csv(join(out, "density_composite.csv"), "theta",
                        rep.composite_theta_density.x, rep.composite_theta_density.density);
        if (rep.has_adjustment) {
          write_curve_csv(join(out, "density_adjusted.csv"), "theta",
                          rep.adjusted_theta_density.x, rep.adjusted_theta_density.density);
        }
        if (rep.has_oracle) {
          write_curve_csv(join(out, "density_oracle.csv"), "theta", rep.oracle_density.theta,
                          rep.oracle_density.density);
        }
      }
      meta["seconds_fit"].push_back(rep.seconds_fit);
      meta["seconds_chain"].push_back(rep.seconds_chain);
      meta["seconds_oracle"].push_back(rep.seconds_oracle);
    }
    nlohmann::json j;
    j["replicates"] = arr;
    j["replicate_count"] = R;
    j["coverage_count"] = covered;
    if (ec.run_oracle) j["mode_near_count"] = near;
    write_text(join(out, "experiment.json"), j.dump(2) + "\n");
    std::cout << "experiment: " << covered << "/" << R << " replicates covered the truth";
    if (ec.run_oracle) std::cout << ", " << near << "/" << R << " modes near the dense-likelihood mode";
    std::cout << "\n";
  }
  meta["seconds_total"] = seconds_since(t0);
  meta["written_at"] = iso_now();
  write_text(join(out, "experiment.meta.json"), meta.dump(2) + "\n");
}

void cmd_oracle(const PipelineConfig& cfg, const std::string& out) {
  ensure_dir(out);
  const ModelInputs mi = load_model_inputs(cfg);
  if (mi.dt.design.q() != 1) throw OutOfDomain("the posterior grid needs a scalar design");
  const Eigen::VectorXd Z = read_observations_csv(cfg.observations_csv, mi.grid);
  const EmulatorFit fit = load_emulator_fit(join(out, kEmulatorFile));

  Interval support{mi.dt.design.bounds[0].first, mi.dt.design.bounds[0].second};
  if (!cfg.priors.theta.empty()) {
    support = {cfg.priors.theta[0].first, cfg.priors.theta[0].second};
  }
  const DiscrepancyCovParams xi_d{cfg.experiment.zeta_d, cfg.experiment.kappa_d,
                                  1.0 / cfg.experiment.range_km};
  const OraclePosterior post =
      full_posterior_grid(mi.grid, mi.dt.design, mi.Y, Z, fit, fit.xi_s.kappa_s, xi_d, support,
                          cfg.oracle_points, cfg.radius_km);

  const auto iv = post.interval95();
  nlohmann::json j;
  j["mode"] = post.mode();
  j["mean"] = post.mean();
  j["sd"] = post.sd();
  j["lo"] = iv.first;
  j["hi"] = iv.second;
  j["points"] = post.theta.size();
  write_text(join(out, "oracle.json"), j.dump(2) + "\n");
  write_curve_csv(join(out, "density_oracle.csv"), "theta", post.theta, post.density);
  std::cout << "oracle: mode=" << format_double(post.mode()) << " mean="
            << format_double(post.mean()) << " sd=" << format_double(post.sd()) << "\n";
}

}  // namespace blockcal
