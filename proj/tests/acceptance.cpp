// Release gate: nine end-to-end checks of the calibration stack, each printed
// as a single pass/fail line with its runtime and budget. Exit status is the
// number of failures. An optional argument restricts the run to one check.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "blockcal/calibrator.hpp"
#include "blockcal/emulator.hpp"
#include "blockcal/godambe.hpp"
#include "blockcal/oracle.hpp"
#include "blockcal/pipeline.hpp"
#include "blockcal/stats.hpp"
#include "test_support.hpp"

using namespace blockcal;
namespace fs = std::filesystem;

namespace {

// --- pinned tolerances and sizes ---
constexpr double kOracleEquivTol = 1e-8;        // composite vs dense likelihood differences
constexpr double kFullFlops = 6.86e10;          // published dense cost at n = 5903
constexpr double kFullFlopsSlack = 0.005e10;    // 3 significant figures
constexpr double kBlockedFlops = 5.92e7;        // published blocked cost, 50 blocks
constexpr double kBlockedFactor = 2.0;
constexpr double kScoreRelTol = 1e-5;           // analytic vs central-difference scores
constexpr double kSandwichMcRelTol = 0.25;      // empirical estimator variance vs G^{-1}
constexpr double kModeShiftFrac = 0.05;         // adjusted-mode drift, in posterior SDs
constexpr double kAdjCovRelTol = 0.10;          // adjusted covariance vs G^{-1}
constexpr double kCurvatureResidual = 1e-8;     // D^T Q D - Q P^{-1} Q
constexpr int kCoverageNeeded = 17;             // of 20 replicates
constexpr int kModeNearNeeded = 18;
constexpr double kWidthSpread = 1.5;            // widest / narrowest across block counts

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", x);
  return buf;
}

// ---------- 1: single-block composite equals the dense likelihood ----------

Outcome criterion1() {
  double worst = 0.0;
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 5 + rng.uniform_int(26);  // <= 30
    const std::size_t p = 1 + rng.uniform_int(3);   // <= 3
    auto grid = testsup::random_grid(n, 500 + static_cast<std::uint64_t>(t));
    std::vector<double> th;
    for (std::size_t i = 0; i < p; ++i) th.push_back(0.5 + 0.8 * double(i));
    auto design = testsup::line_design(th, 0.0, 0.5 + 0.8 * double(p));
    EmulatorFit fit;
    fit.xi_s = {0.05, 2.0, 1.0 / 450.0};
    fit.xi_theta = {0.06, 1.0, {0.7}};
    Eigen::MatrixXd Y = sample_ensemble(grid, design, fit.xi_s, fit.xi_theta,
                                        900 + static_cast<std::uint64_t>(t));
    Eigen::VectorXd Z = Y.col(0) + sample_gp_field(grid, ExpCov{0.01, 0.9, 1.0 / 650.0},
                                                   1300 + static_cast<std::uint64_t>(t));
    Blocking b = random_tessellation(grid, 1, 1700 + static_cast<std::uint64_t>(t));
    CalibrationData data = prepare_calibration(grid, design, Y, Z, b, fit, HMode::exact);

    CalibrationState a, c;
    a.theta_star = {rng.uniform(0.4, 0.5 + 0.7 * double(p))};
    a.kappa_s = rng.uniform(1.0, 3.0);
    a.zeta_d = rng.uniform(0.005, 0.02);
    a.kappa_d = rng.uniform(0.4, 1.6);
    a.phi_d = 1.0 / rng.uniform(300.0, 900.0);
    c = a;
    c.theta_star = {rng.uniform(0.4, 0.5 + 0.7 * double(p))};
    c.kappa_d = rng.uniform(0.4, 1.6);
    c.phi_d = 1.0 / rng.uniform(300.0, 900.0);

    double dc = calib_cloglik(data, a) - calib_cloglik(data, c);
    double df = full_calib_loglik(a, Z, Y, grid, design, fit) -
                full_calib_loglik(c, Z, Y, grid, design, fit);
    worst = std::max(worst, std::abs(dc - df));
  }
  return {worst < kOracleEquivTol,
          "worst likelihood-difference gap " + fmt(worst) + " over 20 single-block instances "
          "(tolerance " + fmt(kOracleEquivTol) + ")"};
}

// ---------- 2: flop model reproduces the published figures ----------

Outcome criterion2() {
  FlopCost whole = flop_cost(5903, {5903}, {10});
  bool full_ok = std::abs(whole.full - kFullFlops) <= kFullFlopsSlack;

  std::vector<std::size_t> sizes(50, 118);
  for (int k = 0; k < 3; ++k) sizes[static_cast<std::size_t>(k)] = 119;  // 50 x 118 + 3
  std::vector<std::size_t> subs(50, 10);
  FlopCost blocked = flop_cost(5903, sizes, subs);
  bool blocked_ok = blocked.blocked < kBlockedFactor * kBlockedFlops &&
                    blocked.blocked > kBlockedFlops / kBlockedFactor;
  return {full_ok && blocked_ok,
          "dense " + fmt(whole.full) + " vs " + fmt(kFullFlops) + ", blocked " +
              fmt(blocked.blocked) + " vs " + fmt(kBlockedFlops) + " within x" +
              fmt(kBlockedFactor)};
}

// ---------- 3: analytic scores match finite differences ----------

Outcome criterion3() {
  auto grid = testsup::random_grid(60, 31);
  Blocking b = random_tessellation(grid, 4, 37, /*m_max=*/1000);
  BlockGeometry geom = make_block_geometry(grid, b, HMode::exact);
  auto design = testsup::line_design({0.6, 1.4, 2.2, 3.0}, 0.0, 3.6);
  EmulatorFit fit;
  fit.xi_s = {0.03, 2.0, 1.0 / 400.0};
  fit.xi_theta = {0.04, 1.0, {0.7}};
  Eigen::MatrixXd Y = sample_ensemble(grid, design, fit.xi_s, fit.xi_theta, 41);

  Rng rng(43);
  Eigen::VectorXd Z(60);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    CalibrationState psi;
    double th;
    do {
      th = rng.uniform(0.8, 2.8);
    } while (std::abs(th - 1.4) < 1e-3 || std::abs(th - 2.2) < 1e-3);
    psi.theta_star = {th};
    psi.kappa_s = rng.uniform(1.0, 3.0);
    psi.zeta_d = rng.uniform(0.005, 0.02);
    psi.kappa_d = rng.uniform(0.4, 1.8);
    psi.phi_d = 1.0 / rng.uniform(280.0, 850.0);

    DerivativeBundle der = emulator_derivatives(fit, design, Y, psi.theta_star);
    for (Eigen::Index k = 0; k < 60; ++k) Z(k) = der.Ystar(k) + 0.8 * rng.normal();
    LimitModelBundle lm = build_limit_model(geom, psi, fit.xi_theta.zeta_theta,
                                            fit.xi_s.zeta_s, fit.xi_s.phi_s, der.Ystar);

    auto rel = [](double a, double f) {
      return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-12});
    };

    // model-input score against recomputing the emulated field at theta +- h
    const double h = 2e-5;
    auto cl_at_theta = [&](double x) {
      DerivativeBundle d = emulator_derivatives(fit, design, Y, {x});
      LimitModelBundle lb = build_limit_model(geom, psi, fit.xi_theta.zeta_theta,
                                              fit.xi_s.zeta_s, fit.xi_s.phi_s, d.Ystar);
      return limit_cloglik(lb, Z);
    };
    double sc = score_theta(lm, der.dYstar, Z)(0);
    double fd = (cl_at_theta(th + h) - cl_at_theta(th - h)) / (2.0 * h);
    worst = std::max(worst, rel(sc, fd));

    // covariance-parameter scores against rebuilding the model at psi +- h
    Eigen::VectorXd sx = score_xi(lm, Z).total;
    for (std::size_t k = 0; k < 4; ++k) {
      CalibrationState up = psi, dn = psi;
      const std::size_t idx = 1 + k;  // kappa_s, zeta_d, kappa_d, phi_d
      const double base = psi_coordinate(psi, idx);
      const double hx = base * 1e-6;
      set_psi_coordinate(up, idx, base + hx);
      set_psi_coordinate(dn, idx, base - hx);
      LimitModelBundle bu = build_limit_model(geom, up, fit.xi_theta.zeta_theta,
                                              fit.xi_s.zeta_s, fit.xi_s.phi_s, der.Ystar);
      LimitModelBundle bd = build_limit_model(geom, dn, fit.xi_theta.zeta_theta,
                                              fit.xi_s.zeta_s, fit.xi_s.phi_s, der.Ystar);
      double fdk = (limit_cloglik(bu, Z) - limit_cloglik(bd, Z)) / (2.0 * hx);
      worst = std::max(worst, rel(sx(static_cast<Eigen::Index>(k)), fdk));
    }
  }
  return {worst < kScoreRelTol, "worst relative score error " + fmt(worst) + " at 10 points "
                                "(tolerance " + fmt(kScoreRelTol) + ")"};
}

// shared scalar instance for 4 and 5: measurement-error model Z = theta g + e
struct SandwichInstance {
  SpatialGrid grid;
  BlockGeometry geom;
  CalibrationState psi;
  double zeta_theta = 0.2, zeta_s = 0.03, phi_s = 1.0 / 400.0;
  double theta0 = 1.3;
  Eigen::VectorXd g;
  LimitModelBundle lm;
  Eigen::MatrixXd Sigma_Z;
  double P = 0.0, Q = 0.0;

  SandwichInstance() : grid(testsup::random_grid(100, 53)) {
    Blocking b = random_tessellation(grid, 5, 59, /*m_max=*/1000);
    geom = make_block_geometry(grid, b, HMode::exact);
    psi.theta_star = {theta0};
    psi.kappa_s = 1.5;
    psi.zeta_d = 0.01;
    psi.kappa_d = 0.8;
    psi.phi_d = 1.0 / 600.0;
    g = sample_gp_field(grid, ExpCov{0.0, 1.0, 1.0 / 900.0}, 61);
    lm = build_limit_model(geom, psi, zeta_theta, zeta_s, phi_s, theta0 * g);
    Sigma_Z = dense_limit_cov(grid, geom, psi, zeta_theta, zeta_s, phi_s);
    P = compute_P_star(lm, g, Sigma_Z)(0, 0);
    Q = compute_Q_star(lm, g)(0, 0);
  }

  Eigen::VectorXd to_grid(const Eigen::VectorXd& block_order) const {
    Eigen::VectorXd out(block_order.size());
    Eigen::Index k = 0;
    for (const auto& mem : geom.members)
      for (std::size_t pos : mem) out(static_cast<Eigen::Index>(pos)) = block_order(k++);
    return out;
  }
};

// ---------- 4: sampling distribution of the point estimate ----------

Outcome criterion4() {
  SandwichInstance inst;
  Eigen::LLT<Eigen::MatrixXd> llt(inst.Sigma_Z);
  if (llt.info() != Eigen::Success) return {false, "data covariance not positive definite"};
  Eigen::MatrixXd L = llt.matrixL();

  // the composite log likelihood is an exact quadratic in theta here, so the
  // maximizer is one Newton step from the truth
  Rng rng(67);
  const int reps = 500;
  std::vector<double> est(static_cast<std::size_t>(reps));
  Eigen::VectorXd eps(100);
  for (int r = 0; r < reps; ++r) {
    for (Eigen::Index k = 0; k < 100; ++k) eps(k) = rng.normal();
    Eigen::VectorXd Z = inst.theta0 * inst.g + inst.to_grid(L * eps);
    double s = score_theta(inst.lm, inst.g, Z)(0);
    est[static_cast<std::size_t>(r)] = inst.theta0 + s / inst.Q;
  }
  double m = mean(est);
  double var = 0.0;
  for (double v : est) var += (v - m) * (v - m);
  var /= double(reps - 1);
  const double ginv = inst.P / (inst.Q * inst.Q);
  const double rel = std::abs(var - ginv) / ginv;
  return {rel < kSandwichMcRelTol,
          "estimator variance " + fmt(var) + " vs sandwich " + fmt(ginv) + ", relative gap " +
              fmt(rel) + " over 500 replicates (tolerance " + fmt(kSandwichMcRelTol) + ")"};
}

// ---------- 5: post-hoc adjustment hits the sandwich covariance ----------

Outcome criterion5() {
  SandwichInstance inst;
  Eigen::MatrixXd P(1, 1), Q(1, 1);
  P << inst.P;
  Q << inst.Q;
  GodambeMatrices gm = godambe_matrices(P, Q);

  // synthetic composite posterior: draws with covariance Q^{-1} around the mode
  const double hat = inst.theta0;
  const double sd_raw = 1.0 / std::sqrt(inst.Q);
  Rng rng(71);
  PosteriorChain chain;
  chain.warmup = 0;
  const int N = 100000;
  for (int t = 0; t < N; ++t) {
    CalibrationState st = inst.psi;
    st.theta_star = {hat + sd_raw * rng.normal()};
    chain.samples.push_back(st);
    chain.log_post.push_back(0.0);
  }
  std::vector<double> raw = chain.coordinate(0);
  double vr = sample_sd(raw);
  if (std::abs(vr * vr - 1.0 / inst.Q) > 0.10 / inst.Q)
    return {false, "raw chain variance misses the curvature inverse"};

  CalibrationState psi_hat = inst.psi;
  psi_hat.theta_star = {hat};
  PosteriorChain adj = open_faced_adjust(chain, gm, psi_hat);
  std::vector<double> av = adj.coordinate(0);
  const double ginv = inst.P / (inst.Q * inst.Q);
  double va = sample_sd(av);
  const double cov_gap = std::abs(va * va - ginv) / ginv;

  const double mode_raw = kde(raw).mode();
  const double mode_adj = kde(av).mode();
  const double shift = std::abs(mode_adj - mode_raw) / vr;

  // curvature reparameterization identity, scalar and a 3 x 3 stress case
  double resid = std::abs(gm.D(0, 0) * inst.Q * gm.D(0, 0) - gm.G(0, 0));
  Eigen::MatrixXd P3 = testsup::random_spd(3, 73);
  Eigen::MatrixXd Q3 = testsup::random_spd(3, 79);
  GodambeMatrices g3 = godambe_matrices(P3, Q3);
  resid = std::max(resid, (g3.D.transpose() * Q3 * g3.D - g3.G).norm());

  bool pass = cov_gap < kAdjCovRelTol && shift < kModeShiftFrac && resid < kCurvatureResidual;
  return {pass, "adjusted-vs-sandwich covariance gap " + fmt(cov_gap) + " (tol " +
                    fmt(kAdjCovRelTol) + "), mode shift " + fmt(shift) + " SD (tol " +
                    fmt(kModeShiftFrac) + "), curvature identity residual " + fmt(resid) +
                    " (tol " + fmt(kCurvatureResidual) + ")"};
}

// ---------- bundled synthetic data loader for 6, 7, 8 ----------

struct BundledData {
  SpatialGrid grid;
  DesignTable dt;
  Eigen::MatrixXd Y;

  BundledData() : grid(read_grid_csv(std::string(BLOCKCAL_DATA_DIR) + "/grid.csv")) {
    dt = read_design_csv(std::string(BLOCKCAL_DATA_DIR) + "/design.csv");
    Y = read_ensemble_csv(std::string(BLOCKCAL_DATA_DIR) + "/ensemble.csv", grid, dt);
  }
};

ExperimentConfig bundled_experiment_config() {
  ExperimentConfig cfg;
  cfg.truth_index = 3;  // the 2.153 run
  cfg.xi_d_true = {0.01, 160000.0, 1.0 / 690.0};
  cfg.M = 20;
  cfg.m_max = 10;
  cfg.chain_steps = 3000;
  cfg.oracle_points = 161;
  cfg.mode = HMode::subsample;
  cfg.phi_d_prior = {1.0 / 20000.0, 1.0 / 100.0};
  return cfg;
}

// ---------- 6: synthetic-truth coverage at full scale ----------

Outcome criterion6() {
  BundledData data;
  int covered = 0, near = 0;
  for (int r = 1; r <= 20; ++r) {
    ExperimentConfig cfg = bundled_experiment_config();
    cfg.seed = static_cast<std::uint64_t>(r);
    cfg.run_oracle = true;
    ExperimentReport rep = perfect_model_experiment(data.grid, data.dt.design, data.Y, cfg);
    if (rep.truth_covered) ++covered;
    if (rep.mode_near_oracle) ++near;
  }
  bool pass = covered >= kCoverageNeeded && near >= kModeNearNeeded;
  return {pass, "truth covered in " + std::to_string(covered) + "/20 (need >= " +
                    std::to_string(kCoverageNeeded) + "), mode within 1 oracle SD in " +
                    std::to_string(near) + "/20 (need >= " + std::to_string(kModeNearNeeded) + ")"};
}

// ---------- 7: interval width grows with discrepancy variance ----------

Outcome criterion7() {
  BundledData data;
  const std::vector<double> kappas = {40000.0, 90000.0, 160000.0};
  std::vector<double> mean_width(kappas.size(), 0.0);
  const int reps = 10;
  for (int r = 1; r <= reps; ++r) {
    // one unit-variance draw per replicate, scaled per kappa: identical noise
    // shape across the sweep so widths are directly comparable
    Eigen::VectorXd unit = sample_gp_field(data.grid, ExpCov{0.01, 1.0, 1.0 / 690.0},
                                           9000 + static_cast<std::uint64_t>(r));
    for (std::size_t k = 0; k < kappas.size(); ++k) {
      Eigen::VectorXd delta = std::sqrt(kappas[k]) * unit;
      ExperimentConfig cfg = bundled_experiment_config();
      cfg.seed = static_cast<std::uint64_t>(r);
      cfg.run_oracle = false;
      cfg.xi_d_true = {0.01, kappas[k], 1.0 / 690.0};
      cfg.fixed_discrepancy = &delta;
      ExperimentReport rep = perfect_model_experiment(data.grid, data.dt.design, data.Y, cfg);
      mean_width[k] += (rep.composite[0].hi - rep.composite[0].lo) / double(reps);
    }
  }
  bool mono = mean_width[0] <= mean_width[1] && mean_width[1] <= mean_width[2];
  return {mono, "mean interval widths " + fmt(mean_width[0]) + ", " + fmt(mean_width[1]) + ", " +
                    fmt(mean_width[2]) + " over 10 replicates (must be non-decreasing)"};
}

// ---------- 8: block count barely moves the interval ----------

Outcome criterion8() {
  BundledData data;
  ExperimentConfig cfg = bundled_experiment_config();
  cfg.seed = 1;
  cfg.run_oracle = false;
  auto entries = block_count_sweep(data.grid, data.dt.design, data.Y, cfg, {10, 30, 50});
  double lo = entries[0].interval_width, hi = lo;
  std::string widths;
  for (const auto& e : entries) {
    lo = std::min(lo, e.interval_width);
    hi = std::max(hi, e.interval_width);
    widths += (widths.empty() ? "" : ", ") + fmt(e.interval_width);
  }
  bool pass = hi <= kWidthSpread * lo;
  return {pass, "interval widths " + widths + " across 10/30/50 blocks, spread x" +
                    fmt(hi / lo) + " (allowed x" + fmt(kWidthSpread) + ")"};
}

// ---------- 9: the command-line pipeline is deterministic end to end ----------

Outcome criterion9() {
  const std::string data_dir = BLOCKCAL_DATA_DIR;
  const std::string cli = BLOCKCAL_CLI_PATH;
  fs::path work = fs::temp_directory_path() / "blockcal_acceptance_cli";
  fs::remove_all(work);
  fs::create_directories(work);

  // point the bundled configuration at absolute input paths
  nlohmann::json j;
  {
    std::ifstream in(data_dir + "/pipeline.json");
    in >> j;
  }
  j["grid"] = data_dir + "/grid.csv";
  j["design"] = data_dir + "/design.csv";
  j["ensemble"] = data_dir + "/ensemble.csv";
  j["observations"] = data_dir + "/observations.csv";
  const fs::path cfg_path = work / "pipeline.json";
  std::ofstream(cfg_path) << j.dump(2) << "\n";

  const std::vector<std::string> stages = {"tessellate", "emulate", "calibrate", "adjust",
                                           "report",     "oracle",  "experiment"};
  for (const char* run : {"runA", "runB"}) {
    fs::path out = work / run;
    for (const auto& stage : stages) {
      std::string cmd = cli + " " + stage + " --config " + cfg_path.string() + " --out " +
                        out.string() + " >> " + (work / (std::string(run) + ".log")).string() +
                        " 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        return {false, stage + " exited nonzero on " + run + " (see " +
                           (work / (std::string(run) + ".log")).string() + ")"};
      }
    }
  }

  // every artifact except timing sidecars must be byte-identical
  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(work / "runA")) {
    const std::string name = entry.path().filename().string();
    if (ends_with(name, ".meta.json")) continue;
    const fs::path other = work / "runB" / name;
    if (!fs::exists(other)) return {false, "second run is missing artifact " + name};
    if (slurp(entry.path()) != slurp(other)) return {false, "artifact differs across runs: " + name};
    ++compared;
  }
  if (compared < 8) return {false, "pipeline produced only " + std::to_string(compared) +
                                       " comparable artifacts"};
  fs::remove_all(work);
  return {true, std::to_string(compared) + " artifacts byte-identical across two seeded runs"};
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    int id;
    double budget_s;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> entries = {
      {1, 60.0, criterion1},   {2, 10.0, criterion2},   {3, 60.0, criterion3},
      {4, 600.0, criterion4},  {5, 300.0, criterion5},  {6, 1800.0, criterion6},
      {7, 1200.0, criterion7}, {8, 1200.0, criterion8}, {9, 600.0, criterion9},
  };

  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);

  int failures = 0, ran = 0;
  for (const auto& e : entries) {
    if (only != 0 && e.id != only) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = e.fn();
    } catch (const std::exception& ex) {
      o = {false, std::string("threw: ") + ex.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= e.budget_s;
    const bool pass = o.pass && in_budget;
    std::printf("[%s] criterion %d: %s%s (%.1fs, budget %.0fs)\n", pass ? "PASS" : "FAIL", e.id,
                o.detail.c_str(), in_budget ? "" : " [over budget]", secs, e.budget_s);
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  if (only == 0) std::printf("%d of %d criteria passed\n", ran - failures, ran);
  return failures;
}
