#include "blockcal/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "blockcal/errors.hpp"
#include "blockcal/linalg.hpp"

namespace blockcal {

void ModelOutputEnsemble::validate() const {
  if (Y.size() == 0) throw OutOfDomain("ensemble is empty");
  if (!Y.allFinite()) throw OutOfDomain("ensemble contains non-finite entries");
}

namespace {

Eigen::MatrixXd design_cov(const ParameterDesign& design, const ThetaCovParams& xi_theta) {
  std::size_t p = design.p();
  Eigen::MatrixXd S(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      S(i, j) = k_theta(design.thetas[i], design.thetas[j], xi_theta);
  return S;
}

// ||L_A^{-1} E L_B^{-T}||_F^2, the quadratic form of vec(E) under A (x) B
// where E is (rows of A) x (rows of B).
double kron_quad(const Chol& A, const Chol& B, const Eigen::MatrixXd& E) {
  Eigen::MatrixXd X = A.half_solve_mat(E);
  Eigen::MatrixXd W = B.half_solve_mat(X.transpose());
  return W.squaredNorm();
}

}  // namespace

double emulation_cloglik(const ParameterDesign& design, const Eigen::MatrixXd& Y,
                         const BlockGeometry& geom, const SpatialCovParams& xi_s,
                         const ThetaCovParams& xi_theta) {
  design.validate();
  const std::size_t p = design.p();
  const std::size_t M = geom.M();
  if (static_cast<std::size_t>(Y.cols()) != p)
    throw DimensionMismatch("emulation_cloglik: ensemble columns != design size");

  Chol Lt = chol_with_jitter(design_cov(design, xi_theta), "Sigma_theta");
  Eigen::MatrixXd H = mean_cov_from_geometry(geom, as_exp_cov(xi_s));
  Chol Lh = chol_with_jitter(H, "H");
  Eigen::MatrixXd Ybar = block_mean_rows(geom, Y);

  const double ln2pi = std::log(2.0 * M_PI);
  double total = -0.5 * (static_cast<double>(M * p) * ln2pi +
                         static_cast<double>(p) * Lh.logdet() +
                         static_cast<double>(M) * Lt.logdet() + kron_quad(Lh, Lt, Ybar));

  for (std::size_t i = 0; i < M; ++i) {
    std::size_t ni = geom.block_size(i);
    if (ni < 2) continue;  // singleton blocks have no conditional term
    Eigen::MatrixXd Gamma;
    Eigen::VectorXd gamma;
    internal_cov_from_geometry(geom, i, as_exp_cov(xi_s), &Gamma, &gamma);
    double Hii = H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    Eigen::MatrixXd S = Gamma - (gamma * gamma.transpose()) / Hii;
    Chol Ls = chol_with_jitter(S, "conditional block covariance");

    Eigen::MatrixXd R(ni - 1, p);
    for (std::size_t r = 0; r + 1 < ni; ++r)
      R.row(static_cast<Eigen::Index>(r)) = Y.row(static_cast<Eigen::Index>(geom.members[i][r]));
    Eigen::MatrixXd E = R - (gamma / Hii) * Ybar.row(static_cast<Eigen::Index>(i));

    total += -0.5 * (static_cast<double>((ni - 1) * p) * ln2pi +
                     static_cast<double>(p) * Ls.logdet() +
                     static_cast<double>(ni - 1) * Lt.logdet() + kron_quad(Ls, Lt, E));
  }
  return total;
}

double emulation_cloglik(const SpatialGrid& grid, const ParameterDesign& design,
                         const Eigen::MatrixXd& Y, const Blocking& blocking,
                         const SpatialCovParams& xi_s, const ThetaCovParams& xi_theta,
                         HMode mode, double radius) {
  if (static_cast<std::size_t>(Y.rows()) != grid.n())
    throw DimensionMismatch("emulation_cloglik: ensemble rows != grid size");
  BlockGeometry geom = make_block_geometry(grid, blocking, mode, radius);
  return emulation_cloglik(design, Y, geom, xi_s, xi_theta);
}

EmulatorInit default_emulator_init(const SpatialGrid& grid, const ParameterDesign& design,
                                   const Eigen::MatrixXd& Y, double radius) {
  design.validate(true);
  std::size_t n = grid.n();

  // Median pairwise geodesic distance over a deterministic strided subset.
  std::vector<double> dists;
  std::size_t stride = 1;
  while ((n / stride) * (n / stride) > 4000) ++stride;
  for (std::size_t a = 0; a < n; a += stride)
    for (std::size_t b = a + stride; b < n; b += stride)
      dists.push_back(geodesic_distance(grid.at(a), grid.at(b), radius));
  double med_s = dists.empty() ? 1.0 : [&] {
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    return dists[dists.size() / 2];
  }();
  if (med_s <= 0.0) med_s = 1.0;

  std::size_t q = design.q();
  std::vector<double> phi_theta(q);
  for (std::size_t d = 0; d < q; ++d) {
    std::vector<double> diffs;
    for (std::size_t i = 0; i < design.p(); ++i)
      for (std::size_t j = i + 1; j < design.p(); ++j)
        diffs.push_back(std::fabs(design.thetas[i][d] - design.thetas[j][d]));
    std::nth_element(diffs.begin(), diffs.begin() + diffs.size() / 2, diffs.end());
    double med = diffs[diffs.size() / 2];
    phi_theta[d] = med > 0.0 ? 1.0 / med : 1.0;
  }

  double var = (Y.array() - Y.mean()).square().sum() / static_cast<double>(Y.size() - 1);
  if (!(var > 0.0)) var = 1.0;

  EmulatorInit init;
  init.xi_s = SpatialCovParams{0.01, var, 1.0 / med_s};
  init.xi_theta = ThetaCovParams{0.01, 1.0, phi_theta};
  return init;
}

EmulatorFit fit_emulator(const SpatialGrid& grid, const ParameterDesign& design,
                         const Eigen::MatrixXd& Y, const Blocking& blocking,
                         const EmulatorInit& init, const NelderMeadConfig& opt, HMode mode,
                         double radius, bool normalize_scale) {
  design.validate(true);
  BlockGeometry geom = make_block_geometry(grid, blocking, mode, radius);
  std::size_t q = design.q();

  auto unpack = [q](const Eigen::VectorXd& t) {
    SpatialCovParams s{std::exp(t[0]), std::exp(t[1]), std::exp(t[2])};
    std::vector<double> phi(q);
    for (std::size_t d = 0; d < q; ++d) phi[d] = std::exp(t[5 + static_cast<Eigen::Index>(d)]);
    ThetaCovParams th{std::exp(t[3]), std::exp(t[4]), std::move(phi)};
    return std::make_pair(s, th);
  };

  Eigen::VectorXd t0(5 + q);
  t0[0] = std::log(init.xi_s.zeta_s);
  t0[1] = std::log(init.xi_s.kappa_s);
  t0[2] = std::log(init.xi_s.phi_s);
  t0[3] = std::log(init.xi_theta.zeta_theta);
  t0[4] = std::log(init.xi_theta.kappa_theta);
  for (std::size_t d = 0; d < q; ++d) t0[5 + static_cast<Eigen::Index>(d)] =
      std::log(init.xi_theta.phi_theta[d]);

  auto objective = [&](const Eigen::VectorXd& t) {
    auto [s, th] = unpack(t);
    try {
      return -emulation_cloglik(design, Y, geom, s, th);
    } catch (const NotPositiveDefinite&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  NelderMeadResult res = nelder_mead(objective, t0, opt);
  auto [s, th] = unpack(res.x);
  if (normalize_scale) {
    double c = th.kappa_theta;
    s.kappa_s *= c;
    th.zeta_theta /= c;
    th.kappa_theta = 1.0;
  }
  EmulatorFit fit;
  fit.xi_s = s;
  fit.xi_theta = th;
  fit.converged = res.converged;
  fit.evals = res.evals;
  fit.cloglik = emulation_cloglik(design, Y, geom, s, th);
  return fit;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> emulator_predict(const EmulatorFit& fit,
                                                             const ParameterDesign& design,
                                                             const Eigen::MatrixXd& Y,
                                                             const std::vector<double>& theta) {
  ThetaCrossCov tc = theta_cross_cov(theta, design, fit.xi_theta);
  Chol Lt = chol_with_jitter(tc.Sigma_theta, "Sigma_theta");
  Eigen::VectorXd wT = Lt.solve(tc.Sigma_star_theta.transpose());
  Eigen::VectorXd mean = Y * wT;
  double s2_theta = tc.Sigma_star - tc.Sigma_star_theta.dot(wT);
  double spatial_marginal = fit.xi_s.kappa_s * (1.0 + fit.xi_s.zeta_s);
  Eigen::VectorXd var =
      Eigen::VectorXd::Constant(Y.rows(), std::max(0.0, s2_theta) * spatial_marginal);
  return {mean, var};
}

FlopCost flop_cost(std::size_t n, const std::vector<std::size_t>& block_sizes,
                   const std::vector<std::size_t>& sub_sizes) {
  std::size_t total = 0;
  for (std::size_t s : block_sizes) total += s;
  if (total != n) throw DimensionMismatch("flop_cost: block sizes do not sum to n");
  if (sub_sizes.size() != block_sizes.size())
    throw DimensionMismatch("flop_cost: need one subsample size per block");
  double nd = static_cast<double>(n);
  double M = static_cast<double>(block_sizes.size());
  FlopCost c{};
  c.full = nd * nd * nd / 3.0;
  c.H_exact = 0.0;
  c.H_subsampled = 0.0;
  double cond = 0.0;
  for (std::size_t i = 0; i < block_sizes.size(); ++i) {
    double ni = static_cast<double>(block_sizes[i]);
    cond += (ni - 1.0) * (ni - 1.0) * (ni - 1.0) / 3.0;
    for (std::size_t j = i; j < block_sizes.size(); ++j) {
      c.H_exact += ni * static_cast<double>(block_sizes[j]);
      c.H_subsampled += static_cast<double>(sub_sizes[i]) * static_cast<double>(sub_sizes[j]);
    }
  }
  c.blocked = c.H_exact + M * M * M / 3.0 + cond;
  return c;
}

std::string emulator_fit_to_json(const EmulatorFit& fit) {
  nlohmann::json j;
  j["xi_s"] = {{"zeta_s", fit.xi_s.zeta_s},
               {"kappa_s", fit.xi_s.kappa_s},
               {"phi_s", fit.xi_s.phi_s}};
  j["xi_theta"] = {{"zeta_theta", fit.xi_theta.zeta_theta},
                   {"kappa_theta", fit.xi_theta.kappa_theta},
                   {"phi_theta", fit.xi_theta.phi_theta}};
  j["converged"] = fit.converged;
  j["cloglik"] = fit.cloglik;
  j["evals"] = fit.evals;
  return j.dump(2) + "\n";
}

EmulatorFit emulator_fit_from_json(const std::string& text) {
  EmulatorFit fit;
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    fit.xi_s.zeta_s = j.at("xi_s").at("zeta_s").get<double>();
    fit.xi_s.kappa_s = j.at("xi_s").at("kappa_s").get<double>();
    fit.xi_s.phi_s = j.at("xi_s").at("phi_s").get<double>();
    fit.xi_theta.zeta_theta = j.at("xi_theta").at("zeta_theta").get<double>();
    fit.xi_theta.kappa_theta = j.at("xi_theta").at("kappa_theta").get<double>();
    fit.xi_theta.phi_theta = j.at("xi_theta").at("phi_theta").get<std::vector<double>>();
    fit.converged = j.at("converged").get<bool>();
    fit.cloglik = j.at("cloglik").get<double>();
    fit.evals = j.value("evals", 0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("emulator fit json: ") + e.what());
  }
  return fit;
}

void save_emulator_fit(const std::string& path, const EmulatorFit& fit) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << emulator_fit_to_json(fit);
}

EmulatorFit load_emulator_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return emulator_fit_from_json(ss.str());
}

}  // namespace blockcal
