#include "blockcal/calibrator.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "blockcal/csv.hpp"
#include "blockcal/errors.hpp"
#include "blockcal/stats.hpp"

namespace blockcal {

void ObservationField::validate(std::size_t n) const {
  if (static_cast<std::size_t>(Z.size()) != n)
    throw DimensionMismatch("observation vector length != grid size");
  if (!Z.allFinite()) throw OutOfDomain("observations contain non-finite entries");
}

std::vector<std::string> psi_coordinate_names(std::size_t q) {
  std::vector<std::string> names;
  for (std::size_t d = 0; d < q; ++d) names.push_back("theta_star_" + std::to_string(d + 1));
  names.insert(names.end(), {"kappa_s", "zeta_d", "kappa_d", "phi_d"});
  return names;
}

double psi_coordinate(const CalibrationState& psi, std::size_t k) {
  std::size_t q = psi.q();
  if (k < q) return psi.theta_star[k];
  switch (k - q) {
    case 0: return psi.kappa_s;
    case 1: return psi.zeta_d;
    case 2: return psi.kappa_d;
    case 3: return psi.phi_d;
  }
  throw OutOfDomain("psi coordinate index out of range");
}

void set_psi_coordinate(CalibrationState& psi, std::size_t k, double value) {
  std::size_t q = psi.q();
  if (k < q) {
    psi.theta_star[k] = value;
    return;
  }
  switch (k - q) {
    case 0: psi.kappa_s = value; return;
    case 1: psi.zeta_d = value; return;
    case 2: psi.kappa_d = value; return;
    case 3: psi.phi_d = value; return;
  }
  throw OutOfDomain("psi coordinate index out of range");
}

Eigen::VectorXd to_unconstrained(const CalibrationState& psi) {
  std::size_t q = psi.q();
  Eigen::VectorXd t(q + 4);
  for (std::size_t d = 0; d < q; ++d) t[static_cast<Eigen::Index>(d)] = psi.theta_star[d];
  t[static_cast<Eigen::Index>(q)] = std::log(psi.kappa_s);
  t[static_cast<Eigen::Index>(q) + 1] = std::log(psi.zeta_d);
  t[static_cast<Eigen::Index>(q) + 2] = std::log(psi.kappa_d);
  t[static_cast<Eigen::Index>(q) + 3] = std::log(psi.phi_d);
  return t;
}

CalibrationState from_unconstrained(const Eigen::VectorXd& t, std::size_t q) {
  if (static_cast<std::size_t>(t.size()) != q + 4)
    throw DimensionMismatch("unconstrained vector has wrong length");
  CalibrationState psi;
  psi.theta_star.resize(q);
  for (std::size_t d = 0; d < q; ++d) psi.theta_star[d] = t[static_cast<Eigen::Index>(d)];
  psi.kappa_s = std::exp(t[static_cast<Eigen::Index>(q)]);
  psi.zeta_d = std::exp(t[static_cast<Eigen::Index>(q) + 1]);
  psi.kappa_d = std::exp(t[static_cast<Eigen::Index>(q) + 2]);
  psi.phi_d = std::exp(t[static_cast<Eigen::Index>(q) + 3]);
  return psi;
}

double ig_logpdf(double x, const IgParams& p) {
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  return p.shape * std::log(p.scale) - std::lgamma(p.shape) - (p.shape + 1.0) * std::log(x) -
         p.scale / x;
}

PriorSpec default_priors(const ParameterDesign& design, double kappa_s_hat,
                         double kappa_d_guess) {
  if (kappa_s_hat <= 0.0 || kappa_d_guess <= 0.0)
    throw OutOfDomain("prior location guesses must be positive");
  PriorSpec pr;
  for (std::size_t d = 0; d < design.q(); ++d) {
    double lo = design.bounds[d].first, hi = design.bounds[d].second;
    pr.theta_star.push_back({lo, hi});
  }
  pr.zeta_d = {2.0, 0.01 * 3.0};
  pr.kappa_d = {10000.0, kappa_d_guess * 10001.0};
  pr.kappa_s = {20.0, kappa_s_hat * 21.0};
  pr.phi_d = {1e-6, 1.0 / 800.0};
  return pr;
}

const DiscrepancyShapes& CalibrationData::shapes(double phi_d) const {
  for (const auto& slot : cache_)
    if (slot.phi_d == phi_d) return slot;
  DiscrepancyShapes& slot = cache_[static_cast<std::size_t>(cache_next_)];
  cache_next_ = 1 - cache_next_;
  ExpCov unit{0.0, 1.0, phi_d};
  slot.phi_d = phi_d;
  slot.omega_exp = mean_cov_from_geometry(geom, unit);
  slot.lambda_mat.resize(M());
  slot.lambda_vec.resize(M());
  for (std::size_t i = 0; i < M(); ++i)
    internal_cov_from_geometry(geom, i, unit, &slot.lambda_mat[i], &slot.lambda_vec[i]);
  return slot;
}

CalibrationData prepare_calibration(const SpatialGrid& grid, const ParameterDesign& design,
                                    const Eigen::MatrixXd& Y, const Eigen::VectorXd& Z,
                                    const Blocking& blocking, const EmulatorFit& fit,
                                    HMode mode, double radius) {
  design.validate();
  if (static_cast<std::size_t>(Y.rows()) != grid.n())
    throw DimensionMismatch("ensemble rows != grid size");
  if (static_cast<std::size_t>(Y.cols()) != design.p())
    throw DimensionMismatch("ensemble columns != design size");
  ObservationField{Z}.validate(grid.n());

  CalibrationData data;
  data.geom = make_block_geometry(grid, blocking, mode, radius);
  data.design = design;
  data.xi_theta = fit.xi_theta;
  data.zeta_s = fit.xi_s.zeta_s;
  data.phi_s = fit.xi_s.phi_s;

  data.Ybar = block_mean_rows(data.geom, Y);
  data.Zbar = block_mean_vec(data.geom, Z);
  std::size_t M = data.geom.M();
  data.R.resize(M);
  data.Zr.resize(M);
  for (std::size_t i = 0; i < M; ++i) {
    std::size_t ni = data.geom.block_size(i);
    data.R[i].resize(ni - 1, static_cast<Eigen::Index>(design.p()));
    data.Zr[i].resize(ni - 1);
    for (std::size_t r = 0; r + 1 < ni; ++r) {
      auto pos = static_cast<Eigen::Index>(data.geom.members[i][r]);
      data.R[i].row(static_cast<Eigen::Index>(r)) = Y.row(pos);
      data.Zr[i][static_cast<Eigen::Index>(r)] = Z[pos];
    }
  }

  ExpCov unit_s{fit.xi_s.zeta_s, 1.0, fit.xi_s.phi_s};
  data.H1 = mean_cov_from_geometry(data.geom, unit_s);
  data.Gamma1.resize(M);
  data.gamma1.resize(M);
  for (std::size_t i = 0; i < M; ++i)
    internal_cov_from_geometry(data.geom, i, unit_s, &data.Gamma1[i], &data.gamma1[i]);

  data.Sigma_theta.resize(static_cast<Eigen::Index>(design.p()),
                          static_cast<Eigen::Index>(design.p()));
  for (std::size_t a = 0; a < design.p(); ++a)
    for (std::size_t b = 0; b < design.p(); ++b)
      data.Sigma_theta(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          k_theta(design.thetas[a], design.thetas[b], fit.xi_theta);
  data.Sigma_theta_chol = chol_with_jitter(data.Sigma_theta, "Sigma_theta");

  data.inv_mode_size.resize(static_cast<Eigen::Index>(M));
  for (std::size_t i = 0; i < M; ++i)
    data.inv_mode_size[static_cast<Eigen::Index>(i)] =
        1.0 / static_cast<double>(data.geom.mode_size(i));
  return data;
}

double calib_cloglik(const CalibrationData& data, const CalibrationState& psi) {
  if (psi.theta_star.size() != data.q())
    throw DimensionMismatch("theta* dimension != design dimension");
  if (psi.kappa_s <= 0.0 || psi.zeta_d <= 0.0 || psi.kappa_d <= 0.0 || psi.phi_d <= 0.0)
    throw OutOfDomain("calibration state requires strictly positive scale parameters");

  const std::size_t p = data.p();
  const std::size_t M = data.M();

  Eigen::VectorXd cross(static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j)
    cross[static_cast<Eigen::Index>(j)] =
        k_theta(psi.theta_star, data.design.thetas[j], data.xi_theta);
  Eigen::VectorXd wT = data.Sigma_theta_chol.solve(cross);
  double sigma_star = data.xi_theta.zeta_theta + data.xi_theta.kappa_theta;
  double s2 = std::max(0.0, sigma_star - cross.dot(wT));
  double emu_scale = s2 * psi.kappa_s;

  const DiscrepancyShapes& ds = data.shapes(psi.phi_d);
  Eigen::MatrixXd Sbar = emu_scale * data.H1 + psi.kappa_d * ds.omega_exp;
  Sbar.diagonal() += (psi.kappa_d * psi.zeta_d) * data.inv_mode_size;
  Chol Lbar = chol_with_jitter(Sbar, "block-mean covariance");
  Eigen::VectorXd mu_bar = data.Ybar * wT;
  double total = mvn_logpdf(data.Zbar, mu_bar, Lbar);

  for (std::size_t i = 0; i < M; ++i) {
    std::size_t ni = data.geom.block_size(i);
    if (ni < 2) continue;
    auto ii = static_cast<Eigen::Index>(i);
    Eigen::VectorXd u = emu_scale * data.gamma1[i] + psi.kappa_d * ds.lambda_vec[i];
    u.array() += psi.kappa_d * psi.zeta_d / static_cast<double>(ni);
    double sbar_ii = Sbar(ii, ii);
    Eigen::VectorXd mu = data.R[i] * wT + u * ((data.Zbar[ii] - mu_bar[ii]) / sbar_ii);
    Eigen::MatrixXd Sc =
        emu_scale * data.Gamma1[i] + psi.kappa_d * ds.lambda_mat[i] - (u * u.transpose()) / sbar_ii;
    Sc.diagonal().array() += psi.kappa_d * psi.zeta_d;
    total += mvn_logpdf(data.Zr[i], mu, chol_with_jitter(Sc, "conditional block covariance"));
  }
  return total;
}

double calib_cloglik(const CalibrationState& psi, const Eigen::VectorXd& Z,
                     const Eigen::MatrixXd& Y, const SpatialGrid& grid,
                     const ParameterDesign& design, const Blocking& blocking,
                     const EmulatorFit& fit, HMode mode, double radius) {
  CalibrationData data = prepare_calibration(grid, design, Y, Z, blocking, fit, mode, radius);
  return calib_cloglik(data, psi);
}

double log_prior(const CalibrationState& psi, const PriorSpec& priors) {
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  if (psi.theta_star.size() != priors.theta_star.size())
    throw DimensionMismatch("theta* dimension != prior dimension");
  double lp = 0.0;
  for (std::size_t d = 0; d < psi.theta_star.size(); ++d) {
    const Interval& iv = priors.theta_star[d];
    if (iv.width() <= 0.0) throw OutOfDomain("degenerate theta* prior interval");
    if (!iv.contains(psi.theta_star[d])) return neg_inf;
    lp -= std::log(iv.width());
  }
  if (priors.phi_d.width() <= 0.0) throw OutOfDomain("degenerate phi_d prior interval");
  if (!priors.phi_d.contains(psi.phi_d)) return neg_inf;
  lp -= std::log(priors.phi_d.width());
  if (psi.kappa_s <= 0.0 || psi.zeta_d <= 0.0 || psi.kappa_d <= 0.0) return neg_inf;
  lp += ig_logpdf(psi.kappa_s, priors.kappa_s);
  lp += ig_logpdf(psi.zeta_d, priors.zeta_d);
  lp += ig_logpdf(psi.kappa_d, priors.kappa_d);
  return lp;
}

double log_posterior(const CalibrationData& data, const PriorSpec& priors,
                     const CalibrationState& psi) {
  double lp = log_prior(psi, priors);
  if (!std::isfinite(lp)) return lp;
  // With subsampled block-mean covariances the conditional covariance is not
  // guaranteed positive definite for extreme parameter combinations (very long
  // discrepancy ranges with large variance). Treat those states as having zero
  // posterior density so the sampler simply rejects them.
  try {
    return lp + calib_cloglik(data, psi);
  } catch (const NotPositiveDefinite&) {
    return -std::numeric_limits<double>::infinity();
  }
}

CalibrationState feasible_start(const CalibrationData& data, const PriorSpec& priors,
                                CalibrationState init) {
  const double lo = priors.phi_d.lo;
  const double hi = priors.phi_d.hi;
  const double fracs[] = {0.5, 0.75, 0.9, 1.0};
  if (std::isfinite(log_posterior(data, priors, init))) return init;
  for (double f : fracs) {
    init.phi_d = lo + f * (hi - lo);
    if (std::isfinite(log_posterior(data, priors, init))) return init;
  }
  return init;  // the sampler reports the infeasible start
}

MhCoreResult mh_sample_core(const std::function<double(const Eigen::VectorXd&)>& log_target,
                            const Eigen::VectorXd& t0, std::size_t steps, const McmcConfig& cfg,
                            Rng& rng) {
  if (steps == 0) throw OutOfDomain("chain length must be positive");
  const auto d = static_cast<std::size_t>(t0.size());

  std::vector<double> scales = cfg.init_scales;
  if (scales.empty()) scales.assign(d, 0.1);
  if (scales.size() != d) throw ConfigError("proposal scale count != coordinate count");
  for (double s : scales)
    if (!(s >= cfg.min_scale)) throw ConfigError("proposal scale below minimum");

  double lt = log_target(t0);
  if (!std::isfinite(lt)) throw InitInfeasible("chain start has non-finite target density");

  MhCoreResult res;
  res.warmup = static_cast<std::size_t>(static_cast<double>(steps) * cfg.warmup_frac);
  res.samples.resize(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(d));
  res.log_target.resize(steps);

  Eigen::VectorXd t = t0;
  std::vector<std::size_t> batch_accepts(d, 0);
  std::size_t post_acc = 0, post_prop = 0;

  for (std::size_t step = 0; step < steps; ++step) {
    bool in_warmup = step < res.warmup;
    for (std::size_t j = 0; j < d; ++j) {
      auto jj = static_cast<Eigen::Index>(j);
      double saved = t[jj];
      t[jj] = saved + scales[j] * rng.normal();
      double ltp = log_target(t);
      // log(1 - U) stays finite for U in [0, 1)
      bool accept = std::isfinite(ltp) && ltp - lt >= std::log(1.0 - rng.uniform());
      if (accept) {
        lt = ltp;
        ++batch_accepts[j];
        if (!in_warmup) ++post_acc;
      } else {
        t[jj] = saved;
      }
      if (!in_warmup) ++post_prop;
    }
    res.samples.row(static_cast<Eigen::Index>(step)) = t;
    res.log_target[step] = lt;

    if (cfg.adapt && in_warmup && (step + 1) % cfg.adapt_batch == 0) {
      for (std::size_t j = 0; j < d; ++j) {
        double rate = static_cast<double>(batch_accepts[j]) / static_cast<double>(cfg.adapt_batch);
        if (rate < cfg.accept_lo)
          scales[j] /= cfg.scale_factor;
        else if (rate > cfg.accept_hi)
          scales[j] *= cfg.scale_factor;
        scales[j] = std::max(scales[j], cfg.min_scale);
        batch_accepts[j] = 0;
      }
      res.scale_history.push_back(scales);
    }
  }
  res.scales = scales;
  res.acceptance =
      post_prop == 0 ? 0.0 : static_cast<double>(post_acc) / static_cast<double>(post_prop);
  return res;
}

namespace {

std::vector<double> default_scales(const PriorSpec& priors, std::size_t q) {
  std::vector<double> s;
  for (std::size_t d = 0; d < q; ++d) {
    double w = d < priors.theta_star.size() ? priors.theta_star[d].width() : 0.0;
    s.push_back(w > 0.0 ? 0.05 * w : 0.1);
  }
  s.insert(s.end(), {0.1, 0.5, 0.01, 0.3});  // log-scale kappa_s, zeta_d, kappa_d, phi_d
  return s;
}

double log_jacobian(const Eigen::VectorXd& t, std::size_t q) {
  auto qq = static_cast<Eigen::Index>(q);
  return t[qq] + t[qq + 1] + t[qq + 2] + t[qq + 3];
}

}  // namespace

PosteriorChain mh_sample(const CalibrationData& data, const PriorSpec& priors,
                         const CalibrationState& init, std::size_t steps, std::uint64_t seed,
                         const McmcConfig& cfg) {
  std::size_t q = data.q();
  if (init.theta_star.size() != q) throw DimensionMismatch("init theta* dimension != design");
  if (!std::isfinite(log_posterior(data, priors, init)))
    throw InitInfeasible("MCMC start has zero posterior density");

  auto target = [&](const Eigen::VectorXd& t) {
    double lp = log_posterior(data, priors, from_unconstrained(t, q));
    return std::isfinite(lp) ? lp + log_jacobian(t, q) : -std::numeric_limits<double>::infinity();
  };

  McmcConfig run_cfg = cfg;
  if (run_cfg.init_scales.empty()) run_cfg.init_scales = default_scales(priors, q);

  Rng rng(seed);
  MhCoreResult core = mh_sample_core(target, to_unconstrained(init), steps, run_cfg, rng);

  PosteriorChain chain;
  chain.samples.reserve(steps);
  chain.log_post.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    Eigen::VectorXd t = core.samples.row(static_cast<Eigen::Index>(i));
    chain.samples.push_back(from_unconstrained(t, q));
    chain.log_post.push_back(core.log_target[i] - log_jacobian(t, q));
  }
  chain.warmup = core.warmup;
  chain.acceptance = core.acceptance;
  chain.proposal_scales = core.scales;
  chain.scale_history = core.scale_history;
  chain.seed = seed;
  for (std::size_t k = 0; k < q + 4; ++k) chain.mcse.push_back(batch_means_mcse(chain.coordinate(k)));
  return chain;
}

std::size_t PosteriorChain::q() const { return samples.empty() ? 0 : samples.front().q(); }

std::vector<double> PosteriorChain::coordinate(std::size_t k) const {
  std::vector<double> out;
  out.reserve(samples.size() - warmup);
  for (std::size_t i = warmup; i < samples.size(); ++i)
    out.push_back(psi_coordinate(samples[i], k));
  return out;
}

CalibrationState posterior_mode(const CalibrationData& data, const PriorSpec& priors,
                                const PosteriorChain& chain, const NelderMeadConfig& opt) {
  if (chain.samples.empty()) throw EmptyChain("cannot locate a mode in an empty chain");
  std::size_t best = 0;
  for (std::size_t i = 1; i < chain.samples.size(); ++i)
    if (chain.log_post[i] > chain.log_post[best]) best = i;

  std::size_t q = data.q();
  auto objective = [&](const Eigen::VectorXd& t) {
    double lp = log_posterior(data, priors, from_unconstrained(t, q));
    return std::isfinite(lp) ? -lp : std::numeric_limits<double>::infinity();
  };
  NelderMeadResult res = nelder_mead(objective, to_unconstrained(chain.samples[best]), opt);
  return from_unconstrained(res.x, q);
}

std::uint64_t resume_seed(std::uint64_t seed, std::size_t steps_done) {
  return seed ^ (0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(steps_done) + 1ull));
}

void save_chain(const std::string& csv_path, const std::string& meta_path,
                const PosteriorChain& chain) {
  if (chain.samples.empty()) throw EmptyChain("refusing to persist an empty chain");
  std::size_t q = chain.q();

  CsvWriter csv(csv_path);
  std::vector<std::string> header = psi_coordinate_names(q);
  header.push_back("log_posterior");
  if (chain.adjusted) header.push_back("adjusted");
  csv.header(header);
  for (std::size_t i = 0; i < chain.samples.size(); ++i) {
    std::vector<std::string> cells;
    for (std::size_t k = 0; k < q + 4; ++k)
      cells.push_back(format_double(psi_coordinate(chain.samples[i], k)));
    cells.push_back(format_double(chain.log_post[i]));
    if (chain.adjusted) cells.push_back("1");
    csv.row(cells);
  }

  if (meta_path.empty()) return;
  nlohmann::json j;
  j["seed"] = chain.seed;
  j["steps"] = chain.samples.size();
  j["warmup"] = chain.warmup;
  j["acceptance"] = chain.acceptance;
  j["proposal_scales"] = chain.proposal_scales;
  j["scale_history"] = chain.scale_history;
  j["mcse"] = chain.mcse;
  j["adjusted"] = chain.adjusted;
  const CalibrationState& last = chain.samples.back();
  j["last_state"] = {{"theta_star", last.theta_star},
                     {"kappa_s", last.kappa_s},
                     {"zeta_d", last.zeta_d},
                     {"kappa_d", last.kappa_d},
                     {"phi_d", last.phi_d}};
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  j["written_at"] = stamp;
  std::ofstream out(meta_path);
  if (!out) throw IoError("cannot write " + meta_path);
  out << j.dump(2) << "\n";
}

PosteriorChain load_chain(const std::string& csv_path, const std::string& meta_path) {
  CsvTable t = read_csv(csv_path);
  std::size_t q = 0;
  while (t.has_col("theta_star_" + std::to_string(q + 1))) ++q;

  PosteriorChain chain;
  chain.adjusted = t.has_col("adjusted");
  std::vector<std::size_t> cols;
  for (const std::string& name : psi_coordinate_names(q)) cols.push_back(t.col(name));
  std::size_t lp_col = t.col("log_posterior");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    CalibrationState psi;
    psi.theta_star.resize(q);
    for (std::size_t k = 0; k < q + 4; ++k) set_psi_coordinate(psi, k, t.num(r, cols[k]));
    chain.samples.push_back(std::move(psi));
    chain.log_post.push_back(t.num(r, lp_col));
  }
  if (chain.samples.empty()) throw EmptyChain(csv_path + " holds no samples");

  if (!meta_path.empty()) {
    std::ifstream in(meta_path);
    if (!in) throw IoError("cannot open " + meta_path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      nlohmann::json j = nlohmann::json::parse(ss.str());
      chain.seed = j.at("seed").get<std::uint64_t>();
      chain.warmup = j.at("warmup").get<std::size_t>();
      chain.acceptance = j.at("acceptance").get<double>();
      chain.proposal_scales = j.at("proposal_scales").get<std::vector<double>>();
      chain.scale_history = j.at("scale_history").get<std::vector<std::vector<double>>>();
      chain.mcse = j.at("mcse").get<std::vector<double>>();
      chain.adjusted = j.value("adjusted", chain.adjusted);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("chain meta json: ") + e.what());
    }
  }
  return chain;
}

}  // namespace blockcal
