#include "blockcal/godambe.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "blockcal/errors.hpp"
#include "blockcal/stats.hpp"

namespace blockcal {

Eigen::MatrixXd make_A(const Eigen::VectorXd& a_i, std::size_t n_i) {
  auto rows = static_cast<Eigen::Index>(n_i) - 1;
  if (a_i.size() != rows) throw DimensionMismatch("a_i length must be n_i - 1");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(n_i));
  A.leftCols(rows).setIdentity();
  A -= a_i * Eigen::RowVectorXd::Constant(static_cast<Eigen::Index>(n_i),
                                          1.0 / static_cast<double>(n_i));
  return A;
}

Eigen::VectorXd apply_A(const Eigen::VectorXd& a_i, const Eigen::VectorXd& v) {
  if (v.size() != a_i.size() + 1) throw DimensionMismatch("apply_A: v must have n_i entries");
  return v.head(a_i.size()) - a_i * v.mean();
}

LimitModelBundle build_limit_model(const BlockGeometry& geom, const CalibrationState& psi,
                                   double zeta_theta, double zeta_s, double phi_s,
                                   const Eigen::VectorXd& Ystar) {
  if (psi.kappa_s <= 0.0 || psi.zeta_d <= 0.0 || psi.kappa_d <= 0.0 || psi.phi_d <= 0.0)
    throw OutOfDomain("limit model requires strictly positive scale parameters");
  for (const auto& block : geom.members)
    for (std::size_t pos : block)
      if (pos >= static_cast<std::size_t>(Ystar.size()))
        throw DimensionMismatch("Y* shorter than the grid the blocking refers to");

  LimitModelBundle lm;
  lm.zeta_theta = zeta_theta;
  lm.kappa_s = psi.kappa_s;
  lm.xi_d = psi.xi_d();
  lm.geom = &geom;

  ExpCov cs{zeta_s, psi.kappa_s, phi_s};
  ExpCov cd{psi.zeta_d, psi.kappa_d, psi.phi_d};
  lm.H = mean_cov_from_geometry(geom, cs);
  lm.Omega = mean_cov_from_geometry(geom, cd);
  lm.Sigma_Zbar = zeta_theta * lm.H + lm.Omega;
  lm.Sigma_Zbar_chol = chol_with_jitter(lm.Sigma_Zbar, "block-mean covariance");

  lm.Ybar_star = block_mean_vec(geom, Ystar);
  lm.Ystar_block = slice_blocks(geom, Ystar);

  std::size_t M = geom.M();
  lm.Gamma.resize(M);
  lm.Lambda.resize(M);
  lm.gamma.resize(M);
  lm.lambda.resize(M);
  lm.u.resize(M);
  lm.a.resize(M);
  lm.Sigma_c.resize(M);
  lm.Sigma_c_chol.resize(M);
  for (std::size_t i = 0; i < M; ++i) {
    internal_cov_from_geometry(geom, i, cs, &lm.Gamma[i], &lm.gamma[i]);
    internal_cov_from_geometry(geom, i, cd, &lm.Lambda[i], &lm.lambda[i]);
    lm.u[i] = zeta_theta * lm.gamma[i] + lm.lambda[i];
    auto ii = static_cast<Eigen::Index>(i);
    double sbar_ii = lm.Sigma_Zbar(ii, ii);
    lm.a[i] = lm.u[i] / sbar_ii;
    if (geom.block_size(i) < 2) continue;
    lm.Sigma_c[i] = zeta_theta * lm.Gamma[i] + lm.Lambda[i] -
                    (lm.u[i] * lm.u[i].transpose()) / sbar_ii;
    lm.Sigma_c_chol[i] = chol_with_jitter(lm.Sigma_c[i], "conditional block covariance");
  }
  return lm;
}

double limit_cloglik(const LimitModelBundle& lm, const Eigen::VectorXd& Z) {
  const BlockGeometry& geom = *lm.geom;
  Eigen::VectorXd Zbar = block_mean_vec(geom, Z);
  double total = mvn_logpdf(Zbar, lm.Ybar_star, lm.Sigma_Zbar_chol);
  std::vector<Eigen::VectorXd> Zb = slice_blocks(geom, Z);
  for (std::size_t i = 0; i < geom.M(); ++i) {
    if (geom.block_size(i) < 2) continue;
    Eigen::VectorXd e = apply_A(lm.a[i], Zb[i] - lm.Ystar_block[i]);
    total += mvn_logpdf(e, Eigen::VectorXd::Zero(e.size()), lm.Sigma_c_chol[i]);
  }
  return total;
}

Eigen::VectorXd score_theta(const LimitModelBundle& lm, const Eigen::MatrixXd& dYstar,
                            const Eigen::VectorXd& Z) {
  const BlockGeometry& geom = *lm.geom;
  auto q = dYstar.cols();
  Eigen::VectorXd r = block_mean_vec(geom, Z) - lm.Ybar_star;
  Eigen::VectorXd rs = lm.Sigma_Zbar_chol.solve(r);
  std::vector<Eigen::VectorXd> Zb = slice_blocks(geom, Z);

  Eigen::VectorXd score = Eigen::VectorXd::Zero(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    Eigen::VectorXd col = dYstar.col(j);
    score[j] = block_mean_vec(geom, col).dot(rs);
    std::vector<Eigen::VectorXd> db = slice_blocks(geom, col);
    for (std::size_t i = 0; i < geom.M(); ++i) {
      if (geom.block_size(i) < 2) continue;
      Eigen::VectorXd e = apply_A(lm.a[i], Zb[i] - lm.Ystar_block[i]);
      score[j] += apply_A(lm.a[i], db[i]).dot(lm.Sigma_c_chol[i].solve(e));
    }
  }
  return score;
}

namespace {

Eigen::VectorXd inv_mode_sizes(const BlockGeometry& geom) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(geom.M()));
  for (std::size_t i = 0; i < geom.M(); ++i)
    v[static_cast<Eigen::Index>(i)] = 1.0 / static_cast<double>(geom.mode_size(i));
  return v;
}

}  // namespace

XiScore score_xi(const LimitModelBundle& lm, const Eigen::VectorXd& Z) {
  const BlockGeometry& geom = *lm.geom;
  const std::size_t M = geom.M();
  ExpCov cd{lm.xi_d.zeta_d, lm.xi_d.kappa_d, lm.xi_d.phi_d};

  Eigen::VectorXd r = block_mean_vec(geom, Z) - lm.Ybar_star;
  Eigen::VectorXd rs = lm.Sigma_Zbar_chol.solve(r);
  Eigen::MatrixXd Sbar_inv = lm.Sigma_Zbar_chol.solve_mat(
      Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M)));
  std::vector<Eigen::VectorXd> Zb = slice_blocks(geom, Z);

  // per-coordinate derivative pieces: Sigma_Zbar, u_i, and the unconditional
  // core zeta_theta Gamma_i + Lambda_i, for xi = (kappa_s, zeta_d, kappa_d,
  // phi_d)
  std::vector<Eigen::MatrixXd> dSbar(4);
  dSbar[0] = (lm.zeta_theta / lm.kappa_s) * lm.H;
  dSbar[1] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M));
  dSbar[1].diagonal() = lm.xi_d.kappa_d * inv_mode_sizes(geom);
  dSbar[2] = lm.Omega / lm.xi_d.kappa_d;
  dSbar[3] = mean_cov_dphi(geom, cd);

  XiScore out;
  out.total = Eigen::VectorXd::Zero(4);
  out.data_part = Eigen::VectorXd::Zero(4);
  for (int k = 0; k < 4; ++k) {
    out.data_part[k] = 0.5 * rs.dot(dSbar[k] * rs);
    out.total[k] = -0.5 * Sbar_inv.cwiseProduct(dSbar[k]).sum();
  }

  for (std::size_t i = 0; i < M; ++i) {
    std::size_t ni = geom.block_size(i);
    if (ni < 2) continue;
    auto ii = static_cast<Eigen::Index>(i);
    double sbar_ii = lm.Sigma_Zbar(ii, ii);
    Eigen::VectorXd m = Zb[i] - lm.Ystar_block[i];
    double mbar = m.mean();
    Eigen::VectorXd e = apply_A(lm.a[i], m);
    Eigen::VectorXd f = lm.Sigma_c_chol[i].solve(e);
    auto rows = static_cast<Eigen::Index>(ni) - 1;
    Eigen::MatrixXd Sc_inv =
        lm.Sigma_c_chol[i].solve_mat(Eigen::MatrixXd::Identity(rows, rows));

    Eigen::MatrixXd dGamma_d, dLambda_d;
    Eigen::VectorXd dlambda_d;
    internal_cov_dphi(geom, i, cd, &dLambda_d, &dlambda_d);
    for (int k = 0; k < 4; ++k) {
      Eigen::VectorXd du;
      Eigen::MatrixXd dCore;
      switch (k) {
        case 0:
          du = (lm.zeta_theta / lm.kappa_s) * lm.gamma[i];
          dCore = (lm.zeta_theta / lm.kappa_s) * lm.Gamma[i];
          break;
        case 1:
          du = Eigen::VectorXd::Constant(rows, lm.xi_d.kappa_d / static_cast<double>(ni));
          dCore = lm.xi_d.kappa_d * Eigen::MatrixXd::Identity(rows, rows);
          break;
        case 2:
          du = lm.lambda[i] / lm.xi_d.kappa_d;
          dCore = lm.Lambda[i] / lm.xi_d.kappa_d;
          break;
        default:
          du = dlambda_d;
          dCore = dLambda_d;
          break;
      }
      double dsbar_ii = dSbar[k](ii, ii);
      Eigen::VectorXd da = du / sbar_ii - lm.u[i] * (dsbar_ii / (sbar_ii * sbar_ii));
      Eigen::VectorXd de = -da * mbar;
      Eigen::MatrixXd dSc = dCore -
                            (du * lm.u[i].transpose() + lm.u[i] * du.transpose()) / sbar_ii +
                            (lm.u[i] * lm.u[i].transpose()) * (dsbar_ii / (sbar_ii * sbar_ii));
      out.data_part[k] += 0.5 * f.dot(dSc * f) - de.dot(f);
      out.total[k] += -0.5 * Sc_inv.cwiseProduct(dSc).sum();
    }
  }
  out.total += out.data_part;
  return out;
}

DerivativeBundle emulator_derivatives(const EmulatorFit& fit, const ParameterDesign& design,
                                      const Eigen::MatrixXd& Y,
                                      const std::vector<double>& theta_star) {
  design.validate();
  std::size_t p = design.p(), q = design.q();
  if (theta_star.size() != q) throw DimensionMismatch("theta* dimension != design dimension");
  if (static_cast<std::size_t>(Y.cols()) != p)
    throw DimensionMismatch("ensemble columns != design size");
  const ThetaCovParams& th = fit.xi_theta;

  Eigen::VectorXd cross(static_cast<Eigen::Index>(p));
  Eigen::MatrixXd dcross(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j) {
    double expo = 0.0;
    for (std::size_t d = 0; d < q; ++d) {
      double diff = theta_star[d] - design.thetas[j][d];
      if (std::fabs(diff) < 1e-12)
        throw NonDifferentiablePoint("theta* coincides with design coordinate " +
                                     std::to_string(d + 1) + " of setting " +
                                     std::to_string(j + 1));
      expo += th.phi_theta[d] * std::fabs(diff);
    }
    double e = th.kappa_theta * std::exp(-expo);
    cross[static_cast<Eigen::Index>(j)] = e;
    for (std::size_t d = 0; d < q; ++d) {
      double sign = theta_star[d] > design.thetas[j][d] ? 1.0 : -1.0;
      dcross(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j)) =
          -th.phi_theta[d] * sign * e;
    }
  }

  Eigen::MatrixXd St(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < p; ++b)
      St(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          k_theta(design.thetas[a], design.thetas[b], th);
  Chol Lt = chol_with_jitter(St, "Sigma_theta");

  Eigen::MatrixXd rhs(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q) + 1);
  rhs.col(0) = cross;
  rhs.rightCols(static_cast<Eigen::Index>(q)) = dcross.transpose();
  Eigen::MatrixXd W = Lt.solve_mat(rhs);

  DerivativeBundle out;
  out.dSigma_cross = dcross;
  out.Ystar = Y * W.col(0);
  out.dYstar = Y * W.rightCols(static_cast<Eigen::Index>(q));
  return out;
}

Eigen::MatrixXd compute_Q_star(const LimitModelBundle& lm, const Eigen::MatrixXd& dYstar) {
  const BlockGeometry& geom = *lm.geom;
  auto q = dYstar.cols();
  Eigen::MatrixXd Db(static_cast<Eigen::Index>(geom.M()), q);
  for (Eigen::Index j = 0; j < q; ++j) Db.col(j) = block_mean_vec(geom, dYstar.col(j));
  Eigen::MatrixXd Q = Db.transpose() * lm.Sigma_Zbar_chol.solve_mat(Db);
  for (std::size_t i = 0; i < geom.M(); ++i) {
    if (geom.block_size(i) < 2) continue;
    Eigen::MatrixXd E(static_cast<Eigen::Index>(geom.block_size(i)) - 1, q);
    for (Eigen::Index j = 0; j < q; ++j) {
      Eigen::VectorXd col = dYstar.col(j);
      E.col(j) = apply_A(lm.a[i], slice_blocks(geom, col)[i]);
    }
    Q += E.transpose() * lm.Sigma_c_chol[i].solve_mat(E);
  }
  return 0.5 * (Q + Q.transpose());
}

Eigen::MatrixXd score_loadings(const LimitModelBundle& lm, const Eigen::MatrixXd& dYstar) {
  const BlockGeometry& geom = *lm.geom;
  auto q = dYstar.cols();
  std::size_t n = 0;
  for (std::size_t i = 0; i < geom.M(); ++i) n += geom.block_size(i);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), q);

  for (Eigen::Index j = 0; j < q; ++j) {
    Eigen::VectorXd col = dYstar.col(j);
    Eigen::VectorXd vbar = lm.Sigma_Zbar_chol.solve(block_mean_vec(geom, col));
    std::vector<Eigen::VectorXd> db = slice_blocks(geom, col);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < geom.M(); ++i) {
      std::size_t ni = geom.block_size(i);
      auto base = static_cast<Eigen::Index>(offset);
      double w = vbar[static_cast<Eigen::Index>(i)] / static_cast<double>(ni);
      for (std::size_t r = 0; r < ni; ++r) L(base + static_cast<Eigen::Index>(r), j) += w;
      if (ni >= 2) {
        // A^T y = [y; 0] - (a.y / n_i) 1
        Eigen::VectorXd y = lm.Sigma_c_chol[i].solve(apply_A(lm.a[i], db[i]));
        double shift = lm.a[i].dot(y) / static_cast<double>(ni);
        for (std::size_t r = 0; r + 1 < ni; ++r)
          L(base + static_cast<Eigen::Index>(r), j) += y[static_cast<Eigen::Index>(r)];
        for (std::size_t r = 0; r < ni; ++r) L(base + static_cast<Eigen::Index>(r), j) -= shift;
      }
      offset += ni;
    }
  }
  return L;
}

Eigen::MatrixXd dense_limit_cov(const SpatialGrid& grid, const BlockGeometry& geom,
                                const CalibrationState& psi, double zeta_theta, double zeta_s,
                                double phi_s) {
  std::vector<std::size_t> order;
  for (const auto& block : geom.members) order.insert(order.end(), block.begin(), block.end());
  auto n = static_cast<Eigen::Index>(order.size());
  ExpCov cs{zeta_s, psi.kappa_s, phi_s};
  ExpCov cd{psi.zeta_d, psi.kappa_d, psi.phi_d};
  Eigen::MatrixXd S(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a; b < n; ++b) {
      const Location& la = grid.at(order[static_cast<std::size_t>(a)]);
      const Location& lb = grid.at(order[static_cast<std::size_t>(b)]);
      double v = zeta_theta * k_spatial(la, lb, cs, geom.radius) +
                 k_spatial(la, lb, cd, geom.radius);
      S(a, b) = v;
      S(b, a) = v;
    }
  return S;
}

Eigen::MatrixXd compute_P_star(const LimitModelBundle& lm, const Eigen::MatrixXd& dYstar,
                               const Eigen::MatrixXd& Sigma_Z) {
  Eigen::MatrixXd L = score_loadings(lm, dYstar);
  if (L.rows() != Sigma_Z.rows()) throw DimensionMismatch("Sigma_Z size != per-block total");
  Eigen::MatrixXd P = L.transpose() * Sigma_Z * L;
  return 0.5 * (P + P.transpose());
}

GodambeMatrices godambe_matrices(const Eigen::MatrixXd& P_star, const Eigen::MatrixXd& Q_star) {
  if (P_star.rows() != P_star.cols() || Q_star.rows() != Q_star.cols() ||
      P_star.rows() != Q_star.rows())
    throw DimensionMismatch("P* and Q* must be square of equal size");
  Eigen::MatrixXd P = 0.5 * (P_star + P_star.transpose());
  Eigen::MatrixXd Q = 0.5 * (Q_star + Q_star.transpose());
  chol_with_jitter(P, "P*");  // positive-definiteness gate
  chol_with_jitter(Q, "Q*");

  GodambeMatrices gm;
  gm.P_star = P;
  gm.Q_star = Q;
  Eigen::MatrixXd G = Q * sym_inverse(P) * Q;
  gm.G = 0.5 * (G + G.transpose());
  gm.C = sym_inverse(Q) * sym_sqrt(P) * sym_sqrt(Q);
  gm.D = sym_inv_sqrt(Q) * sym_sqrt(gm.G);
  return gm;
}

namespace {

Eigen::VectorXd theta_map(const Eigen::MatrixXd& T, const std::vector<double>& theta,
                          const std::vector<double>& theta_hat) {
  auto q = static_cast<Eigen::Index>(theta.size());
  Eigen::VectorXd d(q);
  for (Eigen::Index k = 0; k < q; ++k)
    d[k] = theta[static_cast<std::size_t>(k)] - theta_hat[static_cast<std::size_t>(k)];
  Eigen::VectorXd mapped = T * d;
  for (Eigen::Index k = 0; k < q; ++k) mapped[k] += theta_hat[static_cast<std::size_t>(k)];
  return mapped;
}

}  // namespace

PosteriorChain open_faced_adjust(const PosteriorChain& chain, const GodambeMatrices& gm,
                                 const CalibrationState& psi_hat) {
  if (chain.samples.empty()) throw EmptyChain("cannot adjust an empty chain");
  std::size_t q = chain.q();
  if (static_cast<std::size_t>(gm.C.rows()) != q)
    throw DimensionMismatch("adjustment matrix size != theta* dimension");
  if (psi_hat.theta_star.size() != q)
    throw DimensionMismatch("psi_hat theta* dimension != chain dimension");

  PosteriorChain out = chain;
  out.adjusted = true;
  for (auto& psi : out.samples) {
    Eigen::VectorXd mapped = theta_map(gm.C, psi.theta_star, psi_hat.theta_star);
    for (std::size_t k = 0; k < q; ++k)
      psi.theta_star[k] = mapped[static_cast<Eigen::Index>(k)];
  }
  for (std::size_t k = 0; k < out.mcse.size(); ++k)
    out.mcse[k] = batch_means_mcse(out.coordinate(k));
  return out;
}

std::vector<CalibrationState> curvature_adjust(const std::vector<CalibrationState>& points,
                                               const GodambeMatrices& gm,
                                               const CalibrationState& psi_hat) {
  std::vector<CalibrationState> out = points;
  for (auto& psi : out) {
    if (psi.theta_star.size() != psi_hat.theta_star.size())
      throw DimensionMismatch("psi_hat theta* dimension != point dimension");
    Eigen::VectorXd mapped = theta_map(gm.D, psi.theta_star, psi_hat.theta_star);
    for (std::size_t k = 0; k < psi.theta_star.size(); ++k)
      psi.theta_star[k] = mapped[static_cast<Eigen::Index>(k)];
  }
  return out;
}

PosteriorChain curvature_adjusted_chain(const CalibrationData& data, const PriorSpec& priors,
                                        const GodambeMatrices& gm, const CalibrationState& psi_hat,
                                        const CalibrationState& init, std::size_t steps,
                                        std::uint64_t seed, const McmcConfig& cfg) {
  std::size_t q = data.q();
  if (static_cast<std::size_t>(gm.D.rows()) != q)
    throw DimensionMismatch("adjustment matrix size != theta* dimension");

  auto jac = [q](const Eigen::VectorXd& t) {
    auto qq = static_cast<Eigen::Index>(q);
    return t[qq] + t[qq + 1] + t[qq + 2] + t[qq + 3];
  };
  auto log_post = [&](const CalibrationState& psi) {
    double lp = log_prior(psi, priors);
    if (!std::isfinite(lp)) return lp;
    CalibrationState mapped = psi;
    Eigen::VectorXd th = theta_map(gm.D, psi.theta_star, psi_hat.theta_star);
    for (std::size_t k = 0; k < q; ++k) mapped.theta_star[k] = th[static_cast<Eigen::Index>(k)];
    try {
      return lp + calib_cloglik(data, mapped);
    } catch (const NotPositiveDefinite&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  auto target = [&](const Eigen::VectorXd& t) {
    double lp = log_post(from_unconstrained(t, q));
    return std::isfinite(lp) ? lp + jac(t) : -std::numeric_limits<double>::infinity();
  };

  if (!std::isfinite(log_post(init)))
    throw InitInfeasible("curvature-adjusted start has zero posterior density");

  McmcConfig run_cfg = cfg;
  if (run_cfg.init_scales.empty()) {
    run_cfg.init_scales.clear();
    for (std::size_t d = 0; d < q; ++d) {
      double w = d < priors.theta_star.size() ? priors.theta_star[d].width() : 0.0;
      run_cfg.init_scales.push_back(w > 0.0 ? 0.05 * w : 0.1);
    }
    run_cfg.init_scales.insert(run_cfg.init_scales.end(), {0.1, 0.5, 0.01, 0.3});
  }

  Rng rng(seed);
  MhCoreResult core = mh_sample_core(target, to_unconstrained(init), steps, run_cfg, rng);

  PosteriorChain chain;
  chain.adjusted = true;
  for (std::size_t i = 0; i < steps; ++i) {
    Eigen::VectorXd t = core.samples.row(static_cast<Eigen::Index>(i));
    chain.samples.push_back(from_unconstrained(t, q));
    chain.log_post.push_back(core.log_target[i] - jac(t));
  }
  chain.warmup = core.warmup;
  chain.acceptance = core.acceptance;
  chain.proposal_scales = core.scales;
  chain.scale_history = core.scale_history;
  chain.seed = seed;
  for (std::size_t k = 0; k < q + 4; ++k)
    chain.mcse.push_back(batch_means_mcse(chain.coordinate(k)));
  return chain;
}

Eigen::MatrixXd chain_curvature_Q(const PosteriorChain& chain) {
  std::size_t q = chain.q();
  std::size_t kept = chain.samples.size() - chain.warmup;
  if (kept < 2) throw EmptyChain("need at least two retained samples for curvature");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(kept), static_cast<Eigen::Index>(q));
  for (std::size_t i = 0; i < kept; ++i)
    for (std::size_t k = 0; k < q; ++k)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          chain.samples[chain.warmup + i].theta_star[k];
  Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(kept - 1);
  return sym_inverse(cov);
}

namespace {

nlohmann::json mat_json(const Eigen::MatrixXd& A) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd json_mat(const nlohmann::json& j) {
  auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return {};
  auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd A(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c)
      A(i, c) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(c)).get<double>();
  return A;
}

}  // namespace

std::string godambe_to_json(const GodambeMatrices& gm) {
  nlohmann::json j;
  j["dim"] = gm.P_star.rows();
  j["P_star"] = mat_json(gm.P_star);
  j["Q_star"] = mat_json(gm.Q_star);
  j["G"] = mat_json(gm.G);
  j["C"] = mat_json(gm.C);
  j["D"] = mat_json(gm.D);
  return j.dump(2) + "\n";
}

GodambeMatrices godambe_from_json(const std::string& text) {
  GodambeMatrices gm;
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    gm.P_star = json_mat(j.at("P_star"));
    gm.Q_star = json_mat(j.at("Q_star"));
    gm.G = json_mat(j.at("G"));
    gm.C = json_mat(j.at("C"));
    gm.D = json_mat(j.at("D"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("godambe json: ") + e.what());
  }
  return gm;
}

void save_godambe(const std::string& path, const GodambeMatrices& gm) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << godambe_to_json(gm);
}

GodambeMatrices load_godambe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return godambe_from_json(ss.str());
}

}  // namespace blockcal
