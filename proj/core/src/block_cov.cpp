#include "blockcal/block_cov.hpp"

#include <algorithm>
#include <cmath>

#include "blockcal/errors.hpp"
#include "blockcal/linalg.hpp"

namespace blockcal {

BlockGeometry make_block_geometry(const SpatialGrid& grid, const Blocking& blocking, HMode mode,
                                  double radius) {
  validate_blocking(grid, blocking);
  BlockGeometry g;
  g.mode = mode;
  g.radius = radius;
  g.members = block_positions(grid, blocking);
  std::size_t M = blocking.M();

  g.sub_rows.resize(M);
  for (std::size_t i = 0; i < M; ++i) {
    for (int id : blocking.subsample[i]) {
      std::size_t pos = grid.pos_of(id);
      auto it = std::find(g.members[i].begin(), g.members[i].end(), pos);
      g.sub_rows[i].push_back(static_cast<std::size_t>(it - g.members[i].begin()));
    }
    // enumerate subsamples in member order so a full subsample reproduces
    // exact mode bit for bit
    std::sort(g.sub_rows[i].begin(), g.sub_rows[i].end());
  }

  g.within.resize(M);
  for (std::size_t i = 0; i < M; ++i) {
    std::size_t ni = g.members[i].size();
    g.within[i].resize(ni, ni);
    for (std::size_t a = 0; a < ni; ++a)
      for (std::size_t b = 0; b < ni; ++b)
        g.within[i](a, b) =
            geodesic_distance(grid.at(g.members[i][a]), grid.at(g.members[i][b]), radius);
  }

  auto mode_positions = [&](std::size_t i) {
    std::vector<std::size_t> out;
    if (mode == HMode::exact) return g.members[i];
    for (std::size_t r : g.sub_rows[i]) out.push_back(g.members[i][r]);
    return out;
  };
  g.cross.resize(M);
  for (std::size_t i = 0; i < M; ++i) {
    auto pi = mode_positions(i);
    for (std::size_t j = i + 1; j < M; ++j) {
      auto pj = mode_positions(j);
      Eigen::MatrixXd D(pi.size(), pj.size());
      for (std::size_t a = 0; a < pi.size(); ++a)
        for (std::size_t b = 0; b < pj.size(); ++b)
          D(a, b) = geodesic_distance(grid.at(pi[a]), grid.at(pj[b]), radius);
      g.cross[i].push_back(std::move(D));
    }
  }
  return g;
}

namespace {

// Sum of exp(-phi d) over a distance matrix, ascending order.
double exp_sum(const Eigen::MatrixXd& D, double phi) {
  double acc = 0.0;
  for (Eigen::Index a = 0; a < D.rows(); ++a)
    for (Eigen::Index b = 0; b < D.cols(); ++b) acc += std::exp(-phi * D(a, b));
  return acc;
}

double weighted_exp_sum(const Eigen::MatrixXd& D, double phi) {
  double acc = 0.0;
  for (Eigen::Index a = 0; a < D.rows(); ++a)
    for (Eigen::Index b = 0; b < D.cols(); ++b) acc += -D(a, b) * std::exp(-phi * D(a, b));
  return acc;
}

// Distance submatrix of the mode-defining set on the diagonal block.
Eigen::MatrixXd diag_mode_dist(const BlockGeometry& g, std::size_t i) {
  if (g.mode == HMode::exact) return g.within[i];
  const auto& rows = g.sub_rows[i];
  Eigen::MatrixXd D(rows.size(), rows.size());
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < rows.size(); ++b) D(a, b) = g.within[i](rows[a], rows[b]);
  return D;
}

}  // namespace

Eigen::MatrixXd mean_cov_from_geometry(const BlockGeometry& g, const ExpCov& cov) {
  std::size_t M = g.M();
  Eigen::MatrixXd H(M, M);
  for (std::size_t i = 0; i < M; ++i) {
    std::size_t szi = g.mode_size(i);
    {
      Eigen::MatrixXd D = diag_mode_dist(g, i);
      double s = exp_sum(D, cov.phi) + cov.zeta * static_cast<double>(szi);
      H(i, i) = cov.kappa * s / (static_cast<double>(szi) * static_cast<double>(szi));
    }
    for (std::size_t j = i + 1; j < M; ++j) {
      std::size_t szj = g.mode_size(j);
      double s = exp_sum(g.cross[i][j - i - 1], cov.phi);
      double v = cov.kappa * s / (static_cast<double>(szi) * static_cast<double>(szj));
      H(i, j) = v;
      H(j, i) = v;
    }
  }
  return H;
}

Eigen::MatrixXd mean_cov_dphi(const BlockGeometry& g, const ExpCov& cov) {
  std::size_t M = g.M();
  Eigen::MatrixXd dH(M, M);
  for (std::size_t i = 0; i < M; ++i) {
    std::size_t szi = g.mode_size(i);
    dH(i, i) = cov.kappa * weighted_exp_sum(diag_mode_dist(g, i), cov.phi) /
               (static_cast<double>(szi) * static_cast<double>(szi));
    for (std::size_t j = i + 1; j < M; ++j) {
      std::size_t szj = g.mode_size(j);
      double v = cov.kappa * weighted_exp_sum(g.cross[i][j - i - 1], cov.phi) /
                 (static_cast<double>(szi) * static_cast<double>(szj));
      dH(i, j) = v;
      dH(j, i) = v;
    }
  }
  return dH;
}

void internal_cov_from_geometry(const BlockGeometry& g, std::size_t i, const ExpCov& cov,
                                Eigen::MatrixXd* Gamma, Eigen::VectorXd* gamma) {
  const Eigen::MatrixXd& D = g.within[i];
  Eigen::Index ni = D.rows();
  if (Gamma) {
    Gamma->resize(ni - 1, ni - 1);
    for (Eigen::Index a = 0; a + 1 < ni; ++a)
      for (Eigen::Index b = 0; b + 1 < ni; ++b)
        (*Gamma)(a, b) = cov.kappa * (std::exp(-cov.phi * D(a, b)) + (a == b ? cov.zeta : 0.0));
  }
  if (gamma) {
    gamma->resize(ni - 1);
    for (Eigen::Index a = 0; a + 1 < ni; ++a) {
      double acc = cov.zeta;  // the a == k term's nugget
      for (Eigen::Index k = 0; k < ni; ++k) acc += std::exp(-cov.phi * D(a, k));
      (*gamma)(a) = cov.kappa * acc / static_cast<double>(ni);
    }
  }
}

void internal_cov_dphi(const BlockGeometry& g, std::size_t i, const ExpCov& cov,
                       Eigen::MatrixXd* dGamma, Eigen::VectorXd* dgamma) {
  const Eigen::MatrixXd& D = g.within[i];
  Eigen::Index ni = D.rows();
  if (dGamma) {
    dGamma->resize(ni - 1, ni - 1);
    for (Eigen::Index a = 0; a + 1 < ni; ++a)
      for (Eigen::Index b = 0; b + 1 < ni; ++b)
        (*dGamma)(a, b) = cov.kappa * -D(a, b) * std::exp(-cov.phi * D(a, b));
  }
  if (dgamma) {
    dgamma->resize(ni - 1);
    for (Eigen::Index a = 0; a + 1 < ni; ++a) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < ni; ++k) acc += -D(a, k) * std::exp(-cov.phi * D(a, k));
      (*dgamma)(a) = cov.kappa * acc / static_cast<double>(ni);
    }
  }
}

Eigen::MatrixXd block_mean_rows(const BlockGeometry& g, const Eigen::MatrixXd& Y) {
  Eigen::MatrixXd B(g.M(), Y.cols());
  for (std::size_t i = 0; i < g.M(); ++i) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(Y.cols());
    for (std::size_t pos : g.members[i]) acc += Y.row(static_cast<Eigen::Index>(pos));
    B.row(static_cast<Eigen::Index>(i)) = acc / static_cast<double>(g.members[i].size());
  }
  return B;
}

Eigen::VectorXd block_mean_vec(const BlockGeometry& g, const Eigen::VectorXd& v) {
  Eigen::VectorXd out(g.M());
  for (std::size_t i = 0; i < g.M(); ++i) {
    double acc = 0.0;
    for (std::size_t pos : g.members[i]) acc += v[static_cast<Eigen::Index>(pos)];
    out[static_cast<Eigen::Index>(i)] = acc / static_cast<double>(g.members[i].size());
  }
  return out;
}

std::vector<Eigen::VectorXd> slice_blocks(const BlockGeometry& g, const Eigen::VectorXd& v) {
  std::vector<Eigen::VectorXd> out(g.M());
  for (std::size_t i = 0; i < g.M(); ++i) {
    out[i].resize(g.members[i].size());
    for (std::size_t a = 0; a < g.members[i].size(); ++a)
      out[i][static_cast<Eigen::Index>(a)] = v[static_cast<Eigen::Index>(g.members[i][a])];
  }
  return out;
}

BlockCovarianceBundle build_block_cov_bundle(const BlockGeometry& g, const ExpCov& xi_s,
                                             const ExpCov& xi_d, const ThetaCrossCov& tc) {
  BlockCovarianceBundle b;
  b.H = mean_cov_from_geometry(g, xi_s);
  b.Omega = mean_cov_from_geometry(g, xi_d);
  std::size_t M = g.M();
  b.Gamma.resize(M);
  b.Lambda.resize(M);
  b.gamma.resize(M);
  b.lambda.resize(M);
  b.tau.resize(M);
  for (std::size_t i = 0; i < M; ++i) {
    internal_cov_from_geometry(g, i, xi_s, &b.Gamma[i], &b.gamma[i]);
    internal_cov_from_geometry(g, i, xi_d, &b.Lambda[i], &b.lambda[i]);
  }
  b.Sigma_theta = tc.Sigma_theta;
  b.Sigma_star_theta = tc.Sigma_star_theta;
  b.Sigma_star = tc.Sigma_star;
  Chol ct = chol_with_jitter(tc.Sigma_theta, "Sigma_theta");
  b.w = ct.solve(tc.Sigma_star_theta.transpose()).transpose();
  b.s2cond = tc.Sigma_star - b.w.dot(tc.Sigma_star_theta);
  for (std::size_t i = 0; i < M; ++i) b.tau[i] = b.s2cond * b.gamma[i];
  return b;
}

}  // namespace blockcal
