#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "blockcal/block_cov.hpp"
#include "blockcal/covariance.hpp"
#include "blockcal/errors.hpp"
#include "blockcal/linalg.hpp"
#include "test_support.hpp"

using namespace blockcal;

TEST_CASE("k_theta closed forms") {
  ThetaCovParams p{0.1, 2.0, {1.0}};
  CHECK(k_theta({0.7}, {0.7}, p) == doctest::Approx(2.1));
  CHECK(k_theta({0.0}, {std::log(2.0)}, p) == doctest::Approx(1.0));

  ThetaCovParams p2{0.0, 1.0, {1.0, 2.0}};
  CHECK(k_theta({0.3, 0.1}, {0.0, 0.0}, p2) == doctest::Approx(std::exp(-0.5)));
  CHECK_THROWS_AS(k_theta({0.3}, {0.0, 0.0}, p2), DimensionMismatch);
}

TEST_CASE("k_spatial closed forms and nugget-by-id semantics") {
  Location a{1, 10.0, 20.0, 0};
  SpatialCovParams s{0.01, 4.0, 1e-3};
  CHECK(k_spatial(a, a, s) == doctest::Approx(4.0 * 1.01));

  // phi * g = 1 exactly: quarter circumference with phi tuned to its inverse
  Location o{1, 0.0, 0.0, 0};
  Location q{2, 0.0, 90.0, 0};
  double g = geodesic_distance(o, q);
  SpatialCovParams unit{0.5, 1.0, 1.0 / g};
  CHECK(k_spatial(o, q, unit) == doctest::Approx(std::exp(-1.0)));

  // distinct ids at (numerically) zero distance: nugget excluded
  Location b{2, 10.0, 20.0, 0};
  DiscrepancyCovParams d{0.3, 160000.0, 1e-3};
  CHECK(k_spatial(a, b, d) == doctest::Approx(160000.0));
  CHECK(k_spatial(a, a, d) == doctest::Approx(160000.0 * 1.3));
}

TEST_CASE("kernel symmetry and diagonal dominance") {
  auto grid = testsup::random_grid(15, 31);
  ExpCov cov{0.05, 2.5, 1.0 / 700.0};
  for (std::size_t i = 0; i < grid.n(); ++i)
    for (std::size_t j = 0; j < grid.n(); ++j) {
      double kij = k_spatial(grid.at(i), grid.at(j), cov);
      CHECK(kij == k_spatial(grid.at(j), grid.at(i), cov));
      CHECK(k_spatial(grid.at(i), grid.at(i), cov) >= kij);
    }
}

static Blocking two_blocks(const std::vector<std::vector<int>>& blocks) {
  Blocking b;
  b.blocks = blocks;
  for (auto& blk : b.blocks) {
    b.omitted.push_back(blk.back());
    b.subsample.push_back(blk);
  }
  return b;
}

TEST_CASE("block-mean covariance closed forms") {
  std::vector<Location> pts = {{1, 0.0, 0.0, 0}, {2, 1.0, 1.5, 0}, {3, -2.0, 0.5, 0}};
  SpatialGrid grid(pts);
  ExpCov cov{0.1, 2.0, 1.0 / 300.0};

  // two singleton blocks
  Blocking b1 = two_blocks({{1}, {2}});
  SpatialGrid g2({pts[0], pts[1]});
  Eigen::MatrixXd H = block_mean_cov(g2, b1, cov, HMode::exact);
  CHECK(H(0, 1) == doctest::Approx(k_spatial(pts[0], pts[1], cov)).epsilon(1e-14));
  CHECK(H(0, 0) == doctest::Approx(cov.kappa * (cov.zeta + 1.0)).epsilon(1e-14));

  // one block of two locations: four-term average
  Blocking b2 = two_blocks({{1, 2}});
  Eigen::MatrixXd H2 = block_mean_cov(g2, b2, cov, HMode::exact);
  double k11 = k_spatial(pts[0], pts[0], cov);
  double k12 = k_spatial(pts[0], pts[1], cov);
  double k22 = k_spatial(pts[1], pts[1], cov);
  CHECK(H2(0, 0) == doctest::Approx((k11 + 2 * k12 + k22) / 4.0).epsilon(1e-14));
}

TEST_CASE("block-mean covariance: full subsample equals exact bit-for-bit") {
  auto grid = testsup::random_grid(24, 41);
  Blocking b = random_tessellation(grid, 4, 2, /*m_max=*/1000);  // full subsamples
  ExpCov cov{0.02, 3.0, 1.0 / 500.0};
  Eigen::MatrixXd He = block_mean_cov(grid, b, cov, HMode::exact);
  Eigen::MatrixXd Hs = block_mean_cov(grid, b, cov, HMode::subsample);
  CHECK((He - Hs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("block-mean covariance against a brute-force average") {
  auto grid = testsup::random_grid(18, 43);
  Blocking b = random_tessellation(grid, 3, 8);
  ExpCov cov{0.05, 1.7, 1.0 / 400.0};
  Eigen::MatrixXd H = block_mean_cov(grid, b, cov, HMode::exact);
  for (std::size_t i = 0; i < b.M(); ++i)
    for (std::size_t j = 0; j < b.M(); ++j) {
      double acc = 0.0;
      for (int ida : b.blocks[i])
        for (int idb : b.blocks[j])
          acc += k_spatial(grid.at(grid.pos_of(ida)), grid.at(grid.pos_of(idb)), cov);
      acc /= static_cast<double>(b.blocks[i].size() * b.blocks[j].size());
      CHECK(H(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("within-block pieces: two-point block and dense-slice oracle") {
  std::vector<Location> pts = {{1, 0.0, 0.0, 0}, {2, 1.0, 1.5, 0}};
  SpatialGrid grid(pts);
  Blocking b = two_blocks({{1, 2}});
  ExpCov cov{0.1, 2.0, 1.0 / 300.0};
  auto [Gamma, gamma] = block_internal_cov(grid, b, 0, cov);
  REQUIRE(Gamma.rows() == 1);
  CHECK(Gamma(0, 0) == doctest::Approx(k_spatial(pts[0], pts[0], cov)).epsilon(1e-14));
  double expect = 0.5 * (k_spatial(pts[0], pts[0], cov) + k_spatial(pts[0], pts[1], cov));
  CHECK(gamma(0) == doctest::Approx(expect).epsilon(1e-14));

  // nearly constant kernel: every gamma entry approaches kappa (zeta = 0)
  ExpCov flat{0.0, 3.0, 1e-12};
  auto grid5 = testsup::random_grid(5, 6);
  Blocking b5 = two_blocks({{1, 2, 3, 4, 5}});
  auto [G5, g5] = block_internal_cov(grid5, b5, 0, flat);
  for (Eigen::Index k = 0; k < g5.size(); ++k)
    CHECK(g5(k) == doctest::Approx(3.0).epsilon(1e-6));

  // random block against a dense kernel matrix sliced and row-averaged
  ExpCov c5{0.07, 1.3, 1.0 / 350.0};
  auto [G, g] = block_internal_cov(grid5, b5, 0, c5);
  Eigen::MatrixXd K(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) K(i, j) = k_spatial(grid5.at(i), grid5.at(j), c5);
  // members sorted by id, omitted (id 5) last; non-omitted are positions 0..3
  for (int i = 0; i < 4; ++i) {
    CHECK(g(i) == doctest::Approx(K.row(i).mean()).epsilon(1e-12));
    for (int j = 0; j < 4; ++j) CHECK(G(i, j) == doctest::Approx(K(i, j)).epsilon(1e-12));
  }
}

TEST_CASE("theta cross covariance") {
  auto design = testsup::line_design({0.5, 1.5, 3.0}, 0.0, 4.0);
  ThetaCovParams params{0.0, 2.0, {0.7}};
  ThetaCrossCov tc = theta_cross_cov({1.5}, design, params);
  // zero nugget at a design point: kriging weights are the unit row
  Eigen::VectorXd w = tc.Sigma_theta.ldlt().solve(tc.Sigma_star_theta.transpose());
  CHECK(w(0) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(w(1) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(w(2) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(tc.Sigma_star == doctest::Approx(2.0));

  auto d1 = testsup::line_design({2.0}, 0.0, 4.0);
  ThetaCovParams p1{0.3, 1.1, {0.7}};
  ThetaCrossCov tc1 = theta_cross_cov({0.4}, d1, p1);
  REQUIRE(tc1.Sigma_theta.rows() == 1);
  CHECK(tc1.Sigma_theta(0, 0) == doctest::Approx(1.4));

  // random q = 3 design: SPD verified by plain Cholesky
  ParameterDesign d3;
  Rng rng(77);
  for (int i = 0; i < 6; ++i)
    d3.thetas.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  d3.bounds = {{0, 1}, {0, 1}, {0, 1}};
  ThetaCovParams p3{0.05, 1.0, {0.5, 1.0, 2.0}};
  ThetaCrossCov tc3 = theta_cross_cov({0.2, 0.4, 0.6}, d3, p3);
  Eigen::LLT<Eigen::MatrixXd> llt(tc3.Sigma_theta);
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("kronecker assembly") {
  Eigen::MatrixXd B = testsup::random_matrix(2, 2, 3);
  Eigen::MatrixXd I2 = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd K = kron_assemble(I2, B);
  CHECK((K.topLeftCorner(2, 2) - B).cwiseAbs().maxCoeff() == 0.0);
  CHECK((K.bottomRightCorner(2, 2) - B).cwiseAbs().maxCoeff() == 0.0);
  CHECK(K.topRightCorner(2, 2).cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd A = testsup::random_matrix(2, 2, 5);
  Eigen::MatrixXd KK = kron_assemble(A, B);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(KK(i, j) == doctest::Approx(A(i / 2, j / 2) * B(i % 2, j % 2)));

  // eigenvalues of a Kronecker product of symmetric matrices multiply
  Eigen::MatrixXd As = testsup::random_spd(2, 8);
  Eigen::MatrixXd Bs = testsup::random_spd(3, 9);
  Eigen::VectorXd ea = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(As).eigenvalues();
  Eigen::VectorXd eb = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Bs).eigenvalues();
  std::vector<double> prod;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) prod.push_back(ea(i) * eb(j));
  std::sort(prod.begin(), prod.end());
  Eigen::VectorXd ek =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(kron_assemble(As, Bs)).eigenvalues();
  for (int k = 0; k < 6; ++k) CHECK(ek(k) == doctest::Approx(prod[k]).epsilon(1e-10));
}

TEST_CASE("exact block-mean covariance equals the averaged dense covariance") {
  // For Y with row covariance Sigma_s, cov of block means is B Sigma_s B^T
  auto grid = testsup::random_grid(18, 51);
  Blocking b = random_tessellation(grid, 4, 12);
  ExpCov cov{0.03, 2.2, 1.0 / 600.0};

  Eigen::MatrixXd Ks(grid.n(), grid.n());
  for (std::size_t i = 0; i < grid.n(); ++i)
    for (std::size_t j = 0; j < grid.n(); ++j)
      Ks(i, j) = k_spatial(grid.at(i), grid.at(j), cov);

  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(b.M()),
                                            static_cast<Eigen::Index>(grid.n()));
  for (std::size_t i = 0; i < b.M(); ++i)
    for (int id : b.blocks[i])
      B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(grid.pos_of(id))) =
          1.0 / static_cast<double>(b.blocks[i].size());

  Eigen::MatrixXd H = block_mean_cov(grid, b, cov, HMode::exact);
  CHECK(((B * Ks * B.transpose()) - H).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("jitter ladder factors singular matrices and rejects indefinite ones") {
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 4);  // PSD, rank 1
  Chol c = chol_with_jitter(ones, "ones");
  CHECK(c.jitter > 0.0);
  CHECK(std::isfinite(c.logdet()));

  Eigen::MatrixXd indef = Eigen::MatrixXd::Identity(3, 3);
  indef(2, 2) = -1.0;
  CHECK_THROWS_AS(chol_with_jitter(indef, "indef"), NotPositiveDefinite);
}
