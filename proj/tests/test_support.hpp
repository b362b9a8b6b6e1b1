#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "blockcal/covariance.hpp"
#include "blockcal/geo.hpp"
#include "blockcal/rng.hpp"

namespace testsup {

// Scattered points, optionally split into two region bands, spread over a
// few hundred km so exponential ranges around 1e-3 /km are informative.
inline blockcal::SpatialGrid random_grid(std::size_t n, std::uint64_t seed, int regions = 1,
                                         double span_deg = 8.0) {
  blockcal::Rng rng(seed);
  std::vector<blockcal::Location> locs;
  locs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    blockcal::Location l;
    l.index = static_cast<int>(i + 1);
    l.lat = rng.uniform(-span_deg, span_deg);
    l.lon = rng.uniform(-span_deg, span_deg);
    l.region = regions > 1 ? static_cast<int>(i % static_cast<std::size_t>(regions)) : 0;
    if (regions > 1 && l.region == 1) l.lon += 4.0 * span_deg;  // separate the bands
    locs.push_back(l);
  }
  return blockcal::SpatialGrid(std::move(locs));
}

inline blockcal::ParameterDesign line_design(const std::vector<double>& thetas, double lo,
                                             double hi) {
  blockcal::ParameterDesign d;
  for (double t : thetas) d.thetas.push_back({t});
  d.bounds = {{lo, hi}};
  return d;
}

inline Eigen::MatrixXd random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  blockcal::Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
  return m;
}

inline Eigen::MatrixXd random_spd(std::size_t n, std::uint64_t seed) {
  Eigen::MatrixXd A = random_matrix(n, n, seed);
  Eigen::MatrixXd S = A * A.transpose();
  S.diagonal().array() += 0.5;
  return S;
}

}  // namespace testsup
