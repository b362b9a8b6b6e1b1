#pragma once

#include <cstddef>
#include <vector>

namespace blockcal {

double mean(const std::vector<double>& x);
double sample_sd(const std::vector<double>& x);

// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> x, double q);

// Monte Carlo standard error of the mean by batch means with
// floor(sqrt(N)) batches.
double batch_means_mcse(const std::vector<double>& x);

// Gaussian kernel density estimate with Silverman's bandwidth
// 0.9 min(sd, IQR/1.34) N^{-1/5}.
struct KdeCurve {
  std::vector<double> x;
  std::vector<double> density;

  double mode() const;  // grid point with the highest density
};

double silverman_bandwidth(const std::vector<double>& sample);
KdeCurve kde(const std::vector<double>& sample, std::size_t grid_points = 512);

}  // namespace blockcal
