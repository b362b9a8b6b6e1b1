#include "blockcal/stats.hpp"

#include <algorithm>
#include <cmath>

#include "blockcal/errors.hpp"

namespace blockcal {

double mean(const std::vector<double>& x) {
  if (x.empty()) throw EmptyChain("mean of empty sample");
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc / static_cast<double>(x.size());
}

double sample_sd(const std::vector<double>& x) {
  if (x.size() < 2) throw EmptyChain("sd needs at least 2 values");
  double m = mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(x.size() - 1));
}

double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw EmptyChain("quantile of empty sample");
  if (q < 0.0 || q > 1.0) throw OutOfDomain("quantile level outside [0, 1]");
  std::sort(x.begin(), x.end());
  double h = q * static_cast<double>(x.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, x.size() - 1);
  double frac = h - static_cast<double>(lo);
  return x[lo] + frac * (x[hi] - x[lo]);
}

double batch_means_mcse(const std::vector<double>& x) {
  std::size_t n = x.size();
  if (n < 4) throw EmptyChain("batch-means MCSE needs at least 4 samples");
  std::size_t k = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  std::size_t b = n / k;  // batch length; trailing remainder dropped
  std::vector<double> bm(k);
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < b; ++j) acc += x[i * b + j];
    bm[i] = acc / static_cast<double>(b);
  }
  double m = mean(bm);
  double acc = 0.0;
  for (double v : bm) acc += (v - m) * (v - m);
  double var_bm = acc / static_cast<double>(k - 1);
  return std::sqrt(var_bm / static_cast<double>(k));
}

double silverman_bandwidth(const std::vector<double>& sample) {
  double sd = sample_sd(sample);
  double iqr = quantile(sample, 0.75) - quantile(sample, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  if (spread <= 0.0) spread = sd > 0.0 ? sd : 1.0;
  return 0.9 * spread * std::pow(static_cast<double>(sample.size()), -0.2);
}

KdeCurve kde(const std::vector<double>& sample, std::size_t grid_points) {
  if (sample.empty()) throw EmptyChain("kde of empty sample");
  double h = silverman_bandwidth(sample);
  double lo = *std::min_element(sample.begin(), sample.end()) - 3.0 * h;
  double hi = *std::max_element(sample.begin(), sample.end()) + 3.0 * h;
  KdeCurve out;
  out.x.resize(grid_points);
  out.density.resize(grid_points);
  double step = (hi - lo) / static_cast<double>(grid_points - 1);
  double norm = 1.0 / (static_cast<double>(sample.size()) * h * std::sqrt(2.0 * M_PI));
  for (std::size_t i = 0; i < grid_points; ++i) {
    double x = lo + step * static_cast<double>(i);
    double acc = 0.0;
    for (double s : sample) {
      double z = (x - s) / h;
      acc += std::exp(-0.5 * z * z);
    }
    out.x[i] = x;
    out.density[i] = norm * acc;
  }
  return out;
}

double KdeCurve::mode() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < density.size(); ++i)
    if (density[i] > density[best]) best = i;
  return x[best];
}

}  // namespace blockcal
