#include "blockcal/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "blockcal/errors.hpp"

namespace blockcal {

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const NelderMeadConfig& cfg) {
  const Eigen::Index d = x0.size();
  const double inf = std::numeric_limits<double>::infinity();
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    double v = f(x);
    return std::isfinite(v) ? v : inf;
  };

  std::vector<Eigen::VectorXd> X(d + 1, x0);
  std::vector<double> F(d + 1);
  for (Eigen::Index i = 0; i < d; ++i)
    X[i + 1][i] += cfg.initial_step * std::max(1.0, std::fabs(x0[i]));
  for (Eigen::Index i = 0; i <= d; ++i) F[i] = eval(X[i]);
  if (*std::min_element(F.begin(), F.end()) == inf)
    throw OptimizerDiverged("objective non-finite at every initial simplex vertex");

  auto order = [&]() {
    std::vector<std::size_t> idx(d + 1);
    for (std::size_t i = 0; i <= static_cast<std::size_t>(d); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return F[a] < F[b];
    });
    std::vector<Eigen::VectorXd> X2(d + 1);
    std::vector<double> F2(d + 1);
    for (std::size_t i = 0; i <= static_cast<std::size_t>(d); ++i) {
      X2[i] = X[idx[i]];
      F2[i] = F[idx[i]];
    }
    X.swap(X2);
    F.swap(F2);
  };

  bool converged = false;
  while (evals < cfg.max_evals) {
    order();
    double spread = F[d] - F[0];
    if (spread <= cfg.rel_tol * (std::fabs(F[0]) + cfg.rel_tol) && F[d] < inf) {
      converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i = 0; i < d; ++i) centroid += X[i];
    centroid /= static_cast<double>(d);

    Eigen::VectorXd xr = centroid + (centroid - X[d]);
    double fr = eval(xr);
    if (fr < F[0]) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - X[d]);
      double fe = eval(xe);
      if (fe < fr) {
        X[d] = xe;
        F[d] = fe;
      } else {
        X[d] = xr;
        F[d] = fr;
      }
    } else if (fr < F[d - 1]) {
      X[d] = xr;
      F[d] = fr;
    } else {
      Eigen::VectorXd xc = centroid + 0.5 * (X[d] - centroid);
      double fc = eval(xc);
      if (fc < F[d]) {
        X[d] = xc;
        F[d] = fc;
      } else {
        for (Eigen::Index i = 1; i <= d; ++i) {
          X[i] = X[0] + 0.5 * (X[i] - X[0]);
          F[i] = eval(X[i]);
        }
      }
    }
  }
  order();
  return NelderMeadResult{X[0], F[0], converged, evals};
}

double golden_section_max(const std::function<double(double)>& f, double lo, double hi, double tol,
                          int max_iter) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iter && (b - a) > tol * (1.0 + std::fabs(a) + std::fabs(b)); ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace blockcal
