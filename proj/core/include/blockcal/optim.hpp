#pragma once

#include <Eigen/Dense>
#include <functional>

namespace blockcal {

struct NelderMeadConfig {
  int max_evals = 2000;
  double rel_tol = 1e-8;
  double initial_step = 0.5;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double fmin = 0.0;
  bool converged = false;
  int evals = 0;
};

// Derivative-free simplex minimization. Non-finite objective values are
// treated as +inf; OptimizerDiverged if every probe of the initial simplex
// is non-finite.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const NelderMeadConfig& cfg = {});

// Golden-section search for the maximum of a unimodal 1-D function.
double golden_section_max(const std::function<double(double)>& f, double lo, double hi,
                          double tol = 1e-10, int max_iter = 200);

}  // namespace blockcal
